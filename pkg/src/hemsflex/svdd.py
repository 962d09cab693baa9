"""One-class support-vector boundary over normalized trajectory space.

Trains the nu-parameterized one-class dual with a coordinate-pair (SMO-style)
solver, keeps only the support vectors and their coefficients, and classifies
new trajectories by comparing their radius in kernel space against the
boundary radius. The serialized model carries nothing but support vectors,
coefficients, kernel settings, normalization bounds, and the threshold, so it
can be shared without exposing raw household data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hems import FlexTrajectory

__all__ = [
    "KernelSpec",
    "TrainingConfig",
    "SvddModel",
    "ConvergenceError",
    "kernel_eval",
    "kernel_matrix",
    "derive_bounds",
    "normalize",
    "train",
    "fit_trajectories",
    "radius_squared",
    "classify",
    "serialize",
    "deserialize",
    "save_model",
    "load_model",
]

KERNEL_KINDS = ("rbf", "poly", "sigmoid")

# Slack absorbing the dual-solver tolerance so boundary support vectors land
# inside the sphere they define.
_BOUNDARY_SLACK = 1e-5

# Dual coefficients below this fraction of the box bound are treated as zero.
_ALPHA_CUTOFF = 1e-8


class ConvergenceError(RuntimeError):
    """Dual solver failed to reach the tolerance within its iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and coefficients: rbf, poly, or sigmoid."""

    kind: str
    gamma: float
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.kind == "rbf" and not self.gamma > 0.0:
            raise ValueError("rbf kernel needs gamma > 0")
        if self.degree < 1:
            raise ValueError("polynomial degree must be at least 1")


@dataclass(frozen=True)
class TrainingConfig:
    """Dual-solver settings: training-error bound nu, tolerance, iteration cap."""

    nu: float = 0.15
    tolerance: float = 1e-6
    max_passes: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie strictly inside (0, 1)")
        if not self.tolerance > 0.0 or self.max_passes < 1:
            raise ValueError("tolerance must be positive and max_passes at least 1")


@dataclass
class SvddModel:
    """Boundary surrogate: support vectors with coefficients summing to one,
    the kernel, per-coordinate normalization bounds, the squared boundary
    radius, and the cached coefficient-kernel double sum."""

    support_vectors: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    norm_bounds: np.ndarray
    radius2_threshold: float
    const_term: float
    nu: float

    @property
    def n_support(self) -> int:
        return self.support_vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.support_vectors.shape[1]


def kernel_eval(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Kernel value for a single vector pair."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"kernel arguments differ in shape: {a.shape} vs {b.shape}")
    if spec.kind == "rbf":
        diff = a - b
        return float(np.exp(-spec.gamma * np.dot(diff, diff)))
    if spec.kind == "poly":
        return float((spec.gamma * np.dot(a, b) + spec.coef0) ** spec.degree)
    return float(np.tanh(spec.gamma * np.dot(a, b) + spec.coef0))


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kernel values for all row pairs of A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"kernel arguments differ in dimension: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "rbf":
        sq = (
            np.sum(A**2, axis=1)[:, None]
            + np.sum(B**2, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    if spec.kind == "poly":
        return (spec.gamma * (A @ B.T) + spec.coef0) ** spec.degree
    return np.tanh(spec.gamma * (A @ B.T) + spec.coef0)


def derive_bounds(vectors: np.ndarray) -> np.ndarray:
    """Per-coordinate (min, max) over a training matrix, shaped (d, 2)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    return np.stack([vectors.min(axis=0), vectors.max(axis=0)], axis=1)


def normalize(traj, bounds: np.ndarray) -> np.ndarray:
    """Min-max scale a trajectory (or flat vector) into [0, 1] per coordinate.

    Out-of-range inputs clip to the unit interval; degenerate coordinates
    (equal min and max) map to 0.5.
    """
    vector = traj.as_vector() if isinstance(traj, FlexTrajectory) else np.asarray(traj, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if vector.shape[0] != bounds.shape[0]:
        raise ValueError(f"vector has {vector.shape[0]} coordinates, bounds {bounds.shape[0]}")
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    degenerate = span <= 0.0
    scaled = np.where(degenerate, 0.5, (vector - lo) / np.where(degenerate, 1.0, span))
    return np.clip(scaled, 0.0, 1.0)


def _solve_dual(K: np.ndarray, nu: float, tolerance: float, max_passes: int) -> np.ndarray:
    """Minimize 0.5 a'Ka over the capped simplex {0 <= a_i <= 1/(nu N),
    sum a = 1} by repeatedly optimizing the maximal violating pair."""
    n = K.shape[0]
    cap = 1.0 / (nu * n)
    alpha = np.full(n, 1.0 / n)
    grad = K @ alpha

    gap = np.inf
    for _ in range(max_passes):
        movable_up = alpha < cap * (1.0 - 1e-12)
        movable_down = alpha > cap * 1e-12
        if not movable_up.any() or not movable_down.any():
            break
        i = int(np.argmin(np.where(movable_up, grad, np.inf)))
        j = int(np.argmax(np.where(movable_down, grad, -np.inf)))
        gap = grad[j] - grad[i]
        if gap <= tolerance:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        step_max = min(cap - alpha[i], alpha[j])
        if eta > 1e-12:
            step = min(step_max, gap / eta)
        else:
            # Indefinite direction: the objective decreases all the way, take
            # the full box step.
            step = step_max
        alpha[i] += step
        alpha[j] -= step
        grad += step * (K[:, i] - K[:, j])
    else:
        raise ConvergenceError(
            f"dual solver stopped after {max_passes} passes with KKT gap {gap:.3e}",
            residual=float(gap),
        )
    return alpha


def train(
    vectors: np.ndarray,
    kernel: KernelSpec,
    cfg: TrainingConfig,
    norm_bounds: np.ndarray | None = None,
) -> SvddModel:
    """Fit the boundary on normalized training vectors (one row per sample).

    Support vectors are the rows with nonzero dual coefficients; coincident
    rows are merged with their coefficients summed. The squared boundary
    radius is the mean radius over boundary support vectors (those strictly
    inside the box), or the smallest support-vector radius if every
    coefficient sits at the box bound. `norm_bounds` records the raw-space
    scaling the caller applied; without it the bounds of the (already
    normalized) inputs are stored.
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise ValueError("training needs at least 2 vectors")
    K = kernel_matrix(kernel, X, X)
    alpha = _solve_dual(K, cfg.nu, cfg.tolerance, cfg.max_passes)

    cap = 1.0 / (cfg.nu * n)
    sv_mask = alpha > cap * _ALPHA_CUTOFF
    sv_alpha = alpha[sv_mask]
    sv_alpha = sv_alpha / sv_alpha.sum()
    sv_x = X[sv_mask]

    K_sv = K[np.ix_(sv_mask.nonzero()[0], sv_mask.nonzero()[0])]
    const_term = float(sv_alpha @ K_sv @ sv_alpha)
    radii = 1.0 - 2.0 * (K_sv @ sv_alpha) + const_term

    # Boundary support vectors sit strictly below the box bound.
    boundary = alpha[sv_mask] < cap * (1.0 - 1e-6)
    if boundary.any():
        radius2_threshold = float(np.mean(radii[boundary]))
    else:
        radius2_threshold = float(np.min(radii))

    # Merge coincident support vectors; the kernel cannot tell them apart.
    unique_x, inverse = np.unique(sv_x, axis=0, return_inverse=True)
    if unique_x.shape[0] != sv_x.shape[0]:
        merged = np.zeros(unique_x.shape[0])
        np.add.at(merged, inverse, sv_alpha)
        sv_x, sv_alpha = unique_x, merged
        const_term = float(sv_alpha @ kernel_matrix(kernel, sv_x, sv_x) @ sv_alpha)

    return SvddModel(
        support_vectors=sv_x,
        coefficients=sv_alpha,
        kernel=kernel,
        norm_bounds=np.asarray(norm_bounds, dtype=float) if norm_bounds is not None else derive_bounds(X),
        radius2_threshold=radius2_threshold,
        const_term=const_term,
        nu=cfg.nu,
    )


def fit_trajectories(trajectories, kernel: KernelSpec, cfg: TrainingConfig) -> SvddModel:
    """Convenience wrapper: derive raw-space bounds from the trajectories,
    normalize, and train; the model then classifies raw trajectories directly."""
    vectors = np.stack([t.as_vector() for t in trajectories])
    bounds = derive_bounds(vectors)
    normalized = np.stack([normalize(v, bounds) for v in vectors])
    return train(normalized, kernel, cfg, norm_bounds=bounds)


def radius_squared(model: SvddModel, x: np.ndarray) -> float:
    """Squared kernel-space radius of a normalized vector relative to the
    sphere center: 1 - 2 sum_i b_i k(x_i, x) + sum_ij b_i b_j k(x_i, x_j)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != model.dimension:
        raise ValueError(f"vector has {x.shape[0]} coordinates, model expects {model.dimension}")
    k_vec = kernel_matrix(model.kernel, model.support_vectors, x[None, :])[:, 0]
    return float(1.0 - 2.0 * np.dot(model.coefficients, k_vec) + model.const_term)


def classify(model: SvddModel, traj) -> bool:
    """True when the trajectory's radius stays within the boundary radius.

    Raw trajectories are normalized with the model's stored bounds first; a
    vector of matching dimension is assumed already normalized.
    """
    if isinstance(traj, FlexTrajectory):
        x = normalize(traj, model.norm_bounds)
    else:
        x = np.asarray(traj, dtype=float)
    return radius_squared(model, x) <= model.radius2_threshold + _BOUNDARY_SLACK


def serialize(model: SvddModel) -> str:
    """JSON text with full-precision numbers; contains only the surrogate."""
    doc = {
        "kernel": {
            "kind": model.kernel.kind,
            "gamma": model.kernel.gamma,
            "degree": model.kernel.degree,
            "coef0": model.kernel.coef0,
        },
        "nu": model.nu,
        "norm_bounds": [[float(lo), float(hi)] for lo, hi in model.norm_bounds],
        "support_vectors": [[float(v) for v in row] for row in model.support_vectors],
        "coefficients": [float(c) for c in model.coefficients],
        "radius2_threshold": model.radius2_threshold,
        "const_term": model.const_term,
    }
    return json.dumps(doc, indent=2) + "\n"


def deserialize(text: str) -> SvddModel:
    """Parse a serialized model, reporting which field is malformed."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from exc
    for key in ("kernel", "nu", "norm_bounds", "support_vectors", "coefficients",
                "radius2_threshold", "const_term"):
        if key not in doc:
            raise ValueError(f"model file: missing field {key!r}")
    kdoc = doc["kernel"]
    for key in ("kind", "gamma"):
        if key not in kdoc:
            raise ValueError(f"model file: missing field kernel.{key}")
    try:
        kernel = KernelSpec(
            kind=kdoc["kind"],
            gamma=float(kdoc["gamma"]),
            degree=int(kdoc.get("degree", 3)),
            coef0=float(kdoc.get("coef0", 0.0)),
        )
        support_vectors = np.array(doc["support_vectors"], dtype=float)
        coefficients = np.array(doc["coefficients"], dtype=float)
        norm_bounds = np.array(doc["norm_bounds"], dtype=float)
        model = SvddModel(
            support_vectors=np.atleast_2d(support_vectors),
            coefficients=coefficients,
            kernel=kernel,
            norm_bounds=norm_bounds,
            radius2_threshold=float(doc["radius2_threshold"]),
            const_term=float(doc["const_term"]),
            nu=float(doc["nu"]),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"model file: malformed field ({exc})") from exc
    if model.support_vectors.shape[0] != model.coefficients.shape[0]:
        raise ValueError("model file: support_vectors and coefficients disagree in count")
    if model.norm_bounds.ndim != 2 or model.norm_bounds.shape != (model.dimension, 2):
        raise ValueError("model file: norm_bounds must hold one (min, max) pair per coordinate")
    return model


def save_model(model: SvddModel, path) -> None:
    Path(path).write_text(serialize(model))


def load_model(path) -> SvddModel:
    return deserialize(Path(path).read_text())
