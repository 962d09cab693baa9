"""Gaussian-copula generation of temporally correlated net-load scenarios.

Marginal forecast distributions arrive as per-lead-time quantile tables.
Temporal dependence across lead times is imposed in Gaussian space through an
exponential covariance, and the correlated normals are mapped back through the
inverse quantile functions. The module also derives PV-surplus series from
net load and scores scenario sets with the p-variogram score used when tuning
the covariance range parameter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

__all__ = [
    "MarginalForecast",
    "CopulaConfig",
    "ScenarioSet",
    "build_covariance",
    "sample_gaussian_copula",
    "transform_to_scenarios",
    "generate_scenarios",
    "pv_surplus",
    "variogram_score",
    "read_marginals_csv",
    "write_marginals_csv",
]

# Diagonal jitter applied once if Cholesky fails; the exponential covariance is
# positive definite in exact arithmetic, so this only guards round-off.
_CHOLESKY_JITTER = 1e-10


@dataclass(frozen=True)
class MarginalForecast:
    """Quantile table of the net-load distribution for one lead time [kW]."""

    lead_time: int
    probabilities: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if probs.ndim != 1 or probs.shape != vals.shape or probs.size == 0:
            raise ValueError("quantile table needs matching 1-D probabilities and values")
        if np.any(probs <= 0.0) or np.any(probs >= 1.0):
            raise ValueError("quantile probabilities must lie strictly inside (0, 1)")
        if np.any(np.diff(probs) <= 0.0):
            raise ValueError("quantile probabilities must be strictly increasing")
        if np.any(np.diff(vals) < 0.0):
            raise ValueError("quantile values must be non-decreasing")
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "values", vals)

    def inverse(self, u):
        """Inverse quantile function: piecewise linear between knots, clamped
        to the extreme provided quantiles outside the table's range."""
        return np.interp(u, self.probabilities, self.values)


@dataclass(frozen=True)
class CopulaConfig:
    """Scenario-generation settings: horizon, draw count, covariance range, seed."""

    horizon: int
    count: int
    nu_cov: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.count < 1:
            raise ValueError("scenario count must be at least 1")
        if not self.nu_cov > 0.0:
            raise ValueError("covariance range nu_cov must be positive")


@dataclass(frozen=True)
class ScenarioSet:
    """M x T matrix of net-load scenarios [kW], one scenario per row."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.size == 0:
            raise ValueError("scenario matrix must be 2-D and non-empty")
        if not np.all(np.isfinite(vals)):
            raise ValueError("scenario matrix contains non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "ScenarioSet":
        """Column slice [start, stop) as a new scenario set."""
        if not 0 <= start < stop <= self.horizon:
            raise ValueError(f"window [{start}, {stop}) outside horizon {self.horizon}")
        return ScenarioSet(self.values[:, start:stop].copy())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"h{k}" for k in range(1, self.horizon + 1)])
            for row in self.values:
                writer.writerow([f"{x:.6f}" for x in row])

    @classmethod
    def read_csv(cls, path) -> "ScenarioSet":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or not header or not header[0].startswith("h"):
                raise ValueError(f"{path}: missing scenario header h1..hT")
            rows = [[float(x) for x in row] for row in reader if row]
        if not rows:
            raise ValueError(f"{path}: no scenario rows")
        return cls(np.array(rows, dtype=float))


def build_covariance(horizon: int, nu_cov: float) -> np.ndarray:
    """Exponential covariance over lead times: entry (k1, k2) = exp(-|k1-k2|/nu)."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not nu_cov > 0.0:
        raise ValueError("covariance range nu_cov must be positive")
    lags = np.abs(np.subtract.outer(np.arange(horizon), np.arange(horizon)))
    return np.exp(-lags / nu_cov)


def sample_gaussian_copula(cov: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Draw `count` rows from a zero-mean multivariate normal with covariance `cov`.

    Uses a Cholesky factor so a fixed seed yields a bit-identical matrix.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(cov + _CHOLESKY_JITTER * np.eye(cov.shape[0]))
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((count, cov.shape[0]))
    return normals @ chol.T


def transform_to_scenarios(z: np.ndarray, marginals: list[MarginalForecast]) -> ScenarioSet:
    """Map correlated standard normals into net-load space, column by column,
    through each lead time's inverse quantile function."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("z must be an M x T matrix")
    if z.shape[1] != len(marginals):
        raise ValueError(f"{z.shape[1]} columns but {len(marginals)} marginals")
    out = np.empty_like(z)
    for k, marginal in enumerate(marginals):
        out[:, k] = marginal.inverse(ndtr(z[:, k]))
    return ScenarioSet(out)


def generate_scenarios(marginals: list[MarginalForecast], config: CopulaConfig) -> ScenarioSet:
    """Full pipeline: covariance, correlated normals, inverse-quantile mapping."""
    if len(marginals) != config.horizon:
        raise ValueError(f"config horizon {config.horizon} but {len(marginals)} marginals")
    ordered = sorted(marginals, key=lambda m: m.lead_time)
    cov = build_covariance(config.horizon, config.nu_cov)
    z = sample_gaussian_copula(cov, config.count, config.seed)
    return transform_to_scenarios(z, ordered)


def pv_surplus(net_load: np.ndarray) -> np.ndarray:
    """PV generation exceeding inflexible load: max(0, -net_load), elementwise."""
    return np.maximum(0.0, -np.asarray(net_load, dtype=float))


def variogram_score(scenarios, observed: np.ndarray, p: float = 0.5) -> float:
    """p-variogram score of a scenario set against one observed trajectory.

    Sum over lead-time pairs i < j of
    (|obs_i - obs_j|^p - mean_m |y^m_i - y^m_j|^p)^2. Lower is better.
    """
    if not p > 0.0:
        raise ValueError("variogram order p must be positive")
    values = scenarios.values if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios, dtype=float)
    observed = np.asarray(observed, dtype=float)
    horizon = values.shape[1]
    if horizon < 2 or observed.shape != (horizon,):
        raise ValueError("variogram score needs T >= 2 and a matching observation")
    score = 0.0
    for i in range(horizon - 1):
        obs_term = np.abs(observed[i] - observed[i + 1 :]) ** p
        ens_term = np.mean(np.abs(values[:, i, None] - values[:, i + 1 :]) ** p, axis=0)
        score += float(np.sum((obs_term - ens_term) ** 2))
    return score


def read_marginals_csv(path) -> list[MarginalForecast]:
    """Read quantile tables from CSV rows `t,p,q`, one row per quantile knot."""
    path = Path(path)
    tables: dict[int, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"t", "p", "q"} - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header t,p,q")
        for row in reader:
            tables.setdefault(int(row["t"]), []).append((float(row["p"]), float(row["q"])))
    if not tables:
        raise ValueError(f"{path}: no quantile rows")
    marginals = []
    for lead_time in sorted(tables):
        knots = sorted(tables[lead_time])
        marginals.append(
            MarginalForecast(
                lead_time=lead_time,
                probabilities=np.array([k[0] for k in knots]),
                values=np.array([k[1] for k in knots]),
            )
        )
    return marginals


def write_marginals_csv(path, marginals: list[MarginalForecast]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "p", "q"])
        for marginal in marginals:
            for prob, value in zip(marginal.probabilities, marginal.values):
                writer.writerow([marginal.lead_time, f"{prob:g}", f"{value:.6f}"])
