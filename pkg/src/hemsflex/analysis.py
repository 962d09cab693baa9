"""Validation tooling: independent feasibility oracle, infeasible-set
sampling, PCA diversity metrics, classification reports, and the semi-random
baseline constructor used for diversity comparisons.

The oracle re-derives every feasibility rule step by step in plain Python,
sharing no stepping code with the simulation module, so the two routes can be
checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epso import FeasibleSet, robust_threshold
from .hems import (
    EPS,
    FlexTrajectory,
    HemsConfig,
    _absorption,
    battery_step,
    ewh_step,
    feasible_power_range,
    update_capacity,
    CapacityTracker,
)
from .scenarios import ScenarioSet
from .svdd import SvddModel, classify

__all__ = [
    "ConfusionReport",
    "DiversityReport",
    "InfeasibleSet",
    "oracle_check",
    "generate_infeasible_set",
    "pca_diversity",
    "confusion_table",
    "semi_random_baseline",
]

# Constraint slack of the independent route; deliberately restated here rather
# than shared so the oracle stays self-contained.
_ORACLE_EPS = 1e-9


def _scenario_compliant(p_bat, p_ewh, net_load, draws, cfg: HemsConfig, dt: float) -> bool:
    """Step one trajectory through one net-load scenario and apply every rule.

    Written as a flat scalar loop on purpose: this is the reference route and
    must not lean on the vectorized simulation helpers.
    """
    bat = cfg.battery
    ewh = cfg.ewh
    soc = bat.soc_init
    theta = ewh.theta_init
    band = bat.soc_max - bat.soc_min
    cap = band
    knee_soc = bat.taper_knee * bat.capacity
    floor_power = bat.taper_floor * bat.p_charge_max

    for h in range(len(p_bat)):
        surplus = max(0.0, -net_load[h])
        net = max(0.0, surplus - p_ewh[h])
        if surplus > 0.0:
            supposed = min(min(net, bat.p_charge_max), max(cap, 0.0) / dt)
        else:
            supposed = 0.0
        if supposed > _ORACLE_EPS and p_bat[h] < -_ORACLE_EPS:
            return False

        p_eff = p_bat[h] + supposed
        s = min(max(soc, 0.0), bat.capacity)
        if s <= knee_soc:
            limit = bat.p_charge_max
        else:
            limit = bat.p_charge_max + (s - knee_soc) / (bat.capacity - knee_soc) * (
                floor_power - bat.p_charge_max
            )
        if p_eff > limit + _ORACLE_EPS:
            return False

        if p_eff > 0.0:
            soc = soc + bat.efficiency * p_eff * dt
        elif p_eff < 0.0:
            soc = soc + p_eff * dt / bat.efficiency
        if soc > bat.soc_max + _ORACLE_EPS or soc < bat.soc_min - _ORACLE_EPS:
            return False

        theta = theta + (dt / ewh.thermal_capacity) * (
            -ewh.alpha_mag * (theta - ewh.theta_house)
            - ewh.c_p * draws[h] * (ewh.theta_des - ewh.theta_inl)
            + p_ewh[h]
        )
        if theta < ewh.theta_min - _ORACLE_EPS or theta > ewh.theta_max + _ORACLE_EPS:
            return False

        if surplus > 0.0:
            cap = max(0.0, cap - min(net, bat.p_charge_max) * dt)
        else:
            cap = min(cap + bat.p_discharge_max * dt, band)
    return True


def oracle_check(traj: FlexTrajectory, scenarios: ScenarioSet, cfg: HemsConfig, dt: float) -> int:
    """Count the scenarios in which the trajectory passes every rule."""
    draws = cfg.ewh.draws(traj.horizon).tolist()
    p_bat = traj.p_bat.tolist()
    p_ewh = traj.p_ewh.tolist()
    count = 0
    for row in scenarios.values:
        if _scenario_compliant(p_bat, p_ewh, row.tolist(), draws, cfg, dt):
            count += 1
    return count


def _robust_under_oracle(
    traj: FlexTrajectory, scenarios: ScenarioSet, cfg: HemsConfig, dt: float, threshold: int
) -> bool:
    """Early-exit robustness decision; equivalent to oracle_check >= threshold."""
    draws = cfg.ewh.draws(traj.horizon).tolist()
    p_bat = traj.p_bat.tolist()
    p_ewh = traj.p_ewh.tolist()
    compliant = 0
    remaining = scenarios.count
    for row in scenarios.values:
        remaining -= 1
        if _scenario_compliant(p_bat, p_ewh, row.tolist(), draws, cfg, dt):
            compliant += 1
            if compliant >= threshold:
                return True
        if compliant + remaining < threshold:
            return False
    return compliant >= threshold


@dataclass
class InfeasibleSet:
    """Rejection-sampled non-robust trajectories plus sampling statistics."""

    trajectories: list[FlexTrajectory]
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.trajectories) / self.attempts if self.attempts else 0.0


def generate_infeasible_set(
    count: int,
    cfg: HemsConfig,
    scenarios: ScenarioSet,
    seed: int,
    dt: float,
    tau_scen: float = 0.9,
    max_attempts: int | None = None,
) -> InfeasibleSet:
    """Draw trajectories uniformly inside the power band and keep the ones the
    oracle rejects as robustly feasible. Near-miss rather than absurd samples
    by construction, since the band matches the search space."""
    bat = cfg.battery
    p_nom = cfg.ewh.p_nom
    horizon = scenarios.horizon
    threshold = robust_threshold(scenarios.count, tau_scen)
    if max_attempts is None:
        max_attempts = 200 * count
    rng = np.random.default_rng(seed)
    kept: list[FlexTrajectory] = []
    attempts = 0
    while len(kept) < count:
        if attempts >= max_attempts:
            raise ValueError(
                f"only {len(kept)} of {count} non-robust trajectories found in "
                f"{max_attempts} draws; the instance is too permissive"
            )
        attempts += 1
        traj = FlexTrajectory(
            p_bat=rng.uniform(-bat.p_discharge_max, bat.p_charge_max, horizon),
            p_ewh=np.where(rng.random(horizon) < 0.5, p_nom, 0.0),
        )
        if not _robust_under_oracle(traj, scenarios, cfg, dt, threshold):
            kept.append(traj)
    return InfeasibleSet(trajectories=kept, attempts=attempts)


@dataclass
class DiversityReport:
    """Principal-component counts needed to reach explained-variance levels."""

    counts: dict[float, int]
    explained_fractions: np.ndarray
    degenerate: bool = False

    @property
    def n_components_50(self) -> int:
        return self.counts[0.5]

    @property
    def n_components_80(self) -> int:
        return self.counts[0.8]


def pca_diversity(trajectories, thresholds: tuple[float, ...] = (0.5, 0.8)) -> DiversityReport:
    """Eigendecompose the covariance of the combined trajectories and report
    the minimal component counts reaching each cumulative-variance threshold."""
    if isinstance(trajectories, FeasibleSet):
        trajectories = trajectories.trajectories
    if len(trajectories) < 2:
        raise ValueError("diversity analysis needs at least 2 trajectories")
    X = np.stack([t.combined for t in trajectories])
    cov = np.cov(X, rowvar=False)
    eigvals = np.linalg.eigvalsh(np.atleast_2d(cov))[::-1]
    eigvals = np.maximum(eigvals, 0.0)
    total = float(eigvals.sum())
    if total <= 1e-15:
        return DiversityReport(
            counts={t: 1 for t in thresholds},
            explained_fractions=np.zeros_like(eigvals),
            degenerate=True,
        )
    fractions = eigvals / total
    cumulative = np.cumsum(fractions)
    counts = {}
    for threshold in thresholds:
        counts[threshold] = int(np.searchsorted(cumulative, threshold - 1e-12) + 1)
    return DiversityReport(counts=counts, explained_fractions=fractions, degenerate=False)


@dataclass
class ConfusionReport:
    """Classification outcome of one model on a feasible and an infeasible set."""

    kernel_kind: str
    gamma: float
    nu: float
    feasible_correct: int
    feasible_incorrect: int
    infeasible_correct: int
    infeasible_incorrect: int

    @property
    def feasible_error_pct(self) -> float:
        total = self.feasible_correct + self.feasible_incorrect
        return 100.0 * self.feasible_incorrect / total if total else 0.0

    @property
    def infeasible_error_pct(self) -> float:
        total = self.infeasible_correct + self.infeasible_incorrect
        return 100.0 * self.infeasible_incorrect / total if total else 0.0


def confusion_table(
    model: SvddModel,
    feasible: list[FlexTrajectory],
    infeasible: list[FlexTrajectory],
) -> ConfusionReport:
    """Classify both sets and tabulate correct, incorrect, and error shares."""
    feas_hits = sum(1 for t in feasible if classify(model, t))
    infeas_hits = sum(1 for t in infeasible if not classify(model, t))
    return ConfusionReport(
        kernel_kind=model.kernel.kind,
        gamma=model.kernel.gamma,
        nu=model.nu,
        feasible_correct=feas_hits,
        feasible_incorrect=len(feasible) - feas_hits,
        infeasible_correct=infeas_hits,
        infeasible_incorrect=len(infeasible) - infeas_hits,
    )


def _greedy_member(
    cfg: HemsConfig,
    surplus: np.ndarray,
    draws: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    max_restarts: int = 200,
) -> FlexTrajectory:
    """One feasible trajectory built step by step: the EWH state is drawn
    among the temperature-safe options and battery power uniformly from the
    currently feasible single-step range. Dead ends restart."""
    horizon = surplus.shape[0]
    bat, ewh = cfg.battery, cfg.ewh
    for _ in range(max_restarts):
        p_bat = np.empty(horizon)
        p_ewh = np.empty(horizon)
        soc = bat.soc_init
        theta = ewh.theta_init
        tracker = CapacityTracker.fresh(bat)
        dead_end = False
        for h in range(horizon):
            options = [
                p
                for p in (0.0, ewh.p_nom)
                if ewh.theta_min - EPS <= ewh_step(theta, p, draws[h], dt, ewh) <= ewh.theta_max + EPS
            ]
            if not options:
                dead_end = True
                break
            p_ewh[h] = options[int(rng.integers(len(options)))]
            absorb = float(_absorption(surplus[h], p_ewh[h], tracker.capacity, dt, bat))
            lo, hi = feasible_power_range(soc, cfg, dt, absorb)
            if hi < lo:
                dead_end = True
                break
            p_bat[h] = rng.uniform(lo, hi)
            soc = battery_step(soc, p_bat[h] + absorb, dt, bat)
            theta = ewh_step(theta, p_ewh[h], draws[h], dt, ewh)
            tracker = update_capacity(tracker, surplus[h], p_ewh[h], bat, dt)
        if not dead_end:
            return FlexTrajectory(p_bat=p_bat, p_ewh=p_ewh)
    raise ValueError(f"greedy construction kept dead-ending after {max_restarts} restarts")


def semi_random_baseline(
    count: int,
    cfg: HemsConfig,
    scenario: np.ndarray,
    seed: int,
    dt: float,
    max_attempts: int | None = None,
) -> FeasibleSet:
    """Semi-random feasible set against a single reference scenario, built the
    way the earlier generation of this pipeline did: seed one greedily
    constructed feasible schedule, then walk a mutation chain that resamples a
    single step at a time (battery power from the step's feasible range, an
    occasional EWH flip) and keeps the mutant when the whole trajectory stays
    violation-free. Serves as the diversity comparison baseline only."""
    scenario = np.asarray(scenario, dtype=float)
    horizon = scenario.shape[0]
    surplus = np.maximum(0.0, -scenario)
    draws = cfg.ewh.draws(horizon)
    bat, ewh = cfg.battery, cfg.ewh
    if max_attempts is None:
        max_attempts = 200 * count + 1000
    rng = np.random.default_rng(seed)

    feasible = FeasibleSet(horizon=horizon)
    current = _greedy_member(cfg, surplus, draws, dt, rng)
    feasible.add(current, fitness=1)
    net_list = scenario.tolist()
    draws_list = draws.tolist()

    attempts = 0
    while len(feasible) < count:
        if attempts >= max_attempts:
            raise ValueError(
                f"baseline chain stalled: {len(feasible)} of {count} trajectories "
                f"after {max_attempts} mutation attempts"
            )
        attempts += 1
        h = int(rng.integers(horizon))
        mutant_bat = current.p_bat.copy()
        mutant_ewh = current.p_ewh.copy()
        if rng.random() < 0.3:
            mutant_ewh[h] = ewh.p_nom - mutant_ewh[h]
        # state just before step h under the current schedule
        soc = bat.soc_init
        theta = ewh.theta_init
        tracker = CapacityTracker.fresh(bat)
        for k in range(h):
            absorb = float(_absorption(surplus[k], mutant_ewh[k], tracker.capacity, dt, bat))
            soc = battery_step(soc, mutant_bat[k] + absorb, dt, bat)
            theta = ewh_step(theta, mutant_ewh[k], draws[k], dt, ewh)
            tracker = update_capacity(tracker, surplus[k], mutant_ewh[k], bat, dt)
        absorb = float(_absorption(surplus[h], mutant_ewh[h], tracker.capacity, dt, bat))
        lo, hi = feasible_power_range(soc, cfg, dt, absorb)
        if hi < lo:
            continue
        mutant_bat[h] = rng.uniform(lo, hi)
        if _scenario_compliant(
            mutant_bat.tolist(), mutant_ewh.tolist(), net_list, draws_list, cfg, dt
        ):
            current = FlexTrajectory(p_bat=mutant_bat, p_ewh=mutant_ewh)
            feasible.add(current, fitness=1)
    return feasible
