"""Physical models of the HEMS flexible assets and trajectory feasibility.

Battery with a SoC-dependent charging taper and one-way efficiency, electric
water heater as an on/off thermal load, per-step constraint bookkeeping,
PV-surplus accommodation rules with the remaining-headroom tracker, and
repair of trajectories that discharge while surplus should be absorbed.

Sign convention: positive battery power charges (consumes), negative
discharges (injects). EWH power is 0 or its nominal rating.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "EPS",
    "BatteryConfig",
    "EwhConfig",
    "HemsConfig",
    "FlexTrajectory",
    "SimulationResult",
    "CapacityTracker",
    "max_charge_power",
    "battery_step",
    "ewh_step",
    "simulate",
    "update_capacity",
    "pv_accommodation",
    "repair_trajectory",
    "feasible_power_range",
    "read_draw_profile_csv",
    "write_draw_profile_csv",
]

# Slack for constraint comparisons so float round-off never flags a violation.
EPS = 1e-9


@dataclass(frozen=True)
class BatteryConfig:
    """Battery parameters: energy in kWh, power in kW, efficiency one-way."""

    capacity: float
    p_charge_max: float
    p_discharge_max: float
    soc_init: float
    efficiency: float = 0.925
    soc_min_frac: float = 0.15
    taper_knee: float = 0.8
    taper_floor: float = 0.2

    def __post_init__(self):
        if self.capacity <= 0.0 or self.p_charge_max <= 0.0 or self.p_discharge_max <= 0.0:
            raise ValueError("capacity and power ratings must be positive")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")
        if not 0.0 <= self.soc_min_frac * self.capacity <= self.soc_init <= self.capacity:
            raise ValueError("need 0 <= soc_min <= soc_init <= capacity")
        if not 0.0 < self.taper_floor <= 1.0:
            raise ValueError("taper_floor must lie in (0, 1]")
        if not 0.0 < self.taper_knee < 1.0:
            raise ValueError("taper_knee must lie in (0, 1)")

    @property
    def soc_min(self) -> float:
        return self.soc_min_frac * self.capacity

    @property
    def soc_max(self) -> float:
        return self.capacity

    @property
    def absorption_band(self) -> float:
        """Maximum energy the battery can dedicate to PV absorption [kWh]."""
        return self.soc_max - self.soc_min


@dataclass(frozen=True)
class EwhConfig:
    """Electric water heater thermal parameters.

    thermal_capacity in kWh/degC, alpha_mag is the standing-loss admittance
    magnitude in kWh/degC per degC*h, c_p the water specific heat in
    kWh/(L*degC). draw_profile holds litres of hot water drawn per step.
    """

    p_nom: float
    theta_min: float
    theta_max: float
    theta_init: float
    thermal_capacity: float = 0.117
    alpha_mag: float = 9.42e-4
    theta_house: float = 20.0
    c_p: float = 1.163e-3
    theta_des: float = 38.0
    theta_inl: float = 17.0
    draw_profile: np.ndarray | None = None

    def __post_init__(self):
        if self.p_nom <= 0.0:
            raise ValueError("nominal EWH power must be positive")
        if self.thermal_capacity <= 0.0:
            raise ValueError("thermal capacity must be positive")
        if not self.theta_min <= self.theta_init <= self.theta_max:
            raise ValueError("need theta_min <= theta_init <= theta_max")
        if self.draw_profile is not None:
            draws = np.asarray(self.draw_profile, dtype=float)
            if draws.ndim != 1 or np.any(draws < 0.0):
                raise ValueError("draw profile must be a 1-D vector of non-negative litres")
            object.__setattr__(self, "draw_profile", draws)

    def draws(self, horizon: int) -> np.ndarray:
        """Draw profile for a horizon; missing profile means no consumption."""
        if self.draw_profile is None:
            return np.zeros(horizon)
        if self.draw_profile.shape[0] != horizon:
            raise ValueError(
                f"draw profile has {self.draw_profile.shape[0]} steps, trajectory has {horizon}"
            )
        return self.draw_profile


@dataclass(frozen=True)
class HemsConfig:
    """Bundle of the two flexible assets behind one HEMS."""

    battery: BatteryConfig
    ewh: EwhConfig

    @classmethod
    def from_json(cls, path, draw_profile: np.ndarray | None = None) -> "HemsConfig":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        try:
            battery = BatteryConfig(**doc["battery"])
            ewh_fields = dict(doc["ewh"])
        except KeyError as exc:
            raise ValueError(f"{path}: missing section {exc}") from exc
        except TypeError as exc:
            raise ValueError(f"{path}: bad battery field ({exc})") from exc
        if draw_profile is not None:
            ewh_fields["draw_profile"] = draw_profile
        try:
            ewh = EwhConfig(**ewh_fields)
        except TypeError as exc:
            raise ValueError(f"{path}: bad ewh field ({exc})") from exc
        return cls(battery=battery, ewh=ewh)

    def to_json(self, path) -> None:
        doc = {
            "battery": {
                "capacity": self.battery.capacity,
                "p_charge_max": self.battery.p_charge_max,
                "p_discharge_max": self.battery.p_discharge_max,
                "soc_init": self.battery.soc_init,
                "efficiency": self.battery.efficiency,
                "soc_min_frac": self.battery.soc_min_frac,
                "taper_knee": self.battery.taper_knee,
                "taper_floor": self.battery.taper_floor,
            },
            "ewh": {
                "p_nom": self.ewh.p_nom,
                "theta_min": self.ewh.theta_min,
                "theta_max": self.ewh.theta_max,
                "theta_init": self.ewh.theta_init,
                "thermal_capacity": self.ewh.thermal_capacity,
                "alpha_mag": self.ewh.alpha_mag,
                "theta_house": self.ewh.theta_house,
                "c_p": self.ewh.c_p,
                "theta_des": self.ewh.theta_des,
                "theta_inl": self.ewh.theta_inl,
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class FlexTrajectory:
    """One flexibility offer: per-step battery power and EWH power [kW]."""

    p_bat: np.ndarray
    p_ewh: np.ndarray

    def __post_init__(self):
        p_bat = np.asarray(self.p_bat, dtype=float)
        p_ewh = np.asarray(self.p_ewh, dtype=float)
        if p_bat.ndim != 1 or p_bat.shape != p_ewh.shape or p_bat.size == 0:
            raise ValueError("p_bat and p_ewh must be matching non-empty 1-D vectors")
        object.__setattr__(self, "p_bat", p_bat)
        object.__setattr__(self, "p_ewh", p_ewh)

    @property
    def horizon(self) -> int:
        return self.p_bat.shape[0]

    @property
    def combined(self) -> np.ndarray:
        """Net HEMS deviation per step: battery plus EWH power."""
        return self.p_bat + self.p_ewh

    def window(self, start: int, stop: int) -> "FlexTrajectory":
        return FlexTrajectory(self.p_bat[start:stop].copy(), self.p_ewh[start:stop].copy())

    def as_vector(self) -> np.ndarray:
        """Flat [p_bat | p_ewh] layout used by the boundary model."""
        return np.concatenate([self.p_bat, self.p_ewh])


@dataclass
class SimulationResult:
    """Stepped states plus the per-step violation bookkeeping.

    `violations` maps constraint names (soc_max, soc_min, temp, charge_rate)
    to boolean per-step flags; `penalty` counts the raised flags, so
    penalty == 0 exactly when no constraint was violated anywhere.
    """

    soc: np.ndarray
    theta: np.ndarray
    penalty: int
    violations: dict[str, np.ndarray]

    @property
    def feasible(self) -> bool:
        return self.penalty == 0


@dataclass
class CapacityTracker:
    """Running estimate of the PV-absorption headroom the battery is supposed
    to keep available [kWh]. Starts at the full SoC band, is consumed during
    surplus steps (charge-rate limited) and recovers at the discharge rate
    during surplus-free steps, never exceeding the band."""

    capacity: float
    band: float

    @classmethod
    def fresh(cls, cfg: BatteryConfig) -> "CapacityTracker":
        return cls(capacity=cfg.absorption_band, band=cfg.absorption_band)


def max_charge_power(soc: float, cfg: BatteryConfig) -> float:
    """SoC-dependent charging limit: nominal up to the taper knee, then a
    linear descent to the floor fraction of nominal at full capacity."""
    if not -EPS <= soc <= cfg.capacity + EPS:
        raise ValueError(f"soc {soc} outside [0, {cfg.capacity}]")
    return _charge_limit(soc, cfg)


def _charge_limit(soc, cfg: BatteryConfig):
    """Taper evaluated on SoC clipped into [0, capacity]; works elementwise."""
    knee_soc = cfg.taper_knee * cfg.capacity
    floor_power = cfg.taper_floor * cfg.p_charge_max
    s = np.minimum(np.maximum(soc, 0.0), cfg.capacity)
    return np.where(
        s <= knee_soc,
        cfg.p_charge_max,
        cfg.p_charge_max + (s - knee_soc) / (cfg.capacity - knee_soc) * (floor_power - cfg.p_charge_max),
    )


def battery_step(soc: float, p_bat: float, dt: float, cfg: BatteryConfig) -> float:
    """One energy-balance step: efficiency applies one-way, on the flow side."""
    if p_bat > 0.0:
        return soc + cfg.efficiency * p_bat * dt
    if p_bat < 0.0:
        return soc + p_bat * dt / cfg.efficiency
    return soc


def ewh_step(theta: float, p_ewh: float, v: float, dt: float, cfg: EwhConfig) -> float:
    """One tank-temperature step: standing losses toward the house temperature,
    draw replacement losses, and the heating element input."""
    return theta + (dt / cfg.thermal_capacity) * (
        -cfg.alpha_mag * (theta - cfg.theta_house)
        - cfg.c_p * v * (cfg.theta_des - cfg.theta_inl)
        + p_ewh
    )


def _absorption(surplus_h, p_ewh_h, capacity, dt, cfg: BatteryConfig):
    """Surplus power the battery is supposed to absorb this step: the surplus
    net of EWH consumption, limited by the nominal charge rate and by the
    remaining tracker capacity. Works on scalars and on scenario vectors."""
    net = np.maximum(0.0, surplus_h - p_ewh_h)
    supposed = np.minimum(np.minimum(net, cfg.p_charge_max), np.maximum(capacity, 0.0) / dt)
    return np.where(surplus_h > 0.0, supposed, 0.0)


def update_capacity(
    tracker: CapacityTracker, surplus_h: float, p_ewh_h: float, cfg: BatteryConfig, dt: float
) -> CapacityTracker:
    """Advance the headroom tracker by one step.

    Surplus step: decrease by the net surplus energy, charge-rate limited,
    floored at zero. Surplus-free step: recover at the discharge rate, capped
    at the full band.
    """
    if surplus_h > 0.0:
        net = max(0.0, surplus_h - p_ewh_h)
        decrement = min(net, cfg.p_charge_max) * dt
        capacity = max(0.0, tracker.capacity - decrement)
    else:
        capacity = min(tracker.capacity + cfg.p_discharge_max * dt, tracker.band)
    return CapacityTracker(capacity=capacity, band=tracker.band)


def simulate(
    traj: FlexTrajectory,
    surplus: np.ndarray,
    cfg: HemsConfig,
    dt: float,
    draws: np.ndarray | None = None,
) -> SimulationResult:
    """Step both assets through the horizon and flag constraint violations.

    The battery absorbs the supposed PV surplus on top of the trajectory's own
    schedule, so a trajectory that has not kept headroom free shows up as a
    soc_max violation, and combined charging beyond the tapered limit as a
    charge_rate violation.
    """
    surplus = np.asarray(surplus, dtype=float)
    bat, ewh = cfg.battery, cfg.ewh
    horizon = traj.horizon
    if surplus.shape != (horizon,):
        raise ValueError(f"surplus has shape {surplus.shape}, trajectory horizon is {horizon}")
    if draws is None:
        draws = ewh.draws(horizon)
    else:
        draws = np.asarray(draws, dtype=float)
        if draws.shape != (horizon,):
            raise ValueError(f"draw profile has shape {draws.shape}, trajectory horizon is {horizon}")

    flags = {
        name: np.zeros(horizon, dtype=bool) for name in ("soc_max", "soc_min", "temp", "charge_rate")
    }
    soc_path = np.empty(horizon)
    theta_path = np.empty(horizon)
    tracker = CapacityTracker.fresh(bat)
    soc = bat.soc_init
    theta = ewh.theta_init
    for h in range(horizon):
        absorb = float(_absorption(surplus[h], traj.p_ewh[h], tracker.capacity, dt, bat))
        p_eff = traj.p_bat[h] + absorb
        if p_eff > _charge_limit(soc, bat) + EPS:
            flags["charge_rate"][h] = True
        soc = battery_step(soc, p_eff, dt, bat)
        if soc > bat.soc_max + EPS:
            flags["soc_max"][h] = True
        if soc < bat.soc_min - EPS:
            flags["soc_min"][h] = True
        theta = ewh_step(theta, traj.p_ewh[h], draws[h], dt, ewh)
        if theta < ewh.theta_min - EPS or theta > ewh.theta_max + EPS:
            flags["temp"][h] = True
        soc_path[h] = soc
        theta_path[h] = theta
        tracker = update_capacity(tracker, surplus[h], traj.p_ewh[h], bat, dt)

    penalty = int(sum(f.sum() for f in flags.values()))
    return SimulationResult(soc=soc_path, theta=theta_path, penalty=penalty, violations=flags)


def pv_accommodation(
    traj: FlexTrajectory, surplus: np.ndarray, cfg: HemsConfig, dt: float
) -> tuple[bool, np.ndarray]:
    """Customer-preference check: no discharging while the battery is supposed
    to absorb surplus. Returns (ok, per-step violation flags)."""
    surplus = np.asarray(surplus, dtype=float)
    bat = cfg.battery
    if surplus.shape != (traj.horizon,):
        raise ValueError(f"surplus has shape {surplus.shape}, trajectory horizon is {traj.horizon}")
    flags = np.zeros(traj.horizon, dtype=bool)
    tracker = CapacityTracker.fresh(bat)
    for h in range(traj.horizon):
        absorb = float(_absorption(surplus[h], traj.p_ewh[h], tracker.capacity, dt, bat))
        if absorb > EPS and traj.p_bat[h] < -EPS:
            flags[h] = True
        tracker = update_capacity(tracker, surplus[h], traj.p_ewh[h], bat, dt)
    return not bool(flags.any()), flags


def repair_trajectory(
    traj: FlexTrajectory, surplus: np.ndarray, cfg: HemsConfig, dt: float
) -> FlexTrajectory:
    """Fix a trajectory whose only fault is discharging during surplus steps.

    Battery power is raised to zero at the offending steps, so the battery's
    actual flow there becomes exactly the supposed surplus absorption. Defined
    only for trajectories that are otherwise violation-free; anything else is
    rejected.
    """
    result = simulate(traj, surplus, cfg, dt)
    if result.penalty > 0:
        raise ValueError(
            "repair is defined only for trajectories whose sole fault is the "
            f"surplus-accommodation rule (penalty {result.penalty})"
        )
    ok, flags = pv_accommodation(traj, surplus, cfg, dt)
    if ok:
        return traj
    p_bat = traj.p_bat.copy()
    p_bat[flags] = 0.0
    return FlexTrajectory(p_bat=p_bat, p_ewh=traj.p_ewh.copy())


def feasible_power_range(
    soc: float, cfg: HemsConfig, dt: float, absorb: float = 0.0
) -> tuple[float, float]:
    """Battery-power interval keeping this single step violation-free, given
    the current SoC and the surplus power the battery must absorb on top."""
    bat = cfg.battery
    hi = min(
        bat.p_charge_max,
        float(_charge_limit(soc, bat)) - absorb,
        (bat.soc_max - soc) / (bat.efficiency * dt) - absorb,
    )
    lo = max(-bat.p_discharge_max, -(soc - bat.soc_min) * bat.efficiency / dt - absorb)
    if absorb > EPS:
        lo = max(lo, 0.0)
    return lo, hi


def batch_compliance(
    p_bat: np.ndarray,
    p_ewh: np.ndarray,
    net_load: np.ndarray,
    draws: np.ndarray,
    cfg: HemsConfig,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Screen one trajectory against S net-load rows at once.

    Returns (zero_penalty, accommodation_ok) boolean vectors of length S. The
    per-step arithmetic matches `simulate` and `pv_accommodation` exactly; only
    the scenario axis is vectorized. Tank temperature does not depend on the
    scenario, so it is stepped once.
    """
    bat, ewh = cfg.battery, cfg.ewh
    net_load = np.asarray(net_load, dtype=float)
    count, horizon = net_load.shape
    if p_bat.shape != (horizon,) or p_ewh.shape != (horizon,) or draws.shape != (horizon,):
        raise ValueError("trajectory, draw profile, and scenario horizons differ")
    surplus = np.maximum(0.0, -net_load)

    soc = np.full(count, bat.soc_init)
    capacity = np.full(count, bat.absorption_band)
    theta = ewh.theta_init
    zero_penalty = np.ones(count, dtype=bool)
    accommodation_ok = np.ones(count, dtype=bool)
    for h in range(horizon):
        sur = surplus[:, h]
        absorb = _absorption(sur, p_ewh[h], capacity, dt, bat)
        accommodation_ok &= ~((absorb > EPS) & (p_bat[h] < -EPS))
        p_eff = p_bat[h] + absorb
        violated = p_eff > _charge_limit(soc, bat) + EPS
        soc = soc + np.where(p_eff > 0.0, bat.efficiency * p_eff * dt, p_eff * dt / bat.efficiency)
        violated |= soc > bat.soc_max + EPS
        violated |= soc < bat.soc_min - EPS
        theta = ewh_step(theta, p_ewh[h], draws[h], dt, ewh)
        if theta < ewh.theta_min - EPS or theta > ewh.theta_max + EPS:
            zero_penalty[:] = False
        zero_penalty &= ~violated
        net = np.maximum(0.0, sur - p_ewh[h])
        decrement = np.minimum(net, bat.p_charge_max) * dt
        capacity = np.where(
            sur > 0.0,
            np.maximum(0.0, capacity - decrement),
            np.minimum(capacity + bat.p_discharge_max * dt, bat.absorption_band),
        )
    return zero_penalty, accommodation_ok


def read_draw_profile_csv(path) -> np.ndarray:
    """Read litres-per-step rows from CSV `h,liters`."""
    path = Path(path)
    rows: list[tuple[int, float]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"h", "liters"} - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header h,liters")
        for row in reader:
            rows.append((int(row["h"]), float(row["liters"])))
    if not rows:
        raise ValueError(f"{path}: no draw rows")
    rows.sort()
    return np.array([litres for _, litres in rows], dtype=float)


def write_draw_profile_csv(path, draws: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "liters"])
        for h, litres in enumerate(np.asarray(draws, dtype=float), start=1):
            writer.writerow([h, f"{litres:g}"])
