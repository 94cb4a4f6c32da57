"""Battery energy-arbitrage environment.

The system state splits into a deterministic part (battery state of charge,
which evolves under known dynamics) and a stochastic part (hourly electricity
prices). Trades settle on one designated price dimension; any further
dimensions only inform forecasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleActionError, InvalidInputError

SOC_TOL = 1e-9


@dataclass(frozen=True)
class BatteryParams:
    """Physical battery parameters.

    capacity:    usable energy capacity in MWh.
    soc_min/max: state-of-charge operating window in MWh.
    p_max:       symmetric charge/discharge power limit in MW.
    eta_c/eta_d: charge and discharge efficiencies in (0, 1].
    c_deg:       degradation cost in $ per MWh of throughput.
    dt:          hours per step (fixed at 1.0).
    """

    capacity: float
    soc_min: float
    soc_max: float
    p_max: float
    eta_c: float = 1.0
    eta_d: float = 1.0
    c_deg: float = 0.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise InvalidInputError(f"capacity must be > 0, got {self.capacity}")
        if not (0 <= self.soc_min < self.soc_max <= self.capacity):
            raise InvalidInputError(
                f"need 0 <= soc_min < soc_max <= capacity, got "
                f"[{self.soc_min}, {self.soc_max}] with capacity {self.capacity}"
            )
        if not self.p_max > 0:
            raise InvalidInputError(f"p_max must be > 0, got {self.p_max}")
        for name, eta in (("eta_c", self.eta_c), ("eta_d", self.eta_d)):
            if not 0 < eta <= 1:
                raise InvalidInputError(f"{name} must be in (0, 1], got {eta}")
        if self.c_deg < 0:
            raise InvalidInputError(f"c_deg must be >= 0, got {self.c_deg}")
        if self.dt != 1.0:
            raise InvalidInputError("dt is fixed at 1.0 hour")


@dataclass(frozen=True)
class Observation:
    """One hourly observation: deterministic SoC plus stochastic prices."""

    soc: float
    prices: np.ndarray  # shape (D,), $/MWh
    time: int = 0


@dataclass(frozen=True)
class HourlyAction:
    """Charge and discharge power for one hour, both in [0, p_max] MW."""

    p_c: float = 0.0
    p_d: float = 0.0


def soc_delta(act: HourlyAction, battery: BatteryParams) -> float:
    """Exact SoC change produced by one action: eta_c*p_c*dt - p_d*dt/eta_d."""
    return battery.eta_c * act.p_c * battery.dt - act.p_d * battery.dt / battery.eta_d


def step(
    obs: Observation,
    act: HourlyAction,
    battery: BatteryParams,
    trading_dim: int = 0,
) -> tuple[float, float]:
    """Apply one hourly action and return (next_soc, reward).

    Reward is trading revenue minus degradation cost on the designated
    trading dimension: lam*(p_d - p_c)*dt - c_deg*(p_c + p_d)*dt.
    Actions that violate power bounds or push SoC outside
    [soc_min, soc_max] by more than SOC_TOL raise InfeasibleActionError;
    nothing is silently clamped.
    """
    if act.p_c < -SOC_TOL or act.p_c > battery.p_max + SOC_TOL:
        raise InfeasibleActionError(
            f"charge power {act.p_c} outside [0, {battery.p_max}]"
        )
    if act.p_d < -SOC_TOL or act.p_d > battery.p_max + SOC_TOL:
        raise InfeasibleActionError(
            f"discharge power {act.p_d} outside [0, {battery.p_max}]"
        )
    next_soc = obs.soc + soc_delta(act, battery)
    if next_soc < battery.soc_min - SOC_TOL:
        raise InfeasibleActionError(
            f"action ({act.p_c}, {act.p_d}) at hour {obs.time} drives SoC to "
            f"{next_soc}, below soc_min={battery.soc_min}"
        )
    if next_soc > battery.soc_max + SOC_TOL:
        raise InfeasibleActionError(
            f"action ({act.p_c}, {act.p_d}) at hour {obs.time} drives SoC to "
            f"{next_soc}, above soc_max={battery.soc_max}"
        )
    lam = float(np.asarray(obs.prices).reshape(-1)[trading_dim])
    reward = (
        lam * (act.p_d - act.p_c) * battery.dt
        - battery.c_deg * (act.p_c + act.p_d) * battery.dt
    )
    return next_soc, reward


def validate_plan(
    soc0: float,
    plan: list[HourlyAction],
    battery: BatteryParams,
) -> int | None:
    """Simulate the SoC recursion and return the first violating hour, if any.

    Returns None when the whole plan is feasible from soc0.
    """
    soc = soc0
    for hour, act in enumerate(plan):
        if act.p_c < -SOC_TOL or act.p_c > battery.p_max + SOC_TOL:
            return hour
        if act.p_d < -SOC_TOL or act.p_d > battery.p_max + SOC_TOL:
            return hour
        soc = soc + soc_delta(act, battery)
        if soc < battery.soc_min - SOC_TOL or soc > battery.soc_max + SOC_TOL:
            return hour
    return None
