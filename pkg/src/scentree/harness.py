"""Rolling-horizon closed-loop evaluation of planning policies.

An episode walks a realized hourly price series in steps of one stage
horizon. At each decision epoch the controller plans over the current stage
(whose prices are already published, day-ahead style) plus its view of the
following stages, applies exactly the first stage of hourly actions against
the realized prices, then re-plans with the new observations.

Baselines differ only in where the future prices come from: the whole
remaining series (perfect), the realized horizon (oracle), the sampler's mean
path (deterministic), a Monte-Carlo average over sampled paths (open-loop
scenario averaging), or a scenario tree with recourse.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .environment import BatteryParams, HourlyAction, Observation, step
from .errors import InfeasibleActionError, InvalidInputError
from .optimizer import (
    OptimizerConfig,
    extract_policy,
    formulate_path_lp,
    formulate_tree_lp,
    solve_lp,
)
from .samplers import SamplerRequest, TrajectorySampler
from .seeding import mix_seed
from .tree import ScenarioTree, TreeConfig, build_tree

POLICY_KINDS = (
    "perfect_mpc",
    "oracle_mpc",
    "deterministic_mpc",
    "mc_smpc",
    "dst_smpc",
    "ar_tree_smpc",
)

_FORECAST_KINDS = {"deterministic_mpc", "mc_smpc", "dst_smpc", "ar_tree_smpc"}


@dataclass(frozen=True)
class PolicyKind:
    """A named controller plus any per-kind parameters.

    `sampler` overrides the episode-level sampler; ar_tree_smpc always needs
    one (that is the point of the baseline: the same tree machinery fed by a
    mis-specified classical sampler).
    """

    kind: str
    sampler: TrajectorySampler | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise InvalidInputError(
                f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}"
            )
        if self.kind == "ar_tree_smpc" and self.sampler is None:
            raise InvalidInputError("ar_tree_smpc requires its own sampler")

    @property
    def name(self) -> str:
        return self.label or self.kind


@dataclass(eq=False)
class EpisodeResult:
    """Realized closed-loop outcome of one policy on one price series."""

    total_reward: float
    epoch_rewards: list[float]
    epoch_plans: list[list[HourlyAction]]
    final_soc: float
    epoch_seconds: list[float]

    def deterministic_payload(self) -> tuple:
        """Everything except wall-clock, for bit-for-bit comparisons."""
        plans = tuple(
            tuple((a.p_c, a.p_d) for a in plan) for plan in self.epoch_plans
        )
        return (self.total_reward, tuple(self.epoch_rewards), plans, self.final_soc)


# ---------------------------------------------------------------------------
# single-epoch planners
# ---------------------------------------------------------------------------


def _solve_path(prices, battery, cfg, soc0) -> list[HourlyAction]:
    prog = formulate_path_lp(np.asarray(prices, float).reshape(-1), battery, cfg, soc0)
    sol = solve_lp(prog, tol=cfg.solver_tolerance)
    if sol.status != "optimal":
        raise InvalidInputError(f"planning LP came back {sol.status}")
    return extract_policy(prog, sol).first_stage()


def plan_perfect(prices, battery, cfg, soc0) -> list[HourlyAction]:
    """Full-information plan over the entire remaining realized series."""
    prices = np.asarray(prices, float).reshape(-1)
    if prices.size == 0:
        return []
    return _solve_path(prices, battery, cfg, soc0)


def plan_oracle(prices, battery, cfg, soc0) -> list[HourlyAction]:
    """Finite-horizon plan with exact knowledge of the realized horizon."""
    return plan_perfect(prices, battery, cfg, soc0)


def plan_deterministic(point_forecast, battery, cfg, soc0) -> list[HourlyAction]:
    """Plan against a single point forecast (the sampler's per-hour mean)."""
    return _solve_path(point_forecast, battery, cfg, soc0)


def plan_mc_smpc(scenarios, battery, cfg, soc0) -> list[HourlyAction]:
    """Open-loop scenario averaging: one action sequence maximizing the mean
    reward over M scenarios. The reward is linear in price, so this is one LP
    with per-hour averaged price coefficients."""
    arr = np.asarray(scenarios, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InvalidInputError("scenarios must be an M x hours matrix")
    return _solve_path(arr.mean(axis=0), battery, cfg, soc0)


def plan_dst_smpc(
    tree: ScenarioTree,
    battery: BatteryParams,
    cfg: OptimizerConfig,
    soc0: float,
    trading_dim: int = 0,
) -> list[HourlyAction]:
    """Solve the multistage stochastic program on the tree, return the root
    stage's actions."""
    prog = formulate_tree_lp(tree, battery, cfg, soc0, trading_dim=trading_dim)
    sol = solve_lp(prog, tol=cfg.solver_tolerance)
    if sol.status != "optimal":
        raise InvalidInputError(f"tree LP came back {sol.status}")
    return extract_policy(prog, sol).first_stage()


# ---------------------------------------------------------------------------
# closed-loop episode
# ---------------------------------------------------------------------------


def run_episode(
    kind: PolicyKind | str,
    prices: np.ndarray,
    sampler: TrajectorySampler | None,
    *,
    battery: BatteryParams,
    tree_config: TreeConfig,
    opt_config: OptimizerConfig | None = None,
    soc0: float | None = None,
    trading_dim: int = 0,
    start: int | None = None,
    workers: int = 1,
    log_path=None,
) -> EpisodeResult:
    """Roll one policy through a realized price series.

    Decision epochs are spaced one stage horizon apart, starting at `start`
    (default: the policy sampler's minimum context, or 1). Near the end of
    the series the lookahead depth shrinks to fit the remaining data, the
    same way for every policy. All randomness derives from
    tree_config.master_seed and the epoch index.
    """
    policy = PolicyKind(kind) if isinstance(kind, str) else kind
    opt_config = opt_config or OptimizerConfig()
    series = np.asarray(prices, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2 or not np.all(np.isfinite(series)):
        raise InvalidInputError("prices must be a finite T x D matrix")
    h = tree_config.stage_horizon
    depth = tree_config.depth

    policy_sampler = policy.sampler or sampler
    if policy.kind in _FORECAST_KINDS and policy_sampler is None:
        raise InvalidInputError(f"{policy.kind} requires a sampler")
    if start is None:
        start = max(getattr(policy_sampler, "min_context", 1), 1) if policy_sampler else 1
    if start < 1 or start + h > series.shape[0]:
        raise InvalidInputError(
            f"price series of {series.shape[0]} hours does not fit one epoch "
            f"starting at {start} with stage horizon {h}"
        )

    soc = battery.soc_min if soc0 is None else float(soc0)
    lam = series[:, trading_dim]
    epoch_rewards: list[float] = []
    epoch_plans: list[list[HourlyAction]] = []
    epoch_seconds: list[float] = []
    log_lines: list[str] = []

    # Hours past the last full epoch are never played; no planner may count
    # on trading in them (otherwise "perfect" would defer liquidation into
    # hours that never execute and stop being an upper bound).
    n_epochs = (series.shape[0] - start) // h
    played_end = start + n_epochs * h
    # Full information is dynamically consistent: one plan over the whole
    # played horizon realizes the same total as re-planning every epoch.
    perfect_plan: list[HourlyAction] | None = None

    t0 = start
    epoch = 0
    while t0 + h <= series.shape[0]:
        tick = time.perf_counter()
        eff_depth = min(depth, (played_end - t0 - h) // h)
        known = lam[t0 : t0 + h]
        history = series[: t0 + h]
        epoch_seed = mix_seed(tree_config.master_seed, 0x10000 + epoch)

        if policy.kind == "perfect_mpc":
            if perfect_plan is None:
                perfect_plan = plan_perfect(
                    lam[start:played_end], battery, opt_config, soc
                )
            plan = perfect_plan[t0 - start : t0 - start + h]
        elif policy.kind == "oracle_mpc" or eff_depth == 0:
            plan = plan_oracle(
                lam[t0 : t0 + h + eff_depth * h], battery, opt_config, soc
            )
        elif policy.kind == "deterministic_mpc":
            batch = policy_sampler.sample(
                SamplerRequest(
                    history=history, m=tree_config.samples_per_node,
                    h=eff_depth * h, seed=epoch_seed,
                )
            )
            mean = batch.mean_trajectory()[:, trading_dim]
            plan = plan_deterministic(
                np.concatenate([known, mean]), battery, opt_config, soc
            )
        elif policy.kind == "mc_smpc":
            # Trajectory budget matched to the tree's scenario count, i.e.
            # the pruned width raised to the lookahead depth.
            n_scenarios = max(1, tree_config.keep_children**eff_depth)
            batch = policy_sampler.sample(
                SamplerRequest(
                    history=history, m=n_scenarios,
                    h=eff_depth * h, seed=epoch_seed,
                )
            )
            scen = batch.samples[:, :, trading_dim]
            known_block = np.tile(known, (scen.shape[0], 1))
            plan = plan_mc_smpc(
                np.concatenate([known_block, scen], axis=1), battery, opt_config, soc
            )
        elif policy.kind in ("dst_smpc", "ar_tree_smpc"):
            cfg_epoch = replace(tree_config, depth=eff_depth, master_seed=epoch_seed)
            tree = build_tree(policy_sampler, history, cfg_epoch, workers=workers)
            plan = plan_dst_smpc(
                tree, battery, opt_config, soc, trading_dim=trading_dim
            )
        else:  # pragma: no cover - PolicyKind already validated
            raise InvalidInputError(f"unhandled policy kind {policy.kind!r}")

        applied = plan[:h]
        reward = 0.0
        for j, act in enumerate(applied):
            obs = Observation(soc=soc, prices=series[t0 + j], time=t0 + j)
            try:
                soc, r = step(obs, act, battery, trading_dim=trading_dim)
            except InfeasibleActionError as exc:
                raise InfeasibleActionError(
                    f"policy {policy.name} epoch {epoch} hour {t0 + j}: {exc}"
                ) from exc
            reward += r
        epoch_rewards.append(reward)
        epoch_plans.append(list(applied))
        epoch_seconds.append(time.perf_counter() - tick)
        if log_path is not None:
            log_lines.append(
                json.dumps(
                    {
                        "epoch": epoch,
                        "prices": known.tolist(),
                        "plan": [[a.p_c, a.p_d] for a in applied],
                        "reward": reward,
                    }
                )
            )
        t0 += h
        epoch += 1

    if opt_config.terminal_value_rate != 0.0 and epoch_rewards:
        epoch_rewards[-1] += opt_config.terminal_value_rate * soc
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
    return EpisodeResult(
        total_reward=float(sum(epoch_rewards)),
        epoch_rewards=epoch_rewards,
        epoch_plans=epoch_plans,
        final_soc=soc,
        epoch_seconds=epoch_seconds,
    )


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def aggregate_report(results: dict[str, dict[str, EpisodeResult]]) -> str:
    """Month-by-policy CSV with Sum and Average rows, 2-decimal cells."""
    months = sorted(results)
    policies: list[str] = []
    for month in months:
        for name in results[month]:
            if name not in policies:
                policies.append(name)
    lines = ["month," + ",".join(policies)]
    sums = {name: 0.0 for name in policies}
    for month in months:
        cells = []
        for name in policies:
            res = results[month].get(name)
            if res is None:
                cells.append("")
            else:
                sums[name] += res.total_reward
                cells.append(f"{res.total_reward:.2f}")
        lines.append(f"{month}," + ",".join(cells))
    lines.append("Sum," + ",".join(f"{sums[name]:.2f}" for name in policies))
    lines.append(
        "Average," + ",".join(f"{sums[name] / len(months):.2f}" for name in policies)
    )
    return "\n".join(lines) + "\n"


def sign_test_p_value(wins: int, losses: int) -> float:
    """One-sided sign test: P[Binom(n, 1/2) >= wins] with ties dropped."""
    import math

    n = wins + losses
    if n == 0:
        return 1.0
    total = sum(math.comb(n, k) for k in range(wins, n + 1))
    return total / 2.0**n
