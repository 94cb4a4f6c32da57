"""Multistage stochastic program over a scenario tree.

The program has, for every node i and hour j in [0, H): charge power,
discharge power, and end-of-hour SoC. The SoC recursion chains hours within a
node and chains each node's hour 0 to its parent's last hour. Siblings share
their parent's variables, so decisions at a stage depend only on the path
that led there; no explicit equality rows are needed for that.

Objective: sum_i pi_i sum_j gamma^(stage(i)*H + j) *
           [lam(i,j)*(p_d - p_c)*dt - c_deg*(p_c + p_d)*dt]
plus an optional terminal credit on leaf storage.

Solved exactly with the bounded-variable simplex in `simplex`, and
independently cross-checked by discretized backward induction (`solve_tree_dp`),
whose value converges to the LP optimum from below as the grids refine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import BatteryParams, HourlyAction
from .errors import InvalidInputError, SolverFailureError
from .simplex import solve_bounded_lp
from .tree import ScenarioTree

_KIND_OFFSET = {"c": 0, "d": 1, "s": 2}


@dataclass(frozen=True)
class OptimizerConfig:
    """discount: per-hour factor gamma; terminal_value_rate: $/MWh credited
    to stored energy at the end of the horizon (0 disables the credit)."""

    discount: float = 1.0
    solver_tolerance: float = 1e-9
    terminal_value_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise InvalidInputError(f"discount must be in [0, 1], got {self.discount}")
        if not self.solver_tolerance > 0:
            raise InvalidInputError("solver_tolerance must be > 0")


@dataclass(eq=False)
class TreeProgram:
    """Assembled LP: maximize c'x with A x = b and box bounds.

    Columns are ordered (node id, then hour, then p_c/p_d/s); rows follow the
    same (node, hour) order. `node_ids` maps block rank to node id.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    node_ids: tuple[int, ...]
    horizon: int
    root_id: int
    eta_roundtrip: float = 1.0

    def col(self, node_rank: int, hour: int, kind: str) -> int:
        return 3 * (node_rank * self.horizon + hour) + _KIND_OFFSET[kind]

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_constraints(self) -> int:
        return self.b.size


@dataclass(eq=False)
class Solution:
    objective: float
    x: np.ndarray | None
    status: str  # "optimal" | "infeasible" | "unbounded"


def formulate_tree_lp(
    tree: ScenarioTree,
    battery: BatteryParams,
    cfg: OptimizerConfig,
    soc0: float,
    trading_dim: int = 0,
) -> TreeProgram:
    """Build the tree LP, pinning the root's hour-0 recursion to soc0."""
    h = tree.config.stage_horizon
    node_ids = tuple(sorted(tree.nodes))
    rank = {nid: r for r, nid in enumerate(node_ids)}
    n_nodes = len(node_ids)
    nv, nc = 3 * h * n_nodes, h * n_nodes
    c = np.zeros(nv)
    A = np.zeros((nc, nv))
    b = np.zeros(nc)
    lower = np.zeros(nv)
    upper = np.zeros(nv)
    dt = battery.dt

    if not battery.soc_min - 1e-12 <= soc0 <= battery.soc_max + 1e-12:
        raise InvalidInputError(
            f"soc0={soc0} outside [{battery.soc_min}, {battery.soc_max}]"
        )

    for nid in node_ids:
        node = tree.nodes[nid]
        if node.forecast.shape[0] != h:
            raise InvalidInputError(
                f"node {nid} carries {node.forecast.shape[0]} hours, "
                f"stage horizon is {h}"
            )
        r = rank[nid]
        for j in range(h):
            gh = node.stage * h + j  # global hour, for discounting
            weight = node.path_prob * cfg.discount**gh
            lam = float(node.forecast[j, trading_dim])
            cc = 3 * (r * h + j)
            cd, cs = cc + 1, cc + 2
            c[cc] = weight * (-lam - battery.c_deg) * dt
            c[cd] = weight * (lam - battery.c_deg) * dt
            lower[cc] = lower[cd] = 0.0
            upper[cc] = upper[cd] = battery.p_max
            lower[cs] = battery.soc_min
            upper[cs] = battery.soc_max
            row = r * h + j
            A[row, cs] = 1.0
            A[row, cc] = -battery.eta_c * dt
            A[row, cd] = dt / battery.eta_d
            if j > 0:
                A[row, cs - 3] = -1.0
            elif node.parent_id is None:
                b[row] = soc0
            else:
                A[row, 3 * (rank[node.parent_id] * h + (h - 1)) + 2] = -1.0
        if not node.children and cfg.terminal_value_rate != 0.0:
            gh_last = node.stage * h + (h - 1)
            c[3 * (r * h + (h - 1)) + 2] += (
                node.path_prob * cfg.discount**gh_last * cfg.terminal_value_rate
            )

    return TreeProgram(
        c=c, A=A, b=b, lower=lower, upper=upper,
        node_ids=node_ids, horizon=h, root_id=tree.root_id,
        eta_roundtrip=battery.eta_c * battery.eta_d,
    )


def formulate_path_lp(
    prices: np.ndarray,
    battery: BatteryParams,
    cfg: OptimizerConfig,
    soc0: float,
) -> TreeProgram:
    """Single-scenario LP over an explicit hourly price vector.

    Used by the perfect/oracle/deterministic/Monte-Carlo planners; the whole
    path is one block of len(prices) hours.
    """
    lam = np.asarray(prices, dtype=float).reshape(-1)
    if lam.size < 1:
        raise InvalidInputError("price path must contain at least one hour")
    if not np.all(np.isfinite(lam)):
        raise InvalidInputError("price path contains non-finite values")
    n = lam.size
    nv = 3 * n
    c = np.zeros(nv)
    A = np.zeros((n, nv))
    b = np.zeros(n)
    lower = np.zeros(nv)
    upper = np.zeros(nv)
    dt = battery.dt
    for j in range(n):
        weight = cfg.discount**j
        cc, cd, cs = 3 * j, 3 * j + 1, 3 * j + 2
        c[cc] = weight * (-lam[j] - battery.c_deg) * dt
        c[cd] = weight * (lam[j] - battery.c_deg) * dt
        upper[cc] = upper[cd] = battery.p_max
        lower[cs] = battery.soc_min
        upper[cs] = battery.soc_max
        A[j, cs] = 1.0
        A[j, cc] = -battery.eta_c * dt
        A[j, cd] = dt / battery.eta_d
        if j > 0:
            A[j, cs - 3] = -1.0
        else:
            b[j] = soc0
    if cfg.terminal_value_rate != 0.0:
        c[3 * (n - 1) + 2] += cfg.discount ** (n - 1) * cfg.terminal_value_rate
    return TreeProgram(
        c=c, A=A, b=b, lower=lower, upper=upper,
        node_ids=(0,), horizon=n, root_id=0,
        eta_roundtrip=battery.eta_c * battery.eta_d,
    )


def solve_lp(prog: TreeProgram, tol: float = 1e-9) -> Solution:
    """Exact simplex solve; verifies constraint residuals when optimal."""
    result = solve_bounded_lp(prog.c, prog.A, prog.b, prog.lower, prog.upper, tol=tol)
    if result.status != "optimal":
        return Solution(objective=result.objective, x=None, status=result.status)
    resid = float(np.max(np.abs(prog.A @ result.x - prog.b))) if prog.b.size else 0.0
    scale = 1.0 + (float(np.max(np.abs(prog.b))) if prog.b.size else 0.0)
    if resid > max(tol, 1e-9) * scale * 10:
        raise SolverFailureError(f"optimal basis violates constraints by {resid}")
    return Solution(objective=result.objective, x=result.x, status="optimal")


def mean_price_path(tree: ScenarioTree, trading_dim: int = 0) -> np.ndarray:
    """Probability-weighted expected price per global hour over the tree.

    This is also the price path of the open-loop restriction of the tree LP:
    with shared actions and a linear reward, the expected objective equals
    the objective under the expected prices.
    """
    h = tree.config.stage_horizon
    depth = tree.config.depth
    path = np.zeros((depth + 1) * h)
    for node in tree.nodes.values():
        base = node.stage * h
        path[base : base + h] += node.path_prob * node.forecast[:, trading_dim]
    return path


def solve_tree_dp(
    tree: ScenarioTree,
    battery: BatteryParams,
    cfg: OptimizerConfig,
    soc_points: int,
    action_points: int,
    soc0: float,
    trading_dim: int = 0,
) -> Solution:
    """Independent oracle: backward induction on discretized SoC and power.

    SoC lives on soc_points grid values, net power on action_points values in
    [-p_max, p_max]; off-grid continuation values are linearly interpolated.
    The LP value function is concave in SoC, so interpolation under-estimates
    it and the gridded optimum lower-bounds the LP optimum, converging to it
    as the grids refine.
    """
    if soc_points < 2 or action_points < 2:
        raise InvalidInputError("soc_points and action_points must be >= 2")
    h = tree.config.stage_horizon
    dt = battery.dt
    soc_grid = np.linspace(battery.soc_min, battery.soc_max, soc_points)
    step = soc_grid[1] - soc_grid[0]
    net = np.linspace(-battery.p_max, battery.p_max, action_points)
    p_c = np.maximum(net, 0.0)
    p_d = np.maximum(-net, 0.0)
    delta = battery.eta_c * p_c * dt - p_d * dt / battery.eta_d
    throughput = (p_c + p_d) * dt
    traded = (p_d - p_c) * dt

    next_soc = soc_grid[:, None] + delta[None, :]
    feasible = (next_soc >= battery.soc_min - 1e-12) & (
        next_soc <= battery.soc_max + 1e-12
    )
    # Interpolation stencil: the grid is uniform and the action deltas fixed,
    # so the (index, weight) pattern per action column is precomputable.
    pos = (np.clip(next_soc, battery.soc_min, battery.soc_max) - battery.soc_min) / step
    idx0 = np.clip(np.floor(pos).astype(int), 0, soc_points - 1)
    idx1 = np.clip(idx0 + 1, 0, soc_points - 1)
    frac = pos - idx0

    values: dict[int, np.ndarray] = {}  # node id -> value of entering hour 0
    for nid in sorted(tree.nodes, reverse=True):
        node = tree.nodes[nid]
        if node.children:
            after = np.zeros_like(soc_grid)
            for child in node.children:
                after = after + tree.nodes[child].branch_prob * values[child]
        else:
            gh_last = node.stage * h + (h - 1)
            after = cfg.discount**gh_last * cfg.terminal_value_rate * soc_grid
        v = after
        for j in range(h - 1, -1, -1):
            gh = node.stage * h + j
            lam = float(node.forecast[j, trading_dim])
            reward = cfg.discount**gh * (lam * traded - battery.c_deg * throughput)
            cont = (1.0 - frac) * v[idx0] + frac * v[idx1]
            total = np.where(feasible, reward[None, :] + cont, -np.inf)
            v = total.max(axis=1)
        values[nid] = v

    objective = float(np.interp(soc0, soc_grid, values[tree.root_id]))
    return Solution(objective=objective, x=None, status="optimal")


@dataclass(eq=False)
class TreePolicy:
    """Per-node hourly action plan extracted from an optimal solution."""

    actions: dict[int, list[HourlyAction]]
    root_id: int

    def first_stage(self) -> list[HourlyAction]:
        return self.actions[self.root_id]


def extract_policy(prog: TreeProgram, sol: Solution) -> TreePolicy:
    """Read (p_c, p_d) per node and hour out of an optimal solution.

    Simultaneous charge/discharge in one hour is netted only when
    eta_c*eta_d == 1, where netting provably leaves the SoC path unchanged
    and never lowers the objective; with lossy storage, netting would alter
    the stored energy and could break downstream feasibility.
    """
    if sol.status != "optimal" or sol.x is None:
        raise InvalidInputError(f"cannot extract a policy from status {sol.status!r}")
    h = prog.horizon
    lossless = prog.eta_roundtrip >= 1.0 - 1e-12
    actions: dict[int, list[HourlyAction]] = {}
    for r, nid in enumerate(prog.node_ids):
        plan = []
        for j in range(h):
            pc = float(sol.x[prog.col(r, j, "c")])
            pd = float(sol.x[prog.col(r, j, "d")])
            if lossless and pc > 0 and pd > 0:
                m = min(pc, pd)
                pc, pd = pc - m, pd - m
            if abs(pc) < 1e-12:
                pc = 0.0
            if abs(pd) < 1e-12:
                pd = 0.0
            plan.append(HourlyAction(p_c=pc, p_d=pd))
        actions[nid] = plan
    return TreePolicy(actions=actions, root_id=prog.root_id)


def export_lp_text(prog: TreeProgram) -> str:
    """Render the program in LP text format for external cross-checking."""
    h = prog.horizon

    def var_name(col: int) -> str:
        block, kind = divmod(col, 3)
        rank, hour = divmod(block, h)
        return f"n{prog.node_ids[rank]}_h{hour}_{'cds'[kind]}"

    def term(coef: float, col: int) -> str:
        sign = "+" if coef >= 0 else "-"
        return f"{sign} {abs(coef):.17g} {var_name(col)}"

    lines = ["Maximize", " obj: " + " ".join(
        term(prog.c[j], j) for j in range(prog.n_vars) if prog.c[j] != 0.0
    )]
    lines.append("Subject To")
    for i in range(prog.n_constraints):
        cols = np.nonzero(prog.A[i])[0]
        body = " ".join(term(prog.A[i, j], int(j)) for j in cols)
        lines.append(f" r{i}: {body} = {prog.b[i]:.17g}")
    lines.append("Bounds")
    for j in range(prog.n_vars):
        lines.append(f" {prog.lower[j]:.17g} <= {var_name(j)} <= {prog.upper[j]:.17g}")
    lines.append("End")
    return "\n".join(lines) + "\n"
