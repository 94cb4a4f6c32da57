"""Bounded-variable primal simplex solver.

Solves   maximize c'x  subject to  A x = b,  lower <= x <= upper,
where bounds may be infinite. Nonbasic variables rest on one of their bounds
(or at zero when free) and the ratio test accounts for bound flips.

Pivoting is deterministic: the entering variable has the largest reduced
cost (ties to the lowest index) while progress is being made, and Bland's
anti-cycling rule (smallest eligible index for both entering and leaving)
takes over whenever a run of degenerate pivots stalls the objective, which
guarantees finite termination. Storage-recursion LPs are heavily degenerate;
pure Bland pricing needs an order of magnitude more iterations on them.

Inequality constraints must be rewritten with slacks by the caller; the tree
formulation in `optimizer` only ever produces equalities and boxes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import SolverFailureError

_PIVOT_TOL = 1e-12
_RATE_TOL = 1e-10
_TIE_TOL = 1e-12
_MAX_ITER = 200_000
_REFACTOR_EVERY = 128
_BLAND_AFTER = 16  # consecutive degenerate pivots before Bland pricing kicks in
_DEGENERATE_STEP = 1e-12


class SimplexResult(NamedTuple):
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float
    iterations: int


class _Breakdown(Exception):
    """Pivot element too small; retry after refactorization."""


class _UnboundedDirection(Exception):
    """The entering direction improves forever."""


def solve_bounded_lp(
    c: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = 1e-9,
) -> SimplexResult:
    """Maximize c'x subject to A x = b and lower <= x <= upper."""
    c = np.asarray(c, dtype=float).reshape(-1)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    n = c.size
    if A.size == 0:
        A = A.reshape(0, n)
    m = A.shape[0]
    if A.shape != (m, n) or b.size != m or lower.size != n or upper.size != n:
        raise ValueError("inconsistent LP dimensions")

    if np.any(lower > upper + tol):
        return SimplexResult("infeasible", None, float("nan"), 0)
    upper = np.maximum(upper, lower)  # fix crossings within tolerance

    state = _State(c, A, b, lower, upper, tol)
    if m > 0:
        phase1_sum = state.run_phase1()
        feas_tol = 1e-7 * (1.0 + float(np.max(np.abs(b))))
        if phase1_sum > feas_tol:
            return SimplexResult("infeasible", None, float("nan"), state.iterations)
        state.drop_artificials()
    status = state.run_phase2()
    if status == "unbounded":
        return SimplexResult("unbounded", None, float("inf"), state.iterations)
    x = state.final_solution()
    return SimplexResult("optimal", x, float(c @ x), state.iterations)


class _State:
    """Two-phase simplex state over the artificial-extended problem."""

    def __init__(self, c, A, b, lower, upper, tol):
        n, m = c.size, A.shape[0]
        self.n, self.m, self.tol = n, m, tol
        self.b = b
        self.iterations = 0
        x = np.empty(n + m)
        at_upper = np.zeros(n + m, dtype=bool)
        for j in range(n):
            if np.isfinite(lower[j]):
                x[j] = lower[j]
            elif np.isfinite(upper[j]):
                x[j] = upper[j]
                at_upper[j] = True
            else:
                x[j] = 0.0
        if m:
            resid = b - A @ x[:n]
            sign = np.where(resid >= 0, 1.0, -1.0)
            x[n:] = np.abs(resid)
            self.A = np.hstack([A, np.diag(sign)])
            self.binv = np.diag(sign)  # inverse of the artificial basis
        else:
            self.A = A.copy()
            self.binv = np.eye(0)
        self.lower = np.concatenate([lower, np.zeros(m)])
        self.upper = np.concatenate([upper, np.full(m, np.inf)])
        self.x = x
        self.at_upper = at_upper
        self.basis = np.arange(n, n + m)
        self.in_basis = np.zeros(n + m, dtype=bool)
        self.in_basis[n:] = True
        self.c_real = np.concatenate([c, np.zeros(m)])
        self.free = ~np.isfinite(self.lower) & ~np.isfinite(self.upper)
        self._since_refactor = 0

    def refactorize(self) -> None:
        if self.m == 0:
            return
        try:
            self.binv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError as exc:
            raise SolverFailureError("basis matrix became singular") from exc
        self._since_refactor = 0

    def reduced_costs(self, c: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return c.copy()
        y = c[self.basis] @ self.binv
        return c - y @ self.A

    def iterate(self, c: np.ndarray) -> str:
        degenerate_run = 0
        while True:
            if self.iterations >= _MAX_ITER:
                raise SolverFailureError("simplex iteration limit exceeded")
            d = self.reduced_costs(c)
            movable = ~self.in_basis & (self.upper > self.lower)
            want_up = movable & (~self.at_upper | self.free) & (d > self.tol)
            want_down = movable & (self.at_upper | self.free) & (d < -self.tol)
            eligible = want_up | want_down
            if not eligible.any():
                return "optimal"
            if degenerate_run >= _BLAND_AFTER:
                enter = int(np.nonzero(eligible)[0][0])  # Bland: smallest index
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                enter = int(np.argmax(score))  # argmax ties to the lowest index
            direction = 1.0 if want_up[enter] else -1.0
            self.iterations += 1
            try:
                step = self._pivot(enter, direction)
            except _Breakdown:
                self.refactorize()
                try:
                    step = self._pivot(enter, direction)
                except _Breakdown as exc:
                    raise SolverFailureError(
                        f"pivot element below {_PIVOT_TOL} even after "
                        f"refactorization (entering column {enter})"
                    ) from exc
            except _UnboundedDirection:
                return "unbounded"
            degenerate_run = degenerate_run + 1 if step <= _DEGENERATE_STEP else 0
            self._since_refactor += 1
            if self._since_refactor >= _REFACTOR_EVERY:
                self.refactorize()

    def _pivot(self, enter: int, direction: float) -> float:
        """Execute one pivot or bound flip; returns the step length taken."""
        m = self.m
        w = self.binv @ self.A[:, enter] if m else np.empty(0)
        span = self.upper[enter] - self.lower[enter]

        if m:
            rates = -direction * w  # d x_B / d t
            bas = self.basis
            limits = np.full(m, np.inf)
            dec = rates < -_RATE_TOL
            inc = rates > _RATE_TOL
            lb, ub, xb = self.lower[bas], self.upper[bas], self.x[bas]
            with np.errstate(invalid="ignore"):
                limits[dec] = np.where(
                    np.isfinite(lb[dec]), (xb[dec] - lb[dec]) / (-rates[dec]), np.inf
                )
                limits[inc] = np.where(
                    np.isfinite(ub[inc]), (ub[inc] - xb[inc]) / rates[inc], np.inf
                )
            limits = np.maximum(limits, 0.0)
            t_basic = float(limits.min()) if m else np.inf
        else:
            t_basic = np.inf

        if span <= t_basic:
            # Bound flip (or unbounded if nothing limits the move).
            if not np.isfinite(span):
                raise _UnboundedDirection()
            self.x[enter] += direction * span
            if m:
                self.x[self.basis] -= direction * span * w
            self.at_upper[enter] = not self.at_upper[enter]
            self.x[enter] = (
                self.upper[enter] if self.at_upper[enter] else self.lower[enter]
            )
            return float(span)

        if not np.isfinite(t_basic):
            raise _UnboundedDirection()
        ties = np.nonzero(limits <= t_basic + _TIE_TOL)[0]
        leave_pos = int(ties[np.argmin(self.basis[ties])])  # Bland tie-break
        if abs(w[leave_pos]) < _PIVOT_TOL:
            raise _Breakdown()

        t = t_basic
        self.x[enter] += direction * t
        self.x[self.basis] -= direction * t * w
        leave = int(self.basis[leave_pos])
        hit_upper = (-direction * w[leave_pos]) > 0
        self.at_upper[leave] = bool(hit_upper)
        self.x[leave] = self.upper[leave] if hit_upper else self.lower[leave]
        self.in_basis[leave] = False
        self.in_basis[enter] = True
        self.basis[leave_pos] = enter
        piv = w[leave_pos]
        self.binv[leave_pos] /= piv
        correction = np.outer(w, self.binv[leave_pos])
        correction[leave_pos] = 0.0
        self.binv -= correction
        return float(t)

    def run_phase1(self) -> float:
        c1 = np.concatenate([np.zeros(self.n), -np.ones(self.m)])
        status = self.iterate(c1)
        if status == "unbounded":  # impossible: phase-1 objective <= 0
            raise SolverFailureError("phase 1 reported unbounded")
        return float(np.sum(np.abs(self.x[self.n :])))

    def drop_artificials(self) -> None:
        """Pin artificials at zero; pivot basic ones out where possible."""
        for pos in range(self.m):
            var = int(self.basis[pos])
            if var < self.n:
                continue
            row = self.binv[pos] @ self.A[:, : self.n]
            for j in np.nonzero(np.abs(row) > 1e-9)[0]:
                j = int(j)
                if not self.in_basis[j] and self.upper[j] > self.lower[j]:
                    self._swap_at_zero(pos, j)
                    break
            # If no structural column qualifies the row is redundant and the
            # artificial stays basic, frozen at value zero.
        self.upper[self.n :] = 0.0
        self.x[self.n :][~self.in_basis[self.n :]] = 0.0

    def _swap_at_zero(self, pos: int, enter: int) -> None:
        w = self.binv @ self.A[:, enter]
        if abs(w[pos]) < _PIVOT_TOL:
            return
        leave = int(self.basis[pos])
        self.in_basis[leave] = False
        self.at_upper[leave] = False
        self.x[leave] = 0.0
        self.in_basis[enter] = True
        self.basis[pos] = enter
        self.binv[pos] /= w[pos]
        correction = np.outer(w, self.binv[pos])
        correction[pos] = 0.0
        self.binv -= correction

    def run_phase2(self) -> str:
        return self.iterate(self.c_real)

    def final_solution(self) -> np.ndarray:
        """Recompute basic values against a fresh factorization."""
        x = self.x[: self.n].copy()
        if self.m == 0:
            return x
        nonbasic = ~self.in_basis
        contrib = self.A[:, nonbasic] @ self.x[nonbasic]
        xb = np.linalg.solve(self.A[:, self.basis], self.b - contrib)
        for pos in range(self.m):
            var = int(self.basis[pos])
            if var < self.n:
                x[var] = xb[pos]
        return x
