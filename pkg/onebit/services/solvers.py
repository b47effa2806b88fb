"""
Deterministic solvers for the two relaxation families.

This module provides:
1. SimplexSolver / solve_maxmin_box: box-constrained max-min LPs
       max t  s.t.  t <= A_l x + o_l   (inequality rows)
                    t == A_l x + o_l   (eq_rows)
                    |x_j| <= b
   solved by a two-phase primal simplex with Bland's rule. The optimum is a
   basic (vertex) solution and the multipliers come from the final basis.
2. solve_box_ls: min ||b - A x||^2 s.t. |x_j| <= box, bounded-variable
   active-set least squares with a monotone cost trace.

Standard form used by the simplex (all right-hand sides >= 1):
    y = x + b in [0, 2b],  tau = t - t_low >= 0
    columns: [tau | y (n) | row slacks (ineq) | box slacks (n) | artificials (eq)]
    rows:    [constraint rows (m) | box rows y_j + w_j = 2b (n)]
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.linalg import lstsq

from onebit.config import get_settings

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Internal solver failure (unbounded LP or iteration cap)."""
    pass


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class MaxMinLP:
    """max t s.t. t <= A x + offsets (== on eq_rows), |x| <= box."""
    A: np.ndarray
    offsets: np.ndarray
    box: float
    eq_rows: Tuple[int, ...] = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        if A.shape[0] < 1:
            raise ValueError("max-min LP needs at least one row")
        if offsets.size != A.shape[0]:
            raise ValueError(f"{offsets.size} offsets for {A.shape[0]} rows")
        if not self.box > 0:
            raise ValueError(f"box must be positive, got {self.box}")
        eq_rows = tuple(sorted({int(r) for r in self.eq_rows}))
        if eq_rows and (eq_rows[0] < 0 or eq_rows[-1] >= A.shape[0]):
            raise ValueError("eq_rows index out of range")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "eq_rows", eq_rows)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class LPSolution:
    """
    Solution of a MaxMinLP.

    beta multiplies the row constraints, mu the upper box x_j <= b and nu the
    lower box -x_j <= b. For an infeasible problem x and the multipliers are
    empty and t is -inf.
    """
    status: LPStatus
    x: np.ndarray
    t: float
    beta: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL

    @property
    def duals(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.beta, self.mu, self.nu


def _infeasible(iterations: int = 0) -> LPSolution:
    empty = np.empty(0)
    return LPSolution(LPStatus.INFEASIBLE, empty, -np.inf, empty, empty, empty, iterations)


class SimplexSolver:
    """
    Two-phase primal simplex on a dense tableau.

    Entering column: lowest index with reduced cost < -tol (Bland).
    Leaving row: minimum ratio, ties to the lowest basic variable index.
    One instance per worker; the tableau is private workspace.
    """

    def __init__(self, tolerance: Optional[float] = None, max_iterations: Optional[int] = None):
        settings = get_settings()
        self.tol = settings.lp_tolerance if tolerance is None else tolerance
        self.max_iterations = settings.lp_max_iterations if max_iterations is None else max_iterations
        self._T: Optional[np.ndarray] = None
        self._rhs: Optional[np.ndarray] = None
        self._basis: List[int] = []
        self._iterations = 0

    # -------------------------------------------------------------------------
    # Public entry point
    # -------------------------------------------------------------------------

    def solve(self, problem: MaxMinLP) -> LPSolution:
        if problem.n == 0:
            return self._solve_constant(problem)

        A, o, b = problem.A, problem.offsets, problem.box
        m, n = A.shape
        eq = np.zeros(m, dtype=bool)
        eq[list(problem.eq_rows)] = True
        ineq_rows = np.flatnonzero(~eq)
        eq_rows = np.flatnonzero(eq)
        m_ineq, m_eq = ineq_rows.size, eq_rows.size

        row_floor = o - b * np.abs(A).sum(axis=1)
        t_low = float(np.min(row_floor)) - 1.0
        r_rows = o - t_low - b * A.sum(axis=1)

        # Column offsets
        c_tau = 0
        c_y = 1
        c_s = c_y + n
        c_w = c_s + m_ineq
        c_a = c_w + n
        n_cols = c_a + m_eq

        S = np.zeros((m + n, n_cols))
        S[:m, c_tau] = 1.0
        S[:m, c_y:c_y + n] = -A
        S[ineq_rows, c_s + np.arange(m_ineq)] = 1.0
        S[eq_rows, c_a + np.arange(m_eq)] = 1.0
        S[m + np.arange(n), c_y + np.arange(n)] = 1.0
        S[m + np.arange(n), c_w + np.arange(n)] = 1.0
        rhs = np.concatenate([r_rows, np.full(n, 2.0 * b)])

        basis = [0] * (m + n)
        for i, row in enumerate(ineq_rows):
            basis[row] = c_s + i
        for i, row in enumerate(eq_rows):
            basis[row] = c_a + i
        for j in range(n):
            basis[m + j] = c_w + j

        self._T = S.copy()
        self._rhs = rhs.copy()
        self._basis = basis
        self._iterations = 0
        artificial = np.zeros(n_cols, dtype=bool)
        artificial[c_a:] = True

        if m_eq:
            c1 = np.zeros(n_cols)
            c1[c_a:] = 1.0
            self._run(c1, allowed=np.ones(n_cols, dtype=bool))
            phase1 = float(c1[self._basis] @ self._rhs)
            if phase1 > self.tol * (1.0 + float(np.max(np.abs(rhs)))):
                logger.debug("max-min LP infeasible (phase-1 value %.3e)", phase1)
                return _infeasible(self._iterations)
            self._drive_out_artificials(artificial)

        c2 = np.zeros(n_cols)
        c2[c_tau] = -1.0
        self._run(c2, allowed=~artificial)

        solution = self._extract(S, rhs, c2, problem, t_low, c_y, c_w, ineq_rows, eq_rows)
        logger.debug(
            "max-min LP %dx%d (%d eq) solved in %d pivots, t = %.6g",
            m, n, m_eq, self._iterations, solution.t,
        )
        return solution

    # -------------------------------------------------------------------------
    # Pivoting
    # -------------------------------------------------------------------------

    def _run(self, cost: np.ndarray, allowed: np.ndarray) -> None:
        T, rhs = self._T, self._rhs
        while True:
            reduced = cost - cost[self._basis] @ T
            candidates = np.flatnonzero((reduced < -self.tol) & allowed)
            if candidates.size == 0:
                return
            col = int(candidates[0])

            column = T[:, col]
            rows = np.flatnonzero(column > self.tol)
            if rows.size == 0:
                raise SolverError("max-min LP is unbounded; the box should prevent this")
            ratios = rhs[rows] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + self.tol * max(1.0, abs(best))]
            row = int(min(ties, key=lambda r: self._basis[r]))

            self._pivot(row, col)
            if self._iterations >= self.max_iterations:
                raise SolverError(f"simplex exceeded {self.max_iterations} pivots")

    def _pivot(self, row: int, col: int) -> None:
        T, rhs = self._T, self._rhs
        pivot = T[row, col]
        T[row] /= pivot
        rhs[row] /= pivot
        factors = T[:, col].copy()
        factors[row] = 0.0
        T -= np.outer(factors, T[row])
        rhs -= factors * rhs[row]
        T[:, col] = 0.0
        T[row, col] = 1.0
        self._basis[row] = col
        self._iterations += 1

    def _drive_out_artificials(self, artificial: np.ndarray) -> None:
        """Pivot zero-level artificials out of the basis where a real column allows it."""
        for row, var in enumerate(list(self._basis)):
            if not artificial[var]:
                continue
            entries = np.flatnonzero((np.abs(self._T[row]) > self.tol) & ~artificial)
            if entries.size:
                self._pivot(row, int(entries[0]))
            # otherwise the row is redundant and the artificial stays basic at zero

    # -------------------------------------------------------------------------
    # Solution recovery
    # -------------------------------------------------------------------------

    def _extract(self, S, rhs, cost, problem, t_low, c_y, c_w, ineq_rows, eq_rows) -> LPSolution:
        m, n = problem.m, problem.n
        b = problem.box
        basis = np.array(self._basis)
        B = S[:, basis]
        try:
            z_basic = np.linalg.solve(B, rhs)
            pi = np.linalg.solve(B.T, cost[basis])
        except np.linalg.LinAlgError:
            z_basic = self._rhs.copy()
            pi = np.linalg.lstsq(B.T, cost[basis], rcond=None)[0]

        z = np.zeros(S.shape[1])
        z[basis] = z_basic
        y = z[c_y:c_y + n]
        x = np.clip(y - b, -b, b)

        # Nonbasic columns sit exactly at their bound
        y_basic = np.isin(c_y + np.arange(n), basis)
        w_basic = np.isin(c_w + np.arange(n), basis)
        x[~y_basic] = -b
        x[y_basic & ~w_basic] = b

        tau = z[0]
        t = tau + t_low

        lam = -pi
        beta = lam[:m].copy()
        mu = lam[m:m + n].copy()
        nu = -(S[:, c_y:c_y + n].T @ pi)
        return LPSolution(
            status=LPStatus.OPTIMAL,
            x=x,
            t=float(t),
            beta=beta,
            mu=mu,
            nu=nu,
            iterations=self._iterations,
        )

    @staticmethod
    def _solve_constant(problem: MaxMinLP) -> LPSolution:
        """No free variables: t is pinned by the offsets alone."""
        o = problem.offsets
        eq = list(problem.eq_rows)
        ineq = [r for r in range(problem.m) if r not in set(eq)]
        beta = np.zeros(problem.m)
        if eq:
            values = o[eq]
            t = float(values[0])
            scale = 1.0 + float(np.max(np.abs(o)))
            if np.ptp(values) > 1e-9 * scale or (ineq and np.min(o[ineq]) < t - 1e-9 * scale):
                return _infeasible()
            beta[eq[0]] = 1.0
        else:
            row = int(np.argmin(o))
            t = float(o[row])
            beta[row] = 1.0
        empty = np.empty(0)
        return LPSolution(LPStatus.OPTIMAL, empty, t, beta, empty, empty, 0)


def solve_maxmin_box(problem: MaxMinLP, solver: Optional[SimplexSolver] = None) -> LPSolution:
    """Solve a MaxMinLP with a fresh (or the supplied) simplex solver."""
    return (solver or SimplexSolver()).solve(problem)


# =============================================================================
# Box-constrained least squares
# =============================================================================

@dataclass(frozen=True, eq=False)
class BoxLSResult:
    """
    x minimises ||b - A x||^2 over |x_j| <= box.

    cost_trace holds the objective after initialisation and after every
    active-set iteration; it is non-increasing.
    """
    x: np.ndarray
    cost: float
    cost_trace: Tuple[float, ...]
    optimality: float
    iterations: int


def compute_kkt_optimality(g: np.ndarray, on_bound: np.ndarray) -> float:
    """Compute the maximum violation of KKT conditions."""
    if g.size == 0:
        return 0.0
    g_kkt = g * on_bound
    free_set = on_bound == 0
    g_kkt[free_set] = np.abs(g[free_set])
    return float(np.max(g_kkt))


def _descend_face(A, b, x, on_bound, box) -> None:
    """
    Least squares over the current free set, stepping back toward the
    previous point whenever the free solution leaves the box. Updates x and
    on_bound in place.
    """
    while True:
        free_set = np.flatnonzero(on_bound == 0)
        if free_set.size == 0:
            return
        active = on_bound != 0
        x_free = x[free_set]
        b_free = b - A[:, active] @ x[active]
        z = lstsq(A[:, free_set], b_free, rcond=None)[0]

        lbv = np.flatnonzero(z < -box)
        ubv = np.flatnonzero(z > box)
        if lbv.size == 0 and ubv.size == 0:
            x[free_set] = z
            return

        v = np.concatenate([lbv, ubv])
        targets = np.concatenate([np.full(lbv.size, -box), np.full(ubv.size, box)])
        alphas = (targets - x_free[v]) / (z[v] - x_free[v])
        i = int(np.argmin(alphas))
        alpha = float(np.clip(alphas[i], 0.0, 1.0))

        x[free_set] = x_free + alpha * (z - x_free)
        hit = free_set[v[i]]
        x[hit] = targets[i]
        on_bound[hit] = -1 if i < lbv.size else 1


def solve_box_ls(
    A,
    b_vec,
    box: float,
    tolerance: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> BoxLSResult:
    """
    Bounded-variable least squares with symmetric bounds.

    Starts from the clipped unconstrained solution, then alternates exact
    face solves with releasing the bound variable whose gradient most
    strongly points into the box.
    """
    settings = get_settings()
    tol = settings.box_ls_tolerance if tolerance is None else tolerance
    max_iter = settings.box_ls_max_iterations if max_iterations is None else max_iterations

    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b_vec, dtype=np.float64).reshape(-1)
    m, n = A.shape
    if n == 0:
        cost = float(b @ b)
        return BoxLSResult(np.empty(0), cost, (cost,), 0.0, 0)

    def cost_of(x):
        r = A @ x - b
        return float(r @ r)

    x_lsq = lstsq(A, b, rcond=None)[0]
    on_bound = np.zeros(n)
    on_bound[x_lsq <= -box] = -1
    on_bound[x_lsq >= box] = 1
    x = np.clip(x_lsq, -box, box)

    trace = [cost_of(x)]
    _descend_face(A, b, x, on_bound, box)
    trace.append(cost_of(x))

    iteration = 0
    g = A.T @ (A @ x - b)
    optimality = compute_kkt_optimality(g, on_bound)
    while optimality > tol and iteration < max_iter:
        pull = g * on_bound
        move_to_free = int(np.argmax(pull))
        if pull[move_to_free] <= tol:
            break
        on_bound[move_to_free] = 0
        _descend_face(A, b, x, on_bound, box)
        iteration += 1
        trace.append(cost_of(x))
        g = A.T @ (A @ x - b)
        optimality = compute_kkt_optimality(g, on_bound)

    if optimality > tol:
        logger.debug("box LS stopped at optimality %.3e after %d iterations", optimality, iteration)

    return BoxLSResult(
        x=x,
        cost=trace[-1],
        cost_trace=tuple(trace),
        optimality=optimality,
        iterations=iteration,
    )
