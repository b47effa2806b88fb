"""
Branch-and-bound over 1-bit DAC sign patterns.

This module provides:
1. select_branch_index: adaptive subdivision (entry farthest from its 1-bit value)
2. SplitState: fixed / residual partition of the real-expanded transmit vector
3. Bounding models:
   - MaxMinModel: minimise -min(M x), lower bound from the max-min LP
   - MseModel: minimise ||s_E - beta H_E x||^2 + beta^2 K sigma^2 at fixed
     beta, lower bound from box least squares
4. partial_bb (P-BB, breadth-first over the residual set), fbb (depth-first
   over all entries) and exhaustive_oracle (plain enumeration)

Every search minimises; the incumbent and each candidate are scored by the
same full-vector cost so that results compare exactly with enumeration.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from onebit.config import get_settings
from onebit.models import ModulationKind
from onebit.services.ci_geometry import CIProblem, audit_boundary
from onebit.services.real_expansion import DacAlphabet, quantize_1bit
from onebit.services.solvers import MaxMinLP, SimplexSolver, solve_box_ls

logger = logging.getLogger(__name__)

CostFn = Callable[[np.ndarray], float]


class SearchSpaceTooLargeError(ValueError):
    """Raised when an exponential search exceeds its configured size guard."""
    pass


class BranchingError(ValueError):
    """Raised when asked to branch on a node without unassigned entries."""
    pass


@dataclass(frozen=True)
class BBDiagnostics:
    nodes_visited: int = 0
    depth_iterations: int = 0
    expansions: int = 0
    pruned: int = 0
    ub_trace: Tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class BBResult:
    x: np.ndarray
    objective: float
    diagnostics: BBDiagnostics = field(default_factory=BBDiagnostics)


@dataclass(frozen=True, eq=False)
class SplitState:
    """
    Partition of the 2Nt real entries.

    fixed entries keep their 1-bit values x_fixed; residual entries are the
    ones the relaxation left strictly inside the box, with their relaxed values.
    """
    fixed_idx: Tuple[int, ...]
    residual_idx: Tuple[int, ...]
    x_fixed: np.ndarray
    x_residual: np.ndarray

    @property
    def size(self) -> int:
        return len(self.fixed_idx) + len(self.residual_idx)

    def base_vector(self) -> np.ndarray:
        """Full vector with fixed values in place and relaxed residual values."""
        x = np.empty(self.size)
        x[list(self.fixed_idx)] = self.x_fixed
        x[list(self.residual_idx)] = self.x_residual
        return x

    def split_columns(self, matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(fixed columns, residual columns) of M or H_E."""
        return matrix[:, list(self.fixed_idx)], matrix[:, list(self.residual_idx)]


def make_split(x_relaxed, dac: DacAlphabet, epsilon: Optional[float] = None) -> SplitState:
    x_relaxed = np.asarray(x_relaxed, dtype=np.float64).reshape(-1)
    residual = audit_boundary(x_relaxed, dac, epsilon).indices
    residual_set = set(residual)
    fixed = tuple(i for i in range(x_relaxed.size) if i not in residual_set)
    return SplitState(
        fixed_idx=fixed,
        residual_idx=residual,
        x_fixed=quantize_1bit(x_relaxed[list(fixed)], dac),
        x_residual=x_relaxed[list(residual)].copy(),
    )


def select_branch_index(x_R, dac: DacAlphabet, unassigned: Optional[Sequence[bool]] = None) -> int:
    """
    Index (0-based, into x_R) of the unassigned entry farthest from its
    1-bit value. Ties go to the lowest index.
    """
    x_R = np.asarray(x_R, dtype=np.float64).reshape(-1)
    mask = np.ones(x_R.size, dtype=bool) if unassigned is None else np.asarray(unassigned, dtype=bool)
    if not mask.any():
        raise BranchingError("no unassigned entry to branch on")
    distance = np.abs(x_R - quantize_1bit(x_R, dac))
    distance[~mask] = -np.inf
    return int(np.argmax(distance))


# =============================================================================
# Bounding models
# =============================================================================

class MaxMinModel:
    """Minimise -min_l (M x)_l; bounds from the max-min LP with pinned columns moved to offsets."""

    def __init__(self, P: CIProblem, solver: Optional[SimplexSolver] = None):
        self.P = P
        self.solver = solver or SimplexSolver()
        self.dac = P.dac

    def cost(self, x: np.ndarray) -> float:
        return -float(np.min(self.P.M @ x))

    def lower_bound(self, x: np.ndarray, free: Sequence[int]) -> Tuple[float, np.ndarray]:
        free = list(free)
        pinned = np.ones(x.size, dtype=bool)
        pinned[free] = False
        offsets = self.P.M[:, pinned] @ x[pinned]
        solution = self.solver.solve(MaxMinLP(A=self.P.M[:, free], offsets=offsets, box=self.dac.scale))
        if not solution.optimal:
            return np.inf, np.empty(0)
        return -solution.t, solution.x


class MseModel:
    """Minimise the QAM MSE at fixed beta; bounds from box least squares."""

    def __init__(self, P: CIProblem, beta: float, sigma2: float):
        self.P = P
        self.beta = float(beta)
        self.sigma2 = float(sigma2)
        self.dac = P.dac
        self._A = self.beta * P.H_E
        self._noise = self.beta * self.beta * P.k * self.sigma2

    def cost(self, x: np.ndarray) -> float:
        r = self.P.s_E - self._A @ x
        return float(r @ r) + self._noise

    def lower_bound(self, x: np.ndarray, free: Sequence[int]) -> Tuple[float, np.ndarray]:
        free = list(free)
        pinned = np.ones(x.size, dtype=bool)
        pinned[free] = False
        target = self.P.s_E - self._A[:, pinned] @ x[pinned]
        result = solve_box_ls(self._A[:, free], target, self.dac.scale)
        return result.cost + self._noise, result.x


# =============================================================================
# Searches
# =============================================================================

@dataclass
class _Node:
    x: np.ndarray              # full vector: pinned entries 1-bit, free entries relaxed
    free: Tuple[int, ...]
    lb: float


def _children(model, node: _Node, dac: DacAlphabet):
    """Branch on the free entry farthest from 1-bit; yields (child, quantized completion)."""
    j = node.free[select_branch_index(node.x[list(node.free)], dac)]
    rest = tuple(i for i in node.free if i != j)
    for value in (-dac.scale, dac.scale):
        x = node.x.copy()
        x[j] = value
        if rest:
            lb, relaxed = model.lower_bound(x, rest)
            if np.isfinite(lb):
                x[list(rest)] = relaxed
        else:
            lb = model.cost(x)
        candidate = x.copy()
        if rest and np.isfinite(lb):
            candidate[list(rest)] = quantize_1bit(x[list(rest)], dac)
        yield _Node(x=x, free=rest, lb=lb), candidate


def partial_bb(
    model,
    x_start: np.ndarray,
    residual_idx: Sequence[int],
    incumbent: np.ndarray,
    prune_tolerance: Optional[float] = None,
) -> BBResult:
    """
    Breadth-first branch-and-bound restricted to residual_idx.

    All surviving nodes of one depth are expanded before the next depth; a
    child is pruned when its bound reaches UB0 + prune_tolerance. UB0 only
    moves on strict improvement, so ub_trace is non-increasing.
    """
    tol = get_settings().bb_prune_tolerance if prune_tolerance is None else prune_tolerance
    dac = model.dac
    x_ub = np.asarray(incumbent, dtype=np.float64).copy()
    ub = model.cost(x_ub)
    trace = [ub]
    nodes = expansions = pruned = depth = 0

    level = [_Node(x=np.asarray(x_start, dtype=np.float64).copy(), free=tuple(residual_idx), lb=-np.inf)]
    level = [node for node in level if node.free]
    while level:
        children: List[_Node] = []
        for node in level:
            expansions += 1
            for child, candidate in _children(model, node, dac):
                nodes += 1
                if not np.isfinite(child.lb):
                    pruned += 1
                    continue
                value = model.cost(candidate)
                if value < ub:
                    ub, x_ub = value, candidate
                children.append(child)

        depth += 1
        survivors = []
        for child in children:
            if child.lb >= ub + tol:
                pruned += 1
            elif child.free:
                survivors.append(child)
        trace.append(ub)
        logger.debug("P-BB depth %d: %d open nodes, UB0 = %.9g", depth, len(survivors), ub)
        level = survivors

    diagnostics = BBDiagnostics(
        nodes_visited=nodes,
        depth_iterations=depth,
        expansions=expansions,
        pruned=pruned,
        ub_trace=tuple(trace),
    )
    return BBResult(x=x_ub, objective=ub, diagnostics=diagnostics)


def depth_first_bb(
    model,
    x_start: np.ndarray,
    residual_idx: Sequence[int],
    incumbent: np.ndarray,
    prune_tolerance: Optional[float] = None,
) -> BBResult:
    """Depth-first branch-and-bound, expanding the better-bounded child first."""
    tol = get_settings().bb_prune_tolerance if prune_tolerance is None else prune_tolerance
    dac = model.dac
    x_ub = np.asarray(incumbent, dtype=np.float64).copy()
    ub = model.cost(x_ub)
    trace = [ub]
    nodes = expansions = pruned = max_depth = 0

    root = _Node(x=np.asarray(x_start, dtype=np.float64).copy(), free=tuple(residual_idx), lb=-np.inf)
    stack: List[Tuple[_Node, int]] = [(root, 0)] if root.free else []
    while stack:
        node, depth = stack.pop()
        if node.lb >= ub + tol:
            pruned += 1
            continue
        expansions += 1
        max_depth = max(max_depth, depth + 1)
        children = []
        for child, candidate in _children(model, node, dac):
            nodes += 1
            if not np.isfinite(child.lb):
                pruned += 1
                continue
            value = model.cost(candidate)
            if value < ub:
                ub, x_ub = value, candidate
                trace.append(ub)
            if child.free:
                children.append(child)
        # push worse child first so the better bound is explored first
        children.sort(key=lambda c: c.lb, reverse=True)
        stack.extend((child, depth + 1) for child in children)

    diagnostics = BBDiagnostics(
        nodes_visited=nodes,
        depth_iterations=max_depth,
        expansions=expansions,
        pruned=pruned,
        ub_trace=tuple(trace),
    )
    return BBResult(x=x_ub, objective=ub, diagnostics=diagnostics)


def pbb_psk(
    P: CIProblem,
    x_relaxed,
    warm=None,
    solver: Optional[SimplexSolver] = None,
    prune_tolerance: Optional[float] = None,
) -> BBResult:
    """
    P-BB for PSK from the relaxed max-min solution.

    Entries of x_relaxed already on the box keep their 1-bit values; the
    rest are searched exactly. objective is -min(Lambda) (minimisation sense).
    """
    split = make_split(x_relaxed, P.dac)
    x_start = split.base_vector()
    incumbent = quantize_1bit(x_relaxed, P.dac) if warm is None else np.asarray(warm, dtype=np.float64)
    if len(split.residual_idx) > 2 * P.k - 1:
        logger.warning("relaxed solution has %d residual entries (> 2K-1 = %d)", len(split.residual_idx), 2 * P.k - 1)
    return partial_bb(MaxMinModel(P, solver), x_start, split.residual_idx, incumbent, prune_tolerance)


def pbb_qam_inner(
    P: CIProblem,
    beta: float,
    sigma2: float,
    split: SplitState,
    incumbent=None,
    prune_tolerance: Optional[float] = None,
) -> BBResult:
    """
    P-BB over the residual entries at fixed beta.

    The root relaxation is the box least squares over all residual entries
    (not counted as a visited node); its quantisation competes with the
    incumbent for the initial UB0.
    """
    model = MseModel(P, beta, sigma2)
    x_start = split.base_vector()
    residual = list(split.residual_idx)
    if residual:
        _, relaxed = model.lower_bound(x_start, residual)
        x_start[residual] = relaxed
    root_candidate = x_start.copy()
    root_candidate[residual] = quantize_1bit(x_start[residual], P.dac)
    if incumbent is None:
        incumbent = root_candidate
    else:
        incumbent = np.asarray(incumbent, dtype=np.float64)
        if model.cost(root_candidate) < model.cost(incumbent):
            incumbent = root_candidate
    return partial_bb(model, x_start, split.residual_idx, incumbent, prune_tolerance)


def fbb(
    P: CIProblem,
    mode: ModulationKind = ModulationKind.PSK,
    beta: Optional[float] = None,
    sigma2: float = 0.0,
    solver: Optional[SimplexSolver] = None,
    prune_tolerance: Optional[float] = None,
    incumbent=None,
) -> BBResult:
    """
    Full branch-and-bound over all 2Nt entries.

    mode PSK minimises -min(Lambda); mode QAM minimises the MSE at the
    given beta. The root relaxation is quantised for the first incumbent.

    Raises:
        SearchSpaceTooLargeError: 2Nt above the configured guard
    """
    limit = get_settings().fbb_max_dimension
    n = P.H_E.shape[1]
    if n > limit:
        raise SearchSpaceTooLargeError(f"F-BB over {n} entries exceeds the guard of {limit}")

    mode = ModulationKind(mode)
    if mode is ModulationKind.PSK:
        model = MaxMinModel(P, solver)
    else:
        if beta is None:
            raise ValueError("QAM F-BB needs a fixed beta")
        model = MseModel(P, beta, sigma2)

    everything = list(range(n))
    _, relaxed = model.lower_bound(np.zeros(n), everything)
    root_candidate = quantize_1bit(relaxed, P.dac)
    if incumbent is not None:
        incumbent = np.asarray(incumbent, dtype=np.float64)
        if model.cost(root_candidate) < model.cost(incumbent):
            incumbent = root_candidate
    else:
        incumbent = root_candidate
    return depth_first_bb(model, relaxed, everything, incumbent, prune_tolerance)


def exhaustive_oracle(
    cost: CostFn,
    x_base,
    residual_idx: Sequence[int],
    dac: DacAlphabet,
) -> Tuple[np.ndarray, float]:
    """
    Enumerate every sign pattern of residual_idx (other entries from x_base).

    Patterns are visited in lexicographic order with -scale before +scale;
    the first strict minimiser wins.
    """
    limit = get_settings().exhaustive_max_dimension
    residual = list(residual_idx)
    if len(residual) > limit:
        raise SearchSpaceTooLargeError(f"enumeration over {len(residual)} entries exceeds the guard of {limit}")

    x = np.asarray(x_base, dtype=np.float64).copy()
    best_x, best = None, np.inf
    for pattern in itertools.product((-dac.scale, dac.scale), repeat=len(residual)):
        x[residual] = pattern
        value = cost(x)
        if value < best:
            best, best_x = value, x.copy()
    return best_x, float(best)


def maxmin_cost(P: CIProblem) -> CostFn:
    return MaxMinModel(P).cost


def mse_cost(P: CIProblem, beta: float, sigma2: float) -> CostFn:
    return MseModel(P, beta, sigma2).cost
