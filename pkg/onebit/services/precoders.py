"""
End-to-end precoders.

Every precoder maps (H, s, constellation, sigma^2) to a PrecodeResult. PSK
paths report objective = min(Lambda) (larger is better) and beta = 1; QAM
paths report the MSE (smaller is better) at their own precoding factor beta.

Registry names (see get_precoder):
    zf-inf, zf-1bit, ci-1bit, opsu, pbb, fbb
For QAM, pbb and fbb run the alternating optimisation with a P-BB or F-BB
inner search respectively.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from onebit.config import get_settings
from onebit.models import ModulationKind
from onebit.services.bb_engine import (
    BBDiagnostics,
    fbb,
    make_split,
    pbb_psk,
    pbb_qam_inner,
)
from onebit.services.ci_geometry import CIProblem, audit_rank, build_M, mse_objective
from onebit.services.constellations import Constellation
from onebit.services.real_expansion import DacAlphabet, collapse, expand_vector, quantize_1bit
from onebit.services.solvers import LPSolution, MaxMinLP, SimplexSolver, SolverError, solve_maxmin_box

logger = logging.getLogger(__name__)


class ChannelRankError(ValueError):
    """Raised when zero-forcing is asked to invert a rank-deficient channel."""
    pass


class UnknownPrecoderError(KeyError):
    """Raised for a precoder name missing from the registry."""
    pass


@dataclass(frozen=True, eq=False)
class PrecodeResult:
    x: np.ndarray
    beta: float
    objective: float
    diagnostics: BBDiagnostics = field(default_factory=BBDiagnostics)
    alt_rounds: int = 0
    mse_trace: Tuple[float, ...] = ()
    capped: bool = False
    relaxed: Optional[np.ndarray] = field(default=None, repr=False)
    lp: Optional[LPSolution] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return self.diagnostics.depth_iterations + self.alt_rounds


# =============================================================================
# Baselines
# =============================================================================

def compute_beta(x, H, s, sigma2: float) -> float:
    """MSE-optimal receive scaling Re(x^H H^H s) / (||Hx||^2 + K sigma^2)."""
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    s = np.asarray(s, dtype=np.complex128).reshape(-1)
    hx = H @ x
    denominator = float(np.vdot(hx, hx).real) + H.shape[0] * sigma2
    if denominator == 0.0:
        return 0.0
    return float(np.vdot(hx, s).real) / denominator


def compute_beta_real(x_E, H_E, s_E, k: int, sigma2: float) -> float:
    """Real-expanded form of compute_beta."""
    hx = np.asarray(H_E) @ np.asarray(x_E, dtype=np.float64)
    denominator = float(hx @ hx) + k * sigma2
    if denominator == 0.0:
        return 0.0
    return float(hx @ np.asarray(s_E)) / denominator


def _psk_objective_of(P: CIProblem, x_E: np.ndarray) -> float:
    return float(np.min(P.M @ x_E))


def zf_precode(
    H,
    s,
    quantized: bool = False,
    constellation: Optional[Constellation] = None,
    sigma2: float = 0.0,
) -> PrecodeResult:
    """
    Zero-forcing H^H (H H^H)^{-1} s at unit power, optionally 1-bit quantised.

    With a PSK constellation the objective is min(Lambda); with QAM it is the
    MSE at the compute_beta factor.

    Raises:
        ChannelRankError: H does not have full row rank
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    s = np.asarray(s, dtype=np.complex128).reshape(-1)
    if audit_rank(H) < H.shape[0]:
        raise ChannelRankError(f"channel rank {audit_rank(H)} below K = {H.shape[0]}")

    x = H.conj().T @ np.linalg.solve(H @ H.conj().T, s)
    x = x / np.linalg.norm(x)
    if quantized:
        x = quantize_1bit(x, DacAlphabet(H.shape[1]))

    beta, objective = 1.0, float("nan")
    if constellation is not None:
        P = build_M(H, s, constellation)
        if constellation.kind is ModulationKind.PSK:
            objective = _psk_objective_of(P, expand_vector(x))
        else:
            beta = compute_beta(x, H, s, sigma2)
            objective = mse_objective(expand_vector(x), beta, P, sigma2)
    return PrecodeResult(x=x, beta=beta, objective=objective)


# =============================================================================
# PSK
# =============================================================================

def relax_ci_problem(P: CIProblem, solver: Optional[SimplexSolver]) -> LPSolution:
    lp = solve_maxmin_box(
        MaxMinLP(A=P.M, offsets=np.zeros(P.M.shape[0]), box=P.dac.scale, eq_rows=P.eq_rows),
        solver,
    )
    if not lp.optimal:
        raise SolverError("relaxed CI problem reported infeasible")
    return lp


def _gamma_order(P: CIProblem, residual_idx) -> np.ndarray:
    """Residual positions ordered by descending min_l |M[l, n]| (stable)."""
    residual = list(residual_idx)
    if not residual:
        return np.empty(0, dtype=np.int64)
    gamma = np.min(np.abs(P.M[:, residual]), axis=0)
    return np.argsort(-gamma, kind="stable")


def ci_onebit_psk(H, s, constellation: Constellation, solver: Optional[SimplexSolver] = None) -> PrecodeResult:
    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    x_E = quantize_1bit(lp.x, P.dac)
    return PrecodeResult(
        x=collapse(x_E),
        beta=1.0,
        objective=_psk_objective_of(P, x_E),
        relaxed=lp.x,
        lp=lp,
    )


def pbb_psk_precode(H, s, constellation: Constellation, solver: Optional[SimplexSolver] = None) -> PrecodeResult:
    solver = solver or SimplexSolver()
    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    result = pbb_psk(P, lp.x, solver=solver)
    return PrecodeResult(
        x=collapse(result.x),
        beta=1.0,
        objective=-result.objective,
        diagnostics=result.diagnostics,
        relaxed=lp.x,
        lp=lp,
    )


def fbb_psk_precode(H, s, constellation: Constellation, solver: Optional[SimplexSolver] = None) -> PrecodeResult:
    P = build_M(H, s, constellation)
    result = fbb(P, ModulationKind.PSK, solver=solver)
    return PrecodeResult(
        x=collapse(result.x),
        beta=1.0,
        objective=-result.objective,
        diagnostics=result.diagnostics,
    )


def opsu_psk(H, s, constellation: Constellation, solver: Optional[SimplexSolver] = None) -> PrecodeResult:
    """
    Ordered partial sequential update.

    One pass over the residual entries in descending gamma order; each entry
    is tried at both signs with all other entries at their current values,
    and the best of {current, -scale, +scale} is kept (current wins ties).
    """
    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    split = make_split(lp.x, P.dac)
    x_E = quantize_1bit(lp.x, P.dac)
    best = _psk_objective_of(P, x_E)

    residual = split.residual_idx
    for pos in _gamma_order(P, residual):
        j = residual[pos]
        for value in (-P.dac.scale, P.dac.scale):
            trial = x_E.copy()
            trial[j] = value
            score = _psk_objective_of(P, trial)
            if score > best:
                best, x_E = score, trial

    return PrecodeResult(x=collapse(x_E), beta=1.0, objective=best, relaxed=lp.x, lp=lp)


# =============================================================================
# QAM
# =============================================================================

def ci_onebit_qam(
    H,
    s,
    constellation: Constellation,
    sigma2: float,
    solver: Optional[SimplexSolver] = None,
) -> PrecodeResult:
    """Relaxed CI problem with inner coordinates as equalities, quantised, scored by MSE."""
    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    x_E = quantize_1bit(lp.x, P.dac)
    beta = compute_beta_real(x_E, P.H_E, P.s_E, P.k, sigma2)
    return PrecodeResult(
        x=collapse(x_E),
        beta=beta,
        objective=mse_objective(x_E, beta, P, sigma2),
        relaxed=lp.x,
        lp=lp,
    )


def alt_opt_pbb_qam(
    H,
    s,
    constellation: Constellation,
    sigma2: float,
    epsilon0: Optional[float] = None,
    max_rounds: Optional[int] = None,
    inner: str = "pbb",
    solver: Optional[SimplexSolver] = None,
) -> PrecodeResult:
    """
    Alternating optimisation of beta and the 1-bit vector.

    Each round sets beta to its closed-form optimum for the current vector,
    then searches the vector exactly at that beta (P-BB over the residual
    set of the relaxed solution, or F-BB over all entries). Stops when the
    MSE changes by at most epsilon0 or after max_rounds.
    """
    settings = get_settings()
    epsilon0 = settings.alt_opt_epsilon if epsilon0 is None else epsilon0
    max_rounds = settings.alt_opt_max_rounds if max_rounds is None else max_rounds
    if epsilon0 <= 0:
        raise ValueError(f"epsilon0 must be positive, got {epsilon0}")
    if inner not in ("pbb", "fbb"):
        raise ValueError(f"inner search must be 'pbb' or 'fbb', got {inner!r}")

    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    split = make_split(lp.x, P.dac)
    x_E = quantize_1bit(lp.x, P.dac)

    beta = compute_beta_real(x_E, P.H_E, P.s_E, P.k, sigma2)
    mse_prev = mse_objective(x_E, beta, P, sigma2)
    trace = [mse_prev]
    nodes = depth = expansions = pruned = 0
    rounds, converged = 0, False

    while rounds < max_rounds:
        rounds += 1
        beta = compute_beta_real(x_E, P.H_E, P.s_E, P.k, sigma2)
        if inner == "pbb":
            result = pbb_qam_inner(P, beta, sigma2, split, incumbent=x_E)
        else:
            result = fbb(P, ModulationKind.QAM, beta=beta, sigma2=sigma2, incumbent=x_E)
        x_E = result.x
        nodes += result.diagnostics.nodes_visited
        depth += result.diagnostics.depth_iterations
        expansions += result.diagnostics.expansions
        pruned += result.diagnostics.pruned

        mse = mse_objective(x_E, beta, P, sigma2)
        trace.append(mse)
        if abs(mse - mse_prev) <= epsilon0:
            converged = True
            break
        mse_prev = mse

    if not converged:
        logger.warning("alternating optimisation hit the %d-round cap", max_rounds)

    beta = compute_beta_real(x_E, P.H_E, P.s_E, P.k, sigma2)
    diagnostics = BBDiagnostics(
        nodes_visited=nodes,
        depth_iterations=depth,
        expansions=expansions,
        pruned=pruned,
        ub_trace=tuple(trace),
    )
    return PrecodeResult(
        x=collapse(x_E),
        beta=beta,
        objective=mse_objective(x_E, beta, P, sigma2),
        diagnostics=diagnostics,
        alt_rounds=rounds,
        mse_trace=tuple(trace),
        capped=not converged,
        relaxed=lp.x,
        lp=lp,
    )


def opsu_qam(
    H,
    s,
    constellation: Constellation,
    sigma2: float,
    solver: Optional[SimplexSolver] = None,
) -> PrecodeResult:
    """
    OPSU for QAM: like opsu_psk, but every candidate is scored by its MSE at
    its own recomputed beta.
    """
    P = build_M(H, s, constellation)
    lp = relax_ci_problem(P, solver)
    split = make_split(lp.x, P.dac)
    x_E = quantize_1bit(lp.x, P.dac)

    def score(x):
        beta = compute_beta_real(x, P.H_E, P.s_E, P.k, sigma2)
        return mse_objective(x, beta, P, sigma2), beta

    best, beta = score(x_E)
    residual = split.residual_idx
    for pos in _gamma_order(P, residual):
        j = residual[pos]
        for value in (-P.dac.scale, P.dac.scale):
            trial = x_E.copy()
            trial[j] = value
            mse, trial_beta = score(trial)
            if mse < best:
                best, beta, x_E = mse, trial_beta, trial

    return PrecodeResult(x=collapse(x_E), beta=beta, objective=best, relaxed=lp.x, lp=lp)


# =============================================================================
# Registry
# =============================================================================

Precoder = Callable[..., PrecodeResult]


def _by_kind(psk: Callable, qam: Callable) -> Precoder:
    def run(H, s, constellation: Constellation, sigma2: float = 0.0, epsilon0: Optional[float] = None) -> PrecodeResult:
        if constellation.kind is ModulationKind.PSK:
            return psk(H, s, constellation)
        return qam(H, s, constellation, sigma2, epsilon0)

    return run


PRECODERS: Dict[str, Precoder] = {
    "zf-inf": lambda H, s, c, sigma2=0.0, epsilon0=None: zf_precode(H, s, False, c, sigma2),
    "zf-1bit": lambda H, s, c, sigma2=0.0, epsilon0=None: zf_precode(H, s, True, c, sigma2),
    "ci-1bit": _by_kind(ci_onebit_psk, lambda H, s, c, sigma2, eps: ci_onebit_qam(H, s, c, sigma2)),
    "opsu": _by_kind(opsu_psk, lambda H, s, c, sigma2, eps: opsu_qam(H, s, c, sigma2)),
    "pbb": _by_kind(pbb_psk_precode, lambda H, s, c, sigma2, eps: alt_opt_pbb_qam(H, s, c, sigma2, eps)),
    "fbb": _by_kind(fbb_psk_precode, lambda H, s, c, sigma2, eps: alt_opt_pbb_qam(H, s, c, sigma2, eps, inner="fbb")),
}

QUANTIZED = {"zf-1bit", "ci-1bit", "opsu", "pbb", "fbb"}


def get_precoder(name: str) -> Precoder:
    try:
        return PRECODERS[name.strip().lower()]
    except KeyError:
        raise UnknownPrecoderError(f"unknown precoder {name!r}; choose from {', '.join(PRECODERS)}") from None
