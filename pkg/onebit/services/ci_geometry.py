"""
Constructive-interference geometry.

This module provides:
1. build_M: the 2K x 2Nt scaling matrix with Lambda = M @ x_E
2. Objective evaluation (max-min for PSK, MSE for QAM)
3. Structural audits: numerical rank of M, the count of entries strictly
   inside the DAC box, and a KKT residual report for max-min LP solutions

Row order of M is [alpha_1^A .. alpha_K^A, alpha_1^B .. alpha_K^B].
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from onebit.config import get_settings
from onebit.models import ModulationKind
from onebit.services.constellations import (
    Constellation,
    QamPartition,
    decompose,
    partition_qam,
)
from onebit.services.real_expansion import DacAlphabet, expand_channel, expand_vector

logger = logging.getLogger(__name__)

DEGENERATE_DET = 1e-12


class DegenerateDecompositionError(ValueError):
    """Raised when a symbol's two basis directions are (nearly) parallel."""
    pass


class DimensionMismatchError(ValueError):
    """Raised when a vector does not match the problem dimensions."""
    pass


class BoxViolationError(ValueError):
    """Raised when an audited vector leaves the DAC box by more than epsilon."""
    pass


@dataclass(frozen=True, eq=False)
class CIProblem:
    """
    Everything needed to evaluate Lambda = M x_E and the QAM MSE for one
    (channel, symbol vector) pair. Immutable once built.
    """
    M: np.ndarray
    dac: DacAlphabet
    H: np.ndarray
    H_E: np.ndarray
    s: np.ndarray
    s_E: np.ndarray
    sA: np.ndarray
    sB: np.ndarray
    constellation: Constellation
    partition: Optional[QamPartition] = None

    @property
    def k(self) -> int:
        return self.H.shape[0]

    @property
    def nt(self) -> int:
        return self.H.shape[1]

    @property
    def eq_rows(self) -> Tuple[int, ...]:
        """Rows constrained to equal t (QAM inner coordinates); empty for PSK."""
        return self.partition.inner_indices if self.partition is not None else ()


class BoundaryAudit(NamedTuple):
    indices: Tuple[int, ...]
    count: int


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the max-min LP optimality conditions."""
    simplex: float           # |sum(beta) - 1|
    stationarity: float      # ||-M^T beta + mu - nu||_inf
    complementary: float     # max complementary-slackness product
    dual_feasibility: float  # most negative inequality multiplier
    primal_feasibility: float

    @property
    def max_residual(self) -> float:
        return max(
            self.simplex,
            self.stationarity,
            self.complementary,
            self.dual_feasibility,
            self.primal_feasibility,
        )


def build_M(H, s, constellation: Constellation) -> CIProblem:
    """
    Build the scaling matrix for channel H (K x Nt) and symbols s (K,).

    For user k with h_k^T x = alpha^A sA + alpha^B sB, solving the real 2x2
    system gives alpha^A = u . [Re, Im](h_k^T x) and alpha^B = v . [Re, Im](h_k^T x)
    with u = [Im sB, -Re sB] / alpha_0 and v = [-Im sA, Re sA] / alpha_0.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    s = np.atleast_1d(np.asarray(s, dtype=np.complex128))
    k, nt = H.shape
    if s.size != k:
        raise DimensionMismatchError(f"{s.size} symbols for a channel with {k} users")
    constellation.index_of(s)

    parts = [decompose(sym, constellation) for sym in s]
    sA = np.array([p.sA for p in parts])
    sB = np.array([p.sB for p in parts])

    alpha0 = sA.real * sB.imag - sA.imag * sB.real
    if np.any(np.abs(alpha0) < DEGENERATE_DET):
        raise DegenerateDecompositionError(f"basis determinant below {DEGENERATE_DET}")

    # Real-equivalent rows of Re(h_k^T x) and Im(h_k^T x)
    re_rows = np.hstack([H.real, -H.imag])
    im_rows = np.hstack([H.imag, H.real])

    p_rows = (sB.imag / alpha0)[:, None] * re_rows - (sB.real / alpha0)[:, None] * im_rows
    q_rows = -(sA.imag / alpha0)[:, None] * re_rows + (sA.real / alpha0)[:, None] * im_rows
    M = np.vstack([p_rows, q_rows])

    partition = partition_qam(s, constellation) if constellation.kind is ModulationKind.QAM else None
    return CIProblem(
        M=M,
        dac=DacAlphabet(nt),
        H=H,
        H_E=expand_channel(H),
        s=s,
        s_E=expand_vector(s),
        sA=sA,
        sB=sB,
        constellation=constellation,
        partition=partition,
    )


def scaling_vector(P: CIProblem, x_E) -> np.ndarray:
    x_E = np.asarray(x_E, dtype=np.float64).reshape(-1)
    if x_E.size != P.M.shape[1]:
        raise DimensionMismatchError(f"x_E has {x_E.size} entries, M has {P.M.shape[1]} columns")
    return P.M @ x_E


def reconstruct_received(P: CIProblem, lam) -> np.ndarray:
    """Noiseless received symbols h_k^T x rebuilt from Lambda."""
    lam = np.asarray(lam, dtype=np.float64)
    k = P.k
    return lam[:k] * P.sA + lam[k:] * P.sB


def psk_objective(lam) -> float:
    return float(np.min(lam))


def mse_objective(x_E, beta: float, P: CIProblem, sigma2: float) -> float:
    x_E = np.asarray(x_E, dtype=np.float64).reshape(-1)
    if x_E.size != P.H_E.shape[1]:
        raise DimensionMismatchError(f"x_E has {x_E.size} entries, H_E has {P.H_E.shape[1]} columns")
    residual = P.s_E - beta * (P.H_E @ x_E)
    return float(residual @ residual + beta * beta * P.k * sigma2)


# =============================================================================
# Structural audits
# =============================================================================

def audit_rank(M) -> int:
    """Numerical rank with threshold max(shape) * eps * sigma_max."""
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * np.finfo(np.float64).eps * sv[0]
    return int(np.count_nonzero(sv > tol))


def audit_boundary(x_E, dac: DacAlphabet, epsilon: Optional[float] = None) -> BoundaryAudit:
    """
    Entries strictly inside the DAC box.

    S = {n : |x_n| < scale - epsilon}. For a vertex solution of the relaxed
    max-min problem |S| <= 2K - 1.

    Raises:
        BoxViolationError: some |x_n| exceeds scale + epsilon
    """
    x_E = np.asarray(x_E, dtype=np.float64).reshape(-1)
    if epsilon is None:
        epsilon = get_settings().boundary_epsilon_ratio * dac.scale
    magnitude = np.abs(x_E)
    if np.any(magnitude > dac.scale + epsilon):
        worst = float(np.max(magnitude))
        raise BoxViolationError(f"|x| = {worst:.3e} exceeds box {dac.scale:.3e} by more than {epsilon:.1e}")
    inside = tuple(int(i) for i in np.flatnonzero(magnitude < dac.scale - epsilon))
    return BoundaryAudit(indices=inside, count=len(inside))


def kkt_residuals(
    x_E,
    t: float,
    beta,
    mu,
    nu,
    M,
    box: float,
    offsets=None,
    eq_rows: Sequence[int] = (),
) -> KKTReport:
    """
    Optimality residuals of max t s.t. t <= M_l x + o_l, |x_n| <= box.

    Multipliers: beta for the row constraints, mu for x_n <= box, nu for
    -x_n <= box. Multipliers of equality rows may take either sign.
    """
    x = np.asarray(x_E, dtype=np.float64).reshape(-1)
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    nu = np.asarray(nu, dtype=np.float64).reshape(-1)
    offsets = np.zeros(M.shape[0]) if offsets is None else np.asarray(offsets, dtype=np.float64)

    is_eq = np.zeros(M.shape[0], dtype=bool)
    is_eq[list(eq_rows)] = True

    slack = M @ x + offsets - t
    upper_gap = box - x
    lower_gap = x + box

    simplex = abs(beta.sum() - 1.0)
    stationarity = float(np.max(np.abs(-M.T @ beta + mu - nu))) if x.size else 0.0

    complementary = max(
        float(np.max(np.abs(beta[~is_eq] * slack[~is_eq]), initial=0.0)),
        float(np.max(np.abs(mu * upper_gap), initial=0.0)),
        float(np.max(np.abs(nu * lower_gap), initial=0.0)),
    )
    dual_feasibility = max(
        0.0,
        -float(np.min(beta[~is_eq], initial=0.0)),
        -float(np.min(mu, initial=0.0)),
        -float(np.min(nu, initial=0.0)),
    )
    primal_feasibility = max(
        0.0,
        -float(np.min(slack[~is_eq], initial=0.0)),
        float(np.max(np.abs(slack[is_eq]), initial=0.0)),
        -float(np.min(upper_gap, initial=0.0)),
        -float(np.min(lower_gap, initial=0.0)),
    )
    return KKTReport(
        simplex=float(simplex),
        stationarity=stationarity,
        complementary=complementary,
        dual_feasibility=dual_feasibility,
        primal_feasibility=primal_feasibility,
    )
