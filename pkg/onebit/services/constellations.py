"""
PSK / square-QAM alphabets with Gray labelling.

This module provides:
1. Constellation tables (points, bit labels) built once per (kind, order)
2. The two-basis symbol decomposition s = sA + sB for PSK and QAM
3. The QAM outer/inner partition of the 2K scaling coefficients
4. Modulation, hard demodulation and bit-error counting

PSK points sit at angles pi/M + 2*pi*k/M with label gray(k). QAM points use
levels -(L-1), ..., -1, 1, ..., L-1 on each axis with an independent Gray
code per axis, scaled to unit average energy. Point index is
i_re * L + i_im, which is also the demodulation tie-break order.
"""

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Tuple

import numpy as np

from onebit.models import ModulationKind

MEMBERSHIP_TOL = 1e-9


class ConstellationError(ValueError):
    """Raised for off-alphabet symbols, unsupported orders or bad bit streams."""
    pass


class SymbolDecomposition(NamedTuple):
    """Basis-aligned components of a symbol; sA + sB == s."""
    sA: complex
    sB: complex


class QamPartition(NamedTuple):
    """
    Split of the 2K scaling coefficients into outer (may grow) and inner
    (must hit the target exactly). Index k is alpha_k^A, index K + k is alpha_k^B.
    """
    outer_indices: Tuple[int, ...]
    inner_indices: Tuple[int, ...]


def gray(k):
    return k ^ (k >> 1)


@dataclass(frozen=True, eq=False)
class Constellation:
    kind: ModulationKind
    order: int
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @property
    def bits(self) -> np.ndarray:
        """(order, bits_per_symbol) array of 0/1, MSB first."""
        return _label_bits(self.labels, self.bits_per_symbol)

    @property
    def max_component(self) -> float:
        """Largest real-coordinate magnitude of the alphabet."""
        return float(np.max(np.abs(self.points.real)))

    @property
    def name(self) -> str:
        if self.kind is ModulationKind.PSK and self.order == 4:
            return "qpsk"
        return f"{self.order}{self.kind.value.lower()}"

    def index_of(self, symbols) -> np.ndarray:
        """Alphabet index of every symbol; raises if any is off the alphabet."""
        symbols = np.atleast_1d(np.asarray(symbols, dtype=np.complex128))
        dist = np.abs(symbols[:, None] - self.points[None, :])
        idx = np.argmin(dist, axis=1)
        if np.any(dist[np.arange(symbols.size), idx] > MEMBERSHIP_TOL):
            raise ConstellationError(f"symbol not on the {self.name} alphabet")
        return idx


def _label_bits(labels: np.ndarray, nbits: int) -> np.ndarray:
    shifts = np.arange(nbits - 1, -1, -1)
    return ((labels[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


@lru_cache(maxsize=None)
def make_constellation(kind: ModulationKind, order: int) -> Constellation:
    kind = ModulationKind(kind)
    if order < 4 or order & (order - 1):
        raise ConstellationError(f"order must be a power of two >= 4, got {order}")

    if kind is ModulationKind.PSK:
        k = np.arange(order)
        points = np.exp(1j * (np.pi / order + 2 * np.pi * k / order))
        labels = gray(k)
    else:
        side = math.isqrt(order)
        if side * side != order:
            raise ConstellationError(f"square QAM needs a perfect-square order, got {order}")
        levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
        norm = math.sqrt(2.0 * (order - 1) / 3.0)
        i_re, i_im = np.divmod(np.arange(order), side)
        points = (levels[i_re] + 1j * levels[i_im]) / norm
        half = side.bit_length() - 1
        labels = (gray(i_re) << half) | gray(i_im)

    points.setflags(write=False)
    labels = np.asarray(labels, dtype=np.int64)
    labels.setflags(write=False)
    return Constellation(kind=kind, order=order, points=points, labels=labels)


_NAME_RE = re.compile(r"^(\d*)(psk|qam)$")


def parse_modulation(name: str) -> Constellation:
    """'qpsk', '8psk', '16psk', '16qam', '64qam' -> Constellation."""
    key = name.strip().lower()
    if key == "qpsk":
        return make_constellation(ModulationKind.PSK, 4)
    match = _NAME_RE.match(key)
    if match is None or not match.group(1):
        raise ConstellationError(f"unknown modulation {name!r}")
    kind = ModulationKind.PSK if match.group(2) == "psk" else ModulationKind.QAM
    return make_constellation(kind, int(match.group(1)))


# =============================================================================
# Decomposition and partition
# =============================================================================

def decompose_psk(s: complex, order: int) -> SymbolDecomposition:
    """
    Split an M-PSK point into components parallel to its two decision
    boundaries.

    sA lies along e^{i(theta - pi/M)} and sB along e^{i(theta + pi/M)}, with
    positive real weights obtained from the 2x2 real system sA + sB = s.
    """
    s = complex(s)
    constellation = make_constellation(ModulationKind.PSK, order)
    if abs(abs(s) - 1.0) > MEMBERSHIP_TOL:
        raise ConstellationError(f"PSK symbol must have unit modulus, got |s| = {abs(s)}")
    constellation.index_of(s)

    theta = math.atan2(s.imag, s.real)
    dir_a = complex(math.cos(theta - math.pi / order), math.sin(theta - math.pi / order))
    dir_b = complex(math.cos(theta + math.pi / order), math.sin(theta + math.pi / order))
    system = np.array([[dir_a.real, dir_b.real], [dir_a.imag, dir_b.imag]])
    a, b = np.linalg.solve(system, np.array([s.real, s.imag]))
    return SymbolDecomposition(sA=a * dir_a, sB=b * dir_b)


def decompose_qam(s: complex) -> SymbolDecomposition:
    s = complex(s)
    return SymbolDecomposition(sA=complex(s.real, 0.0), sB=complex(0.0, s.imag))


def decompose(s: complex, constellation: Constellation) -> SymbolDecomposition:
    if constellation.kind is ModulationKind.PSK:
        return decompose_psk(s, constellation.order)
    return decompose_qam(s)


def partition_qam(symbols, constellation: Constellation) -> QamPartition:
    if constellation.kind is not ModulationKind.QAM:
        raise ConstellationError("outer/inner partition is defined for QAM only")
    symbols = np.atleast_1d(np.asarray(symbols, dtype=np.complex128))
    constellation.index_of(symbols)

    k = symbols.size
    edge = constellation.max_component - MEMBERSHIP_TOL
    outer_a = np.abs(symbols.real) >= edge
    outer_b = np.abs(symbols.imag) >= edge
    is_outer = np.concatenate([outer_a, outer_b])
    outer = tuple(int(i) for i in np.flatnonzero(is_outer))
    inner = tuple(int(i) for i in np.flatnonzero(~is_outer))
    assert len(outer) + len(inner) == 2 * k
    return QamPartition(outer_indices=outer, inner_indices=inner)


# =============================================================================
# Modulation / demodulation
# =============================================================================

def modulate(bits, constellation: Constellation) -> Tuple[np.ndarray, np.ndarray]:
    """
    Map a flat bit stream to symbols.

    Returns:
        (symbols, alphabet indices)
    """
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    nbits = constellation.bits_per_symbol
    if bits.size % nbits:
        raise ConstellationError(f"bit count {bits.size} is not a multiple of {nbits}")
    weights = 1 << np.arange(nbits - 1, -1, -1)
    label_values = bits.reshape(-1, nbits) @ weights
    index_of_label = np.empty(constellation.order, dtype=np.int64)
    index_of_label[constellation.labels] = np.arange(constellation.order)
    indices = index_of_label[label_values]
    return constellation.points[indices], indices


def demodulate_many(y, constellation: Constellation, beta: float = 1.0) -> np.ndarray:
    """Vectorised hard decision; ties go to the lowest alphabet index."""
    y = np.atleast_1d(np.asarray(y, dtype=np.complex128))
    points = constellation.points
    if constellation.kind is ModulationKind.PSK:
        diff = np.angle(y)[:, None] - np.angle(points)[None, :]
        dist = np.abs(np.angle(np.exp(1j * diff)))
    else:
        if beta <= 0:
            raise ConstellationError(f"QAM demodulation needs beta > 0, got {beta}")
        r = beta * y
        dist = (r.real[:, None] - points.real[None, :]) ** 2 + (r.imag[:, None] - points.imag[None, :]) ** 2
    return np.argmin(dist, axis=1)


def demodulate(y: complex, constellation: Constellation, beta: float = 1.0) -> Tuple[int, np.ndarray]:
    """
    Hard-decide one received sample.

    PSK decides by nearest phase and ignores beta; QAM rescales by beta and
    decides by Euclidean distance.

    Returns:
        (alphabet index, Gray bits of that point)
    """
    index = int(demodulate_many([y], constellation, beta)[0])
    return index, constellation.bits[index]


def bits_of(indices, constellation: Constellation) -> np.ndarray:
    return constellation.bits[np.asarray(indices, dtype=np.int64)].reshape(-1)


def count_bit_errors(sent, decided) -> int:
    sent = np.asarray(sent).reshape(-1)
    decided = np.asarray(decided).reshape(-1)
    if sent.shape != decided.shape:
        raise ConstellationError(f"bit streams differ in length: {sent.size} vs {decided.size}")
    return int(np.count_nonzero(sent != decided))
