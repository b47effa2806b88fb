"""
Complex <-> real-equivalent conversions and the 1-bit DAC alphabet.

This module provides:
1. expand_vector / collapse for x_E = [Re(x); Im(x)]
2. expand_channel for H_E = [[Re H, -Im H], [Im H, Re H]]
3. DacAlphabet and quantize_1bit (sign extraction with sign(0) = +1)

All arithmetic is float64 / complex128.
"""

import math
from dataclasses import dataclass

import numpy as np


class ExpansionError(ValueError):
    """Raised when a real-expanded vector cannot be collapsed."""
    pass


@dataclass(frozen=True)
class DacAlphabet:
    """
    1-bit DAC alphabet for Nt antennas.

    Every real component takes the value +scale or -scale, so each complex
    entry has squared magnitude 1/Nt and the full vector has unit power.
    """
    nt: int

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError(f"antenna count must be positive, got {self.nt}")

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(2.0 * self.nt)

    def points(self) -> np.ndarray:
        """The four complex DAC levels, in quadrant order."""
        s = self.scale
        return np.array([s + 1j * s, -s + 1j * s, -s - 1j * s, s - 1j * s])


def expand_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    return np.concatenate([x.real, x.imag])


def expand_channel(H) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def collapse(x_E) -> np.ndarray:
    """Inverse of expand_vector: entry n is x_E[n] + i*x_E[n + N]."""
    x_E = np.asarray(x_E, dtype=np.float64).reshape(-1)
    if x_E.size % 2:
        raise ExpansionError(f"real-expanded vector must have even length, got {x_E.size}")
    n = x_E.size // 2
    return x_E[:n] + 1j * x_E[n:]


def quantize_1bit(x, alphabet: DacAlphabet) -> np.ndarray:
    """
    Element-wise 1-bit quantization.

    Accepts either a complex vector (quantizes real and imaginary parts) or a
    real-expanded vector, and returns the same kind. Zero components map to
    +scale.
    """
    x = np.asarray(x)
    s = alphabet.scale
    if np.iscomplexobj(x):
        return np.where(x.real >= 0, s, -s) + 1j * np.where(x.imag >= 0, s, -s)
    return np.where(x.astype(np.float64) >= 0, s, -s)
