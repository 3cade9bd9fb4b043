"""Mod-1 mirroring of unit-interval values about message pivots.

A symbol ``M`` of ``m`` bits owns the pivot ``M / 2**(m+1)``; reflecting
``u`` about it, ``(2*pivot - u) mod 1``, is a measure-preserving involution
of [0, 1).  For ``m == 1`` the codec uses the complementary form
``1 - u`` / ``u`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SymbolSpace:
    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be non-negative")

    @property
    def size(self) -> int:
        return 1 << self.m

    def pivots(self) -> np.ndarray:
        return np.arange(self.size) / float(1 << (self.m + 1))

    def shift(self, M: int, M_star: int) -> float:
        """Circular shift 2*(pivot(M) - pivot(M_star)) taking correct to hypothesised values."""
        return 2.0 * (pivot(self.m, M) - pivot(self.m, M_star))


def _check_symbol(m: int, M: int) -> None:
    if m < 0:
        raise ValueError("m must be non-negative")
    if not 0 <= M < (1 << m):
        raise ValueError(f"symbol {M} out of range for m={m}")


def pivot(m: int, M: int) -> float:
    _check_symbol(m, M)
    return M / float(1 << (m + 1))


def mirror(u, m: int, M: int):
    """``(2*pivot(m, M) - u) mod 1``; scalar in, scalar out."""
    _check_symbol(m, M)
    two_psi = M / float(1 << m)
    out = np.mod(two_psi - np.asarray(u, dtype=float), 1.0)
    # a tiny negative argument rounds up to 1.0 under mod; keep the half-open range
    out = np.where(out >= 1.0, _BELOW_ONE, out)
    return float(out) if out.ndim == 0 else out


def mirror_1bit(u, M: int):
    if M not in (0, 1):
        raise ValueError("1-bit symbol must be 0 or 1")
    arr = np.asarray(u, dtype=float)
    out = 1.0 - arr if M == 0 else arr.copy()
    return float(out) if out.ndim == 0 else out


def apply_mirror(u, m: int, M: int):
    """The codec's mirroring rule: complementary form at m=1, mod-1 reflection otherwise."""
    if m == 1:
        return mirror_1bit(u, M)
    return mirror(u, m, M)


def mirror_all(u, m: int) -> np.ndarray:
    """Stack of codec-mirrored copies of ``u``, one row per symbol."""
    arr = np.asarray(u, dtype=float)
    return np.stack([np.asarray(apply_mirror(arr, m, M)) for M in range(1 << m)])


def shift_identity_check(u: float, m: int, M_star: int, M: int) -> float:
    """Residual of mirror(u, M) == (mirror(u, M_star) + shift) mod 1, measured on the circle."""
    lhs = mirror(u, m, M)
    rhs = float(np.mod(mirror(u, m, M_star) + 2.0 * (pivot(m, M) - pivot(m, M_star)), 1.0))
    d = abs(lhs - rhs)
    # 0 and 1 - eps are neighbours on the circle
    return min(d, 1.0 - d)
