"""Zernike functions on a disk of radius R with Noll joint-index bookkeeping.

The normalization carries a 1/R prefactor so that the functions are
orthonormal under the plain measure r dr dtheta on the disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "ZernikeMode",
    "nm_to_noll",
    "noll_to_nm",
    "noll_table",
    "radial_coefficients",
    "radial_poly",
    "angular_factor",
    "zernike_eval",
    "modes_through_order",
    "residual_modes",
    "splits_azimuthal_pair",
]

MAX_EXACT_ORDER = 60


def _check_nm(n, m):
    if n < 0 or abs(m) > n or (n - abs(m)) % 2:
        raise ValueError(f"invalid Zernike indices (n={n}, m={m}): need n >= |m| and n - |m| even")


def _step(x):
    return 1 if x >= 0 else 0


def nm_to_noll(n: int, m: int) -> int:
    """Noll joint index k of the mode (n, m).

    Evaluates the closed-form index expression term by term, including the
    piston exception for m = 0.
    """
    _check_nm(n, m)
    T = n * (n + 1) // 2
    T2 = T % 2
    am = abs(m)
    m0 = am % 2
    m1 = (am - 1) % 2
    not_piston = 0 if am == 0 else 1
    shift = _step(m) * (T2 * m0 + (1 - T2) * m1) + _step(-m) * (T2 * m1 + (1 - T2) * m0)
    return 1 + T + am - not_piston * shift


@lru_cache(maxsize=None)
def _table_through(order: int) -> dict[int, tuple[int, int]]:
    table = {}
    for n in range(order + 1):
        for m in range(-n, n + 1, 2):
            table[nm_to_noll(n, m)] = (n, m)
    return table


def noll_table(order: int) -> list[tuple[int, int, int]]:
    """Enumeration table ``[(k, n, m), ...]`` for every mode with n <= order, sorted by k."""
    table = _table_through(order)
    return [(k, *table[k]) for k in sorted(table)]


def noll_to_nm(k: int) -> tuple[int, int]:
    """Inverse of :func:`nm_to_noll`, by lookup in the enumeration table."""
    if k < 1:
        raise ValueError(f"Noll index must be >= 1, got {k}")
    # modes with n <= N occupy exactly k = 1..(N+1)(N+2)/2
    order = 0
    while (order + 1) * (order + 2) // 2 < k:
        order += 1
    # round the table size up so the cache stays small
    order = max(16, 1 << (order - 1).bit_length()) if order > 16 else 16
    return _table_through(order)[k]


@dataclass(frozen=True, order=True)
class ZernikeMode:
    """A Zernike mode labelled by its Noll index k and its (n, m) pair."""

    k: int
    n: int
    m: int

    def __post_init__(self):
        _check_nm(self.n, self.m)
        if nm_to_noll(self.n, self.m) != self.k:
            raise ValueError(f"Noll index {self.k} does not match (n={self.n}, m={self.m})")

    @classmethod
    def from_noll(cls, k: int) -> "ZernikeMode":
        return cls(k, *noll_to_nm(k))

    @classmethod
    def from_nm(cls, n: int, m: int) -> "ZernikeMode":
        return cls(nm_to_noll(n, m), n, m)

    @property
    def m_abs(self) -> int:
        return abs(self.m)

    @property
    def norm(self) -> float:
        """sqrt(eps_m (n+1) / pi), the coefficient of the reduced function R*Z_k."""
        eps = 2 if self.m else 1
        return math.sqrt(eps * (self.n + 1) / math.pi)


def as_mode(mode) -> ZernikeMode:
    if isinstance(mode, ZernikeMode):
        return mode
    return ZernikeMode.from_noll(int(mode))


@lru_cache(maxsize=None)
def radial_coefficients(n: int, m_abs: int) -> tuple[tuple[int, int], ...]:
    """Exact integer coefficients ``((power, coeff), ...)`` of P_n^{|m|}, indexed by s."""
    _check_nm(n, m_abs)
    if n > MAX_EXACT_ORDER:
        raise ValueError(f"radial order {n} exceeds the supported cap {MAX_EXACT_ORDER}")
    half = (n - m_abs) // 2
    return tuple(
        (n - 2 * s, (-1) ** s * math.comb(n - s, s) * math.comb(n - 2 * s, half - s))
        for s in range(half + 1)
    )


def radial_poly(n: int, m_abs: int, rho):
    """Zernike radial polynomial P_n^{|m|}(rho) on 0 <= rho <= 1.

    Scalars fall back to exact rational arithmetic when the terms cancel;
    arrays accumulate terms smallest-magnitude first.
    """
    coeffs = radial_coefficients(n, abs(m_abs))
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0) or np.any(rho_arr > 1 + 1e-12):
        raise ValueError("rho must lie in [0, 1]")
    if rho_arr.ndim == 0:
        r = float(rho_arr)
        terms = [float(c) * r**p for p, c in coeffs]
        total = math.fsum(terms)
        if math.fsum(map(abs, terms)) <= 64 * abs(total):
            return total
        # heavy cancellation: redo the sum exactly
        r = Fraction(r)
        return float(sum(c * r**p for p, c in coeffs))
    terms = np.stack([c * rho_arr**p for p, c in coeffs])
    order = np.argsort(np.abs(terms), axis=0)
    return np.take_along_axis(terms, order, axis=0).sum(axis=0)


def angular_factor(m: int, theta):
    """cos(m theta) for m > 0, -sin(m theta) for m < 0, 1 for m = 0."""
    theta = np.asarray(theta, dtype=float)
    if m > 0:
        return np.cos(m * theta)
    if m < 0:
        return -np.sin(m * theta)
    return np.ones_like(theta)


def zernike_eval(mode, r, theta, R: float):
    """Z_k(r/R, theta) including the 1/R prefactor."""
    mode = as_mode(mode)
    r = np.asarray(r, dtype=float)
    if R <= 0:
        raise ValueError("aperture radius must be positive")
    if np.any(r < 0) or np.any(r > R * (1 + 1e-12)):
        raise ValueError("r must satisfy 0 <= r <= R")
    rho = np.clip(r / R, 0.0, 1.0)
    val = mode.norm / R * radial_poly(mode.n, mode.m_abs, rho) * angular_factor(mode.m, theta)
    return val if np.ndim(val) else float(val)


def modes_through_order(order: int) -> list[ZernikeMode]:
    """All modes with radial order n <= order, in Noll order."""
    return [ZernikeMode(k, n, m) for k, n, m in noll_table(order)]


def residual_modes(J: int, n_max: int) -> list[ZernikeMode]:
    """Modes left uncorrected after correcting k = 1..J, truncated at radial order n_max."""
    return [mode for mode in modes_through_order(n_max) if mode.k > J]


def splits_azimuthal_pair(J: int) -> tuple[int, int] | None:
    """(n, |m|) of the cos/sin pair split by correcting exactly k = 1..J, or None."""
    if J < 1:
        return None
    n, m = noll_to_nm(J)
    if m == 0:
        return None
    partner = nm_to_noll(n, -m)
    return (n, abs(m)) if partner > J else None
