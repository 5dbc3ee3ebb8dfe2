"""Laguerre-Gauss basis states carrying orbital angular momentum."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "OamLabel",
    "BeamGeometry",
    "laguerre_coefficients",
    "laguerre",
    "laguerre_recurrence",
    "lg_norm",
    "lg_profile",
    "lg_radial",
    "label_grid",
]

MAX_RADIAL_INDEX = 60


@dataclass(frozen=True, order=True)
class OamLabel:
    """Azimuthal index l and radial index p of an LG basis state."""

    l: int
    p: int

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"radial index must be nonnegative, got p={self.p}")

    def __iter__(self):
        yield self.l
        yield self.p

    def __str__(self):
        return f"|{self.l},{self.p}>"


def label_grid(L: int, P: int) -> list[OamLabel]:
    """Labels with |l| <= L and 0 <= p <= P, ordered by l then p."""
    return [OamLabel(l, p) for l in range(-L, L + 1) for p in range(P + 1)]


@dataclass(frozen=True)
class BeamGeometry:
    """Gaussian beam parameters at a propagation distance z (all lengths in the same unit)."""

    w0: float
    z: float
    wavelength: float

    def __post_init__(self):
        if self.w0 <= 0 or self.wavelength <= 0 or self.z < 0:
            raise ValueError("w0 and wavelength must be positive and z nonnegative")

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def z_R(self) -> float:
        return 0.5 * self.k * self.w0**2

    @property
    def w(self) -> float:
        return self.w0 * math.sqrt(1 + (self.z / self.z_R) ** 2)

    @property
    def R_curv(self) -> float:
        if self.z == 0:
            return math.inf
        return self.z * (1 + (self.z_R / self.z) ** 2)

    @property
    def gouy(self) -> float:
        return math.atan(self.z / self.z_R)


def laguerre_coefficients(p: int, alpha: int) -> list[float]:
    """Coefficients c_i of L_p^alpha(x) = sum_i c_i x^i."""
    if p < 0 or alpha < 0:
        raise ValueError("p and alpha must be nonnegative")
    if p > MAX_RADIAL_INDEX:
        raise ValueError(f"radial index {p} exceeds the supported cap {MAX_RADIAL_INDEX}")
    return [(-1) ** i * math.comb(p + alpha, p - i) / math.factorial(i) for i in range(p + 1)]


def laguerre(p: int, alpha: int, x):
    """Generalized Laguerre polynomial L_p^alpha(x) from its finite sum."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("Laguerre argument must be nonnegative")
    coeffs = laguerre_coefficients(p, alpha)
    if x_arr.ndim == 0:
        xf = float(x_arr)
        terms = [c * xf**i for i, c in enumerate(coeffs)]
        total = math.fsum(terms)
        if math.fsum(map(abs, terms)) <= 64 * abs(total):
            return total
        # the alternating terms cancel badly near the zeros: sum exactly
        xv = Fraction(xf)
        return float(sum(Fraction((-1) ** i * math.comb(p + alpha, p - i), math.factorial(i)) * xv**i
                         for i in range(p + 1)))
    return sum(c * x_arr**i for i, c in reversed(list(enumerate(coeffs))))


def laguerre_recurrence(p: int, alpha: int, x):
    """L_p^alpha(x) by the three-term recurrence; used to cross-check :func:`laguerre`."""
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if p == 0:
        return prev
    cur = 1 + alpha - x
    for j in range(1, p):
        prev, cur = cur, ((2 * j + 1 + alpha - x) * cur - (j + alpha) * prev) / (j + 1)
    return cur


def lg_norm(l: int, p: int) -> float:
    """A_{l,p} = sqrt(p! / (p+|l|)!)."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    if abs(l) + p > 20:
        return math.exp(0.5 * (math.lgamma(p + 1) - math.lgamma(p + abs(l) + 1)))
    return math.sqrt(math.factorial(p) / math.factorial(p + abs(l)))


def lg_profile(l: int, p: int, r, w: float = 1.0):
    """Real radial amplitude 2A/w (sqrt2 r/w)^|l| L_p^|l|(2r^2/w^2) exp(-r^2/w^2).

    Normalized so that the integral of profile^2 r dr over [0, inf) is one.
    """
    r = np.asarray(r, dtype=float)
    al = abs(l)
    x = 2 * (r / w) ** 2
    return 2 * lg_norm(l, p) / w * (math.sqrt(2) * r / w) ** al * laguerre(p, al, x) * np.exp(-((r / w) ** 2))


def lg_radial(label: OamLabel, r, geom: BeamGeometry):
    """Complex radial function R_{l,p}(r, z) with curvature and Gouy phases."""
    l, p = label
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    amp = lg_profile(l, p, r, geom.w)
    curvature = 0.0 if math.isinf(geom.R_curv) else geom.k * r**2 / (2 * geom.R_curv)
    phase = -curvature + (2 * p + abs(l) + 1) * geom.gouy
    out = amp * np.exp(1j * phase)
    return out if np.ndim(out) else complex(out)
