"""Kolmogorov statistics of the Zernike expansion coefficients.

Covariances here are returned divided by R**2, so the module stays
dimensionless: multiplying the reduced functions R*Z_k by coefficients drawn
from :func:`covariance_matrix` gives the phase in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammasgn

from .zernike import ZernikeMode, as_mode

__all__ = [
    "KOLMOGOROV_M",
    "KOLMOGOROV_M_DECIMAL",
    "TurbulenceParams",
    "fried_parameter",
    "noll_integral_I",
    "coefficient_covariance",
    "covariance_matrix",
    "rytov_check",
]

FIVE_THIRDS = 5.0 / 3.0
_EXPONENT = 14.0 / 3.0

KOLMOGOROV_M_DECIMAL = 0.04579117421711036


def _kolmogorov_m() -> float:
    val = (
        4 * math.sqrt(2) * (0.6 * math.gamma(1.2)) ** (5 / 6) * math.gamma(11 / 6) ** 2
        / math.pi ** (11 / 3)
    )
    if abs(val - KOLMOGOROV_M_DECIMAL) > 1e-15:
        raise RuntimeError(f"Kolmogorov constant mismatch: {val!r}")
    return val


KOLMOGOROV_M = _kolmogorov_m()


def fried_parameter(Cn2: float, z: float, wavelength: float) -> float:
    """r0 = (16.6 Cn2 z / lambda^2)^(-3/5) for a constant-Cn2 horizontal path."""
    if Cn2 <= 0 or z <= 0 or wavelength <= 0:
        raise ValueError("Cn2, z and wavelength must be positive")
    return (16.6 * Cn2 * z / wavelength**2) ** (-0.6)


@dataclass(frozen=True)
class TurbulenceParams:
    """Either a physical (Cn2, wavelength, z) triple or a direct w(z)/r0 ratio."""

    Cn2: float | None = None
    wavelength: float | None = None
    z: float | None = None
    r0_ratio: float | None = None

    def __post_init__(self):
        physical = (self.Cn2, self.wavelength, self.z)
        has_physical = any(v is not None for v in physical)
        if has_physical == (self.r0_ratio is not None):
            raise ValueError("give exactly one of (Cn2, wavelength, z) or r0_ratio")
        if has_physical and any(v is None or v <= 0 for v in physical):
            raise ValueError("Cn2, wavelength and z must all be positive")
        if self.r0_ratio is not None and self.r0_ratio <= 0:
            raise ValueError("r0_ratio must be positive")

    @property
    def r0(self) -> float:
        if self.Cn2 is None:
            raise ValueError("r0 needs physical parameters")
        return fried_parameter(self.Cn2, self.z, self.wavelength)

    def w_over_r0(self, w: float | None = None) -> float:
        if self.r0_ratio is not None:
            return self.r0_ratio
        if w is None:
            raise ValueError("beam width w is required with physical parameters")
        return w / self.r0


def _gamma_ratio_terms(n: int, nt: int):
    a = _EXPONENT
    num = [a, 0.5 * (n + nt - a + 3)]
    den = [0.5 * (nt - n + a + 1), 0.5 * (n - nt + a + 1), 0.5 * (n + nt + a + 3)]
    return num, den


def noll_integral_I(n: int, n_tilde: int) -> float:
    """Gamma-function ratio I_{n, n~} entering the coefficient covariance.

    Small arguments use direct gamma values; larger ones switch to log-gamma
    with explicit sign tracking.
    """
    if n < 0 or n_tilde < 0:
        raise ValueError("radial orders must be nonnegative")
    if n + n_tilde < 2:
        raise ValueError("I_{n,n~} diverges for n + n~ < 2 (piston pair)")
    num, den = _gamma_ratio_terms(n, n_tilde)
    if max(abs(x) for x in num + den) < 40:
        val = math.gamma(num[0]) * math.gamma(num[1])
        val /= 2 * math.gamma(den[0]) * math.gamma(den[1]) * math.gamma(den[2])
        return math.pi ** (11 / 3) * val
    sign = 1.0
    log = (11 / 3) * math.log(math.pi) - math.log(2)
    for x in num:
        sign *= gammasgn(x)
        log += math.lgamma(x)
    for x in den:
        sign *= gammasgn(x)
        log -= math.lgamma(x)
    return sign * math.exp(log)


def coefficient_covariance(k, k_tilde, R_over_r0: float) -> float:
    """E[a_k a_k~] / R^2 for Kolmogorov turbulence.

    Zero unless the signed azimuthal orders agree; R/r0 = 0 is the
    turbulence-free limit.
    """
    mk, mt = as_mode(k), as_mode(k_tilde)
    if R_over_r0 < 0:
        raise ValueError("R/r0 must be nonnegative")
    if mk.n + mt.n < 2:
        raise ValueError("covariance undefined for the piston pair")
    if mk.m != mt.m:
        return 0.0
    sign = -1.0 if ((mt.n - mk.n) // 2) % 2 else 1.0
    return (
        sign * KOLMOGOROV_M * R_over_r0**FIVE_THIRDS
        * math.sqrt((mk.n + 1) * (mt.n + 1)) * noll_integral_I(mk.n, mt.n)
    )


def covariance_matrix(modes: list[ZernikeMode], R_over_r0: float) -> np.ndarray:
    """Symmetric covariance matrix (divided by R^2) over a list of modes."""
    size = len(modes)
    out = np.zeros((size, size))
    for i, a in enumerate(modes):
        for j in range(i, size):
            b = modes[j]
            if a.m == b.m:
                out[i, j] = out[j, i] = coefficient_covariance(a, b, R_over_r0)
    return out


def rytov_check(t_z: float, w0_over_r0: float) -> tuple[float, bool]:
    """Rytov variance of a Gaussian beam and the weak-scintillation test."""
    if t_z <= 0:
        raise ValueError("t_z = z/z_R must be positive")
    sigma2 = 1.637 * t_z ** (5 / 6) * w0_over_r0**FIVE_THIRDS
    return sigma2, sigma2 < (t_z + 1 / t_z) ** (5 / 6)
