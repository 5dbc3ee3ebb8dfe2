"""Closed-form angular and radial integrals of the first-order channel.

The angular integrals reduce to exact multiples of pi^2.  The radial
integrals are finite sums of signed binomial products times lower incomplete
gamma functions, after the substitution u = 2 r^2 / w^2.

The radial sums alternate in sign.  The scalar kernels merge terms with
exact rational coefficients, add the double-precision terms exactly and
estimate the rounding error from the sum of magnitudes; when cancellation
would leave less than about 1e-12 relative accuracy the sum is re-evaluated
in extended precision.  The batched tables used for assembly stay in double
precision and lose about 1e-10 relative at radial order 8 and 1e-7 at order
24 with p = 6 labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np

from .oam import OamLabel, lg_norm
from .turbulence import coefficient_covariance
from .zernike import ZernikeMode, as_mode, radial_coefficients

__all__ = [
    "ANGULAR_CASES",
    "TermIndices",
    "DimensionlessGeometry",
    "angular_F",
    "angular_single",
    "angular_square",
    "lower_incomplete_gamma",
    "radial_U",
    "radial_G1",
    "radial_G2",
    "radial_G3",
    "radial_G4",
    "normalization_bundle",
    "term_constant_C",
    "RadialKernel",
]

PI2 = math.pi**2
ANGULAR_CASES = ("F1", "F23", "F4")


@dataclass(frozen=True)
class DimensionlessGeometry:
    """Aperture radius over beam width, propagation over Rayleigh range, aperture over r0."""

    R_over_w: float
    z_over_zR: float
    R_over_r0: float

    def __post_init__(self):
        if self.R_over_w <= 0 or self.z_over_zR < 0 or self.R_over_r0 < 0:
            raise ValueError("geometry ratios must be positive")

    @classmethod
    def from_ratios(cls, R_over_w: float, w_over_r0: float, z_over_zR: float):
        return cls(R_over_w, z_over_zR, R_over_w * w_over_r0)

    @property
    def w_over_r0(self) -> float:
        return self.R_over_r0 / self.R_over_w

    @property
    def gouy(self) -> float:
        return math.atan(self.z_over_zR)


@dataclass(frozen=True)
class TermIndices:
    """Labels of one term: input pair (l,p),(l',p'), output pair, and the mode pair."""

    inp: tuple[OamLabel, OamLabel]
    out: tuple[OamLabel, OamLabel]
    modes: tuple[ZernikeMode, ZernikeMode]

    @classmethod
    def build(cls, inp, out, modes):
        inp = tuple(OamLabel(*x) for x in inp)
        out = tuple(OamLabel(*x) for x in out)
        return cls(inp, out, (as_mode(modes[0]), as_mode(modes[1])))


# ---------------------------------------------------------------- angular


def angular_F(case: str, l: int, lp: int, lt: int, ltp: int, m: int) -> float:
    """Angular integral over theta, theta' in [-pi, pi]^2 for one Zernike product.

    ``case`` selects which product: "F1" both modes at the unprimed point,
    "F23" one at each point, "F4" both at the primed point.  Returns an exact
    multiple of pi^2.  The cosine row of "F23" includes all four sign
    combinations l - l~ = +-m, l' - l~' = +-m.
    """
    a = l - lt
    b = lp - ltp
    if case == "F1":
        if b != 0:
            return 0.0
        return _square_row(m, a)
    if case == "F4":
        if a != 0:
            return 0.0
        return _square_row(m, b)
    if case != "F23":
        raise ValueError(f"unknown angular case {case!r}")
    if m == 0:
        return 4 * PI2 if a == 0 and b == 0 else 0.0
    am = abs(m)
    if abs(a) != am or abs(b) != am:
        return 0.0
    if m > 0:
        return PI2
    # sine modes: +pi^2 when the shifts agree in sign, -pi^2 otherwise
    return PI2 if a == b else -PI2


def _square_row(m: int, d: int) -> float:
    if m == 0:
        return 4 * PI2 if d == 0 else 0.0
    if d == 0:
        return 2 * PI2
    if abs(d) == 2 * abs(m):
        return PI2 if m > 0 else -PI2
    return 0.0


def angular_single(m: int, d: int) -> complex:
    """(1/2pi) * integral of exp(i d theta) times the angular factor of a mode with order m."""
    if m == 0:
        return 1.0 if d == 0 else 0.0
    am = abs(m)
    if m > 0:
        return 0.5 if abs(d) == am else 0.0
    # -sin(m theta) = sin(|m| theta)
    if d == am:
        return 0.5j
    if d == -am:
        return -0.5j
    return 0.0


def angular_square(m: int, d: int) -> float:
    """(1/2pi) * integral of exp(i d theta) times the squared angular factor."""
    return _square_row(m, d) / (4 * PI2)


# ------------------------------------------------------ incomplete gamma

_EPS = 1e-16
_MAX_ITER = 2000


@lru_cache(maxsize=None)
def lower_incomplete_gamma(alpha: float, x: float) -> float:
    """gamma(alpha, x) = integral_0^x exp(-t) t^(alpha-1) dt.

    Power series below x = alpha + 1, otherwise Gamma(alpha) minus the
    continued fraction of the upper function (modified Lentz).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    log_prefactor = alpha * math.log(x) - x
    if x < alpha + 1:
        term = 1.0 / alpha
        total = term
        a = alpha
        for _ in range(_MAX_ITER):
            a += 1
            term *= x / a
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        return total * math.exp(log_prefactor)
    tiny = 1e-300
    b = x + 1 - alpha
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - alpha)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    upper = math.exp(log_prefactor) * h
    return math.gamma(alpha) - upper if alpha < 171 else math.exp(math.lgamma(alpha)) - upper


# ---------------------------------------------------------------- radial


def _check_pair(k, kt):
    mk, mt = as_mode(k), as_mode(kt)
    if mk.m != mt.m:
        raise ValueError(f"radial kernels need equal azimuthal orders, got {mk.m} and {mt.m}")
    return mk, mt


def _laguerre_terms(p: int, l: int):
    al = abs(l)
    return [((-1) ** j * math.comb(p + al, p - j) / math.factorial(j), j) for j in range(p + 1)]


def _exact_laguerre(p: int, l: int):
    al = abs(l)
    return [(Fraction((-1) ** j * math.comb(p + al, p - j), math.factorial(j)), j) for j in range(p + 1)]


# relative accuracy demanded of the scalar radial sums
_RADIAL_TOL = 1e-12
_ULP = 2.0**-52


def _radial_terms(la, pa, lb, pb, zernike_powers):
    """Exact coefficients keyed by (power of 1/scale, twice alpha)."""
    terms: dict[tuple[int, int], Fraction] = {}
    base = la + lb
    for a, j in _exact_laguerre(pa, la):
        for b, jt in _exact_laguerre(pb, lb):
            for power, c in zernike_powers:
                key = (power, base + power + 2 * (j + jt + 1))
                terms[key] = terms.get(key, 0) + a * b * c
    return tuple((k, v) for k, v in sorted(terms.items()) if v)


@lru_cache(maxsize=None)
def _gamma_mp(twice_alpha: int, R_over_w: float, dps: int):
    with mpmath.workdps(dps):
        x = 2 * mpmath.mpf(R_over_w) ** 2
        return mpmath.gammainc(mpmath.mpf(twice_alpha) / 2, 0, x)


def _evaluate_radial(terms, R_over_w: float) -> float:
    scale = math.sqrt(2) * R_over_w
    x = 2 * R_over_w**2
    vals = [float(c) * scale ** (-power) * lower_incomplete_gamma(0.5 * ta, x) for (power, ta), c in terms]
    total = math.fsum(vals)
    mag = math.fsum(abs(v) for v in vals)
    # each term carries a few ulps from the gamma value and the power
    if mag * 8 * _ULP <= _RADIAL_TOL * abs(total):
        return total
    digits = 60 if total == 0 else 20 + max(0, math.ceil(math.log10(mag / abs(total))))
    with mpmath.workdps(digits):
        s2 = 2 * mpmath.mpf(R_over_w) ** 2
        acc = mpmath.mpf(0)
        for (power, ta), c in terms:
            acc += mpmath.mpf(c.numerator) / c.denominator * s2 ** (-mpmath.mpf(power) / 2) \
                * _gamma_mp(ta, R_over_w, digits)
        return float(acc)


@lru_cache(maxsize=None)
def _radial_single(la, pa, lb, pb, n, m_abs, R_over_w):
    return _evaluate_radial(_radial_terms(la, pa, lb, pb, radial_coefficients(n, m_abs)), R_over_w)


@lru_cache(maxsize=None)
def _radial_pair(la, pa, lb, pb, n, nt, m_abs, R_over_w):
    powers: dict[int, int] = {}
    for p1, c1 in radial_coefficients(n, m_abs):
        for p2, c2 in radial_coefficients(nt, m_abs):
            powers[p1 + p2] = powers.get(p1 + p2, 0) + c1 * c2
    return _evaluate_radial(_radial_terms(la, pa, lb, pb, tuple(powers.items())), R_over_w)


def radial_U(l: int, p: int, lt: int, pt: int, mode, R_over_w: float) -> float:
    """Single-mode radial factor: the unprimed triple sum of G2 with order n_k."""
    mode = as_mode(mode)
    return _radial_single(abs(l), p, abs(lt), pt, mode.n, mode.m_abs, float(R_over_w))


def radial_G1(l: int, p: int, lt: int, pt: int, k, kt, R_over_w: float) -> float:
    """Radial sum for both modes at the unprimed point."""
    mk, mt = _check_pair(k, kt)
    return _radial_pair(abs(l), p, abs(lt), pt, mk.n, mt.n, mk.m_abs, float(R_over_w))


def radial_G2(l, p, lp, pp, lt, pt, ltp, ptp, k, kt, R_over_w: float) -> float:
    """Product of the unprimed factor (order n_k) and the primed factor (order n_k~)."""
    mk, mt = _check_pair(k, kt)
    return radial_U(l, p, lt, pt, mk, R_over_w) * radial_U(lp, pp, ltp, ptp, mt, R_over_w)


def radial_G3(l, p, lp, pp, lt, pt, ltp, ptp, k, kt, R_over_w: float) -> float:
    """radial_G2 with the two radial orders exchanged."""
    return radial_G2(l, p, lp, pp, lt, pt, ltp, ptp, kt, k, R_over_w)


def radial_G4(lp: int, pp: int, ltp: int, ptp: int, k, kt, R_over_w: float) -> float:
    """Radial sum for both modes at the primed point; same shape as radial_G1."""
    return radial_G1(lp, pp, ltp, ptp, k, kt, R_over_w)


# ------------------------------------------------------------- constants


def _gouy_exponent(t: TermIndices) -> int:
    (l, p), (lp, pp) = t.inp
    (lt, pt), (ltp, ptp) = t.out
    return 2 * p + abs(l) - 2 * pp - abs(lp) - 2 * pt - abs(lt) + 2 * ptp + abs(ltp)


def normalization_bundle(t: TermIndices, gouy: float) -> complex:
    """R^2 w^4 / 16 times the product of Zernike and LG normalizations with Gouy phases."""
    mk, mt = t.modes
    eps = 2 if mk.m else 1
    amps = math.prod(lg_norm(l, p) for l, p in (*t.inp, *t.out))
    mag = eps / math.pi * amps * math.sqrt((mk.n + 1) * (mt.n + 1))
    expo = _gouy_exponent(t)
    return mag * complex(math.cos(gouy * expo), math.sin(gouy * expo))


def term_constant_C(t: TermIndices, geom: DimensionlessGeometry, gouy: float | None = None) -> complex:
    """Covariance times normalization bundle for one term.

    Composed from its factors, so the (R/r0)^(5/3) turbulence strength is
    carried through.
    """
    mk, mt = t.modes
    if mk.n + mt.n < 2:
        raise ValueError("piston pair has no finite covariance")
    if mk.m != mt.m:
        return 0j
    if gouy is None:
        gouy = geom.gouy
    return coefficient_covariance(mk, mt, geom.R_over_r0) * normalization_bundle(t, gouy)


# ------------------------------------------------- batched radial tables


class RadialKernel:
    """Batched evaluation of the radial sums for channel assembly.

    The same finite sums as :func:`radial_U` and :func:`radial_G1`, grouped by
    the power of u so that many label pairs and modes are contracted at once
    against a Hankel matrix of incomplete gamma values.
    """

    def __init__(self, R_over_w: float):
        self.R_over_w = float(R_over_w)
        self.scale = math.sqrt(2) * self.R_over_w
        self.x = 2 * self.R_over_w**2

    @lru_cache(maxsize=None)
    def _gamma(self, twice_alpha: int) -> float:
        return lower_incomplete_gamma(0.5 * twice_alpha, self.x)

    def _hankel(self, offset: int, rows: int, cols: int) -> np.ndarray:
        # H[e, t] = gamma(offset/2 + e + t + 1)
        vals = np.array([self._gamma(offset + 2 * s + 2) for s in range(rows + cols - 1)])
        idx = np.arange(rows)[:, None] + np.arange(cols)[None, :]
        return vals[idx]

    @staticmethod
    @lru_cache(maxsize=None)
    def _lg_pair_poly(la: int, pa: int, lb: int, pb: int) -> np.ndarray:
        a = [c for c, _ in _laguerre_terms(pa, la)]
        b = [c for c, _ in _laguerre_terms(pb, lb)]
        return np.convolve(a, b)

    @lru_cache(maxsize=None)
    def _zernike_poly(self, n: int, m_abs: int) -> np.ndarray:
        # index t multiplies u^{(m_abs + 2t)/2}
        half = (n - m_abs) // 2
        out = np.zeros(half + 1)
        for power, c in radial_coefficients(n, m_abs):
            out[(power - m_abs) // 2] = c * self.scale ** (-power)
        return out

    @lru_cache(maxsize=None)
    def _zernike_pair_poly(self, n: int, nt: int, m_abs: int) -> np.ndarray:
        return np.convolve(self._zernike_poly(n, m_abs), self._zernike_poly(nt, m_abs))

    def _contract(self, rad_pairs, polys, offset_of):
        """Matrix [pair, poly] of sum_e sum_t a[e] z[t] gamma(...) grouped by offset."""
        out = np.zeros((len(rad_pairs), len(polys)))
        groups: dict[int, list[tuple[int, int]]] = {}
        for i, (la, pa, lb, pb) in enumerate(rad_pairs):
            for j, (mu, _) in enumerate(polys):
                groups.setdefault(la + lb + offset_of(mu), []).append((i, j))
        for offset, members in groups.items():
            rows = sorted({i for i, _ in members})
            cols = sorted({j for _, j in members})
            A = [self._lg_pair_poly(*rad_pairs[i]) for i in rows]
            Z = [polys[j][1] for j in cols]
            E = max(len(a) for a in A)
            T = max(len(z) for z in Z)
            Am = np.zeros((len(rows), E))
            for r, a in enumerate(A):
                Am[r, : len(a)] = a
            Zm = np.zeros((len(cols), T))
            for c, z in enumerate(Z):
                Zm[c, : len(z)] = z
            block = Am @ self._hankel(offset, E, T) @ Zm.T
            ri = {r: n for n, r in enumerate(rows)}
            ci = {c: n for n, c in enumerate(cols)}
            for i, j in members:
                out[i, j] = block[ri[i], ci[j]]
        return out

    def single_table(self, rad_pairs, modes) -> np.ndarray:
        """radial_U for every (|l|,p,|l~|,p~) pair and every (n, |m|) in ``modes``."""
        polys = [(m_abs, self._zernike_poly(n, m_abs)) for n, m_abs in modes]
        return self._contract(list(rad_pairs), polys, lambda mu: mu)

    def pair_table(self, rad_pairs, mode_pairs) -> np.ndarray:
        """radial_G1 for every radial pair and every (n, n~, |m|) triple."""
        polys = [(m_abs, self._zernike_pair_poly(n, nt, m_abs)) for n, nt, m_abs in mode_pairs]
        return self._contract(list(rad_pairs), polys, lambda mu: 2 * mu)
