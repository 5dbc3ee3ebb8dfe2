import math

import numpy as np
import pytest

from oamao.turbulence import (
    KOLMOGOROV_M,
    TurbulenceParams,
    coefficient_covariance,
    covariance_matrix,
    fried_parameter,
    noll_integral_I,
    rytov_check,
)
from oamao.zernike import ZernikeMode, residual_modes

# frozen from a 40-digit evaluation of the gamma-function ratio
I_REFERENCE = {
    (1, 1): 48.88594546642894664,
    (2, 2): 1.6857222574630671256,
    (1, 3): 1.0907614607113963754,
    (2, 4): 0.21815229214227927507,
    (3, 5): 0.06917023897194220917,
    (10, 12): 0.0010074819327278670453,
    (30, 32): 0.000010110882747166933828,
    (40, 44): 5.5264399207745717623e-7,
}


def test_constant_m():
    assert abs(KOLMOGOROV_M - 0.04579117421711036) < 1e-15


def test_fried_parameter():
    r0 = fried_parameter(1e-15, 1000.0, 1.55e-6)
    assert r0 == pytest.approx(0.31356904619899379667, rel=1e-13)
    assert fried_parameter(2e-15, 1000.0, 1.55e-6) / r0 == pytest.approx(2 ** -0.6)
    assert fried_parameter(1e-30, 1.0, 1.0) > 1e15
    with pytest.raises(ValueError):
        fried_parameter(0.0, 1.0, 1.0)


def test_turbulence_params_exclusive():
    assert TurbulenceParams(r0_ratio=0.2).w_over_r0() == 0.2
    p = TurbulenceParams(Cn2=1e-15, wavelength=1.55e-6, z=1000.0)
    assert p.w_over_r0(0.1) == pytest.approx(0.1 / p.r0)
    with pytest.raises(ValueError):
        TurbulenceParams(Cn2=1e-15, wavelength=1.55e-6, z=1000.0, r0_ratio=0.2)
    with pytest.raises(ValueError):
        TurbulenceParams()
    with pytest.raises(ValueError):
        TurbulenceParams(Cn2=1e-15, z=1000.0)


@pytest.mark.parametrize("nn,ref", I_REFERENCE.items())
def test_noll_integral_against_frozen(nn, ref):
    assert noll_integral_I(*nn) == pytest.approx(ref, rel=1e-13)


def test_noll_integral_symmetric_and_decreasing():
    for n in range(13):
        for nt in range(13):
            if n + nt >= 2 and (n - nt) % 2 == 0:
                assert noll_integral_I(n, nt) == pytest.approx(noll_integral_I(nt, n), rel=1e-14)
    diag = [noll_integral_I(n, n) for n in range(1, 40)]
    assert all(a > b > 0 for a, b in zip(diag, diag[1:]))


def test_noll_integral_rejects_piston():
    with pytest.raises(ValueError):
        noll_integral_I(0, 0)
    with pytest.raises(ValueError):
        noll_integral_I(1, 0)


def test_covariance_examples():
    a, b = ZernikeMode.from_noll(5), ZernikeMode.from_noll(6)
    assert coefficient_covariance(a, b, 2.0) == 0.0
    k = ZernikeMode.from_noll(8)
    expected = KOLMOGOROV_M * 2.0 ** (5 / 3) * 4 * noll_integral_I(3, 3)
    assert coefficient_covariance(k, k, 2.0) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        coefficient_covariance(1, 1, 1.0)
    with pytest.raises(ValueError):
        coefficient_covariance(k, k, -1.0)
    assert coefficient_covariance(k, k, 0.0) == 0.0


def test_covariance_sign_rule():
    for k in range(2, 60):
        for kt in range(2, 60):
            mk, mt = ZernikeMode.from_noll(k), ZernikeMode.from_noll(kt)
            if mk.m != mt.m or noll_integral_I(mk.n, mt.n) <= 0:
                continue
            c = coefficient_covariance(mk, mt, 1.0)
            assert math.copysign(1, c) == (-1) ** ((mt.n - mk.n) // 2)


@pytest.mark.parametrize("R_over_r0", [0.1, 1.0, 3.7])
@pytest.mark.parametrize("J", [1, 3, 10])
def test_covariance_psd(R_over_r0, J):
    cov = covariance_matrix(residual_modes(J, 12), R_over_r0)
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-10


def test_rytov():
    t = 0.4234
    sigma2, valid = rytov_check(t, 0.2165 / math.sqrt(1 + t * t))
    assert sigma2 == pytest.approx(0.05442025829457101427, rel=1e-12)
    assert valid
    sigma2, valid = rytov_check(1.0, 10.0)
    assert sigma2 == pytest.approx(1.637 * 10 ** (5 / 3))
    assert not valid
    assert rytov_check(0.5, 0.0) == (0.0, True)
    with pytest.raises(ValueError):
        rytov_check(0.0, 1.0)
