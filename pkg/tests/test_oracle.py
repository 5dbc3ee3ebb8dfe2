import numpy as np
import pytest

from oamao.channel import ChannelParams, assemble
from oamao.oracle import (
    DiskGrid,
    QuadratureSpec,
    _RunningMean,
    _sampling_factor,
    first_order_budget,
    mc_channel_estimate,
    quad_angular,
    quad_radial,
    quad_superoperator,
    sample_coefficients,
)
from oamao.turbulence import covariance_matrix
from oamao.zernike import ZernikeMode

CASE_B = (9.8596, 0.1167, 0.1693)
TINY = dict(n_max=6, L_in=1, P_in=1, L_out=2, P_out=1)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(abs_tol=0)
    with pytest.raises(ValueError):
        QuadratureSpec(method="simpson")
    with pytest.raises(ValueError):
        QuadratureSpec(n_theta=2)
    with pytest.raises(ValueError):
        DiskGrid(3.0, n_r=4)


def test_quad_results_carry_error_estimates():
    res = quad_angular("F1", 2, 1, 2, 1, 0)
    assert res.ok and res.error >= 0
    assert float(res) == pytest.approx(4 * np.pi**2, abs=1e-9)
    k = ZernikeMode.from_noll(4)
    res = quad_radial("G1", (0, 0, 0, 0, k, k), 3.0)
    assert res.ok and 0 <= res.error < 1e-8 * abs(res.value)
    with pytest.raises(ValueError):
        quad_radial("G5", (0, 0, 0, 0, k), 3.0)


def test_disk_grid_integrates_area():
    r, wr, theta = DiskGrid(2.5, 32, 16).nodes
    assert wr.sum() * 2 * np.pi == pytest.approx(np.pi * 2.5**2, rel=1e-13)
    assert len(theta) == 16


def test_grid_map_matches_closed_form():
    p = ChannelParams.from_ratios(*CASE_B, J=10, n_max=8, L_in=2, P_in=2, L_out=3, P_out=3)
    ref = assemble(p).data
    grid = quad_superoperator(p).data
    assert np.abs(grid - ref).max() < 1e-10


def test_sample_covariance_matches_model():
    modes = ChannelParams.from_ratios(*CASE_B, J=3, n_max=4).modes
    cov = covariance_matrix(modes, 2.0)
    a = sample_coefficients(modes, 2.0, 10_000, seed=11)
    assert np.abs(a.mean(axis=0)).max() < 4 * np.sqrt(cov.diagonal().max() / 10_000)
    est = np.cov(a, rowvar=False)
    big = np.abs(cov) > 0.05 * cov.diagonal().max()
    assert np.all(np.abs(est[big] - cov[big]) <= 0.05 * np.abs(cov[big]) + 4 * cov.diagonal().max() / 100)
    np.testing.assert_allclose(est.diagonal(), cov.diagonal(), rtol=0.05)


def test_sampling_factor_handles_singular_and_zero():
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    L = _sampling_factor(np.outer(v, v))
    np.testing.assert_allclose(L @ L.T, np.outer(v, v), atol=1e-14)
    assert not _sampling_factor(np.zeros((2, 2))).any()
    with pytest.raises(np.linalg.LinAlgError):
        _sampling_factor(np.diag([1.0, -0.5]))


def test_running_mean_matches_batch_statistics():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(301, 3)) + 1j * rng.normal(size=(301, 3))
    acc = _RunningMean(3)
    for s in range(0, 301, 37):
        acc.add_batch(data[s:s + 37])
    np.testing.assert_allclose(acc.mean, data.mean(axis=0), atol=1e-14)
    se = np.sqrt((np.abs(data - data.mean(axis=0)) ** 2).sum(axis=0) / 300 / 301)
    np.testing.assert_allclose(acc.stderr, se, rtol=1e-12)


def test_mc_zero_turbulence_is_identity():
    p = ChannelParams.from_ratios(9.8596, 0.0, 0.1693, J=3, **TINY)
    mc = mc_channel_estimate(p, 100, seed=0, grid=DiskGrid(9.8596, 128, 64))
    ident = assemble(p).data
    assert np.abs(mc.estimate.data - ident).max() < 1e-12
    assert first_order_budget(assemble(p)) == 0.0


@pytest.fixture(scope="module")
def mc_tiny():
    p = ChannelParams.from_ratios(*CASE_B, J=10, **TINY)
    return p, mc_channel_estimate(p, 400, seed=5, grid=DiskGrid(9.8596, 128, 64))


def test_mc_is_seed_reproducible(mc_tiny):
    p, mc = mc_tiny
    again = mc_channel_estimate(p, 400, seed=5, grid=DiskGrid(9.8596, 128, 64))
    np.testing.assert_array_equal(again.estimate.data, mc.estimate.data)
    np.testing.assert_array_equal(again.stderr, mc.stderr)
    other = mc_channel_estimate(p, 400, seed=6, grid=DiskGrid(9.8596, 128, 64))
    assert np.abs(other.estimate.data - mc.estimate.data).max() > 0
    meta = mc.metadata()
    assert meta["seed"] == 5 and meta["generator"] == "numpy.random.PCG64"
    with pytest.raises(ValueError):
        mc_channel_estimate(p, 10, seed=0)


def test_mc_agrees_with_analytic_map(mc_tiny):
    p, mc = mc_tiny
    A = assemble(p)
    budget = first_order_budget(A)
    big = np.abs(A.data) > 1e-3
    diff = np.abs(mc.estimate.data - A.data)[big]
    assert np.all(diff <= 3 * (mc.stderr[big] + budget))


def test_mc_and_analytic_trace_deficits_agree(mc_tiny):
    p, mc = mc_tiny
    A = assemble(p)
    d = A.d_in
    for i in range(d):
        col = i * d + i
        rows = [A.offset_out(o, o) for o in A.out_labels]
        t_mc = mc.estimate.data[rows, col].real.sum()
        t_an = A.data[rows, col].real.sum()
        se = np.sqrt((mc.stderr[rows, col] ** 2).sum())
        assert abs(t_mc - t_an) <= 3 * (se + first_order_budget(A)) + 1e-12
