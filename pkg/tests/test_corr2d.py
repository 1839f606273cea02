import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisotilt.corr2d import (autocorr_xx, autocorr_yy, build_autocorr_grid, crosscorr_xy,
                              lag_angle, lag_distance)
from anisotilt.errors import OutOfRangeError
from anisotilt.stats import (Cn2Profile, pixels_to_separation, tilt_corr_parallel,
                             tilt_corr_perp, tilt_corr_pixels, tilt_corr_total)


@pytest.fixture(scope="module")
def grid(cfg):
    return build_autocorr_grid(cfg, Cn2Profile.constant(0.25e-15), 30, 20)


def test_lag_geometry():
    assert lag_distance(3, 4) == pytest.approx(5.0)
    assert lag_angle(0, 2) == pytest.approx(np.pi / 2)


def test_origin_is_variance(grid):
    assert grid.at(0, 0, "xx") == pytest.approx(grid.sigma_t2, rel=1e-12)
    assert grid.at(0, 0, "yy") == pytest.approx(grid.sigma_t2, rel=1e-12)
    assert grid.at(0, 0, "xy") == 0.0


def test_total_equals_sum(grid):
    np.testing.assert_allclose(grid.r_t, grid.r_xx + grid.r_yy, rtol=1e-14, atol=0)


def test_point_symmetry(grid):
    for a in (grid.r_xx, grid.r_yy, grid.r_xy, grid.r_t):
        np.testing.assert_array_equal(a, a[::-1, ::-1])


def test_axis_swap(cfg):
    g = build_autocorr_grid(cfg, Cn2Profile.constant(0.25e-15), 25)
    np.testing.assert_allclose(g.r_xx, g.r_yy.T, rtol=1e-14)


def test_cross_zero_on_axes(grid):
    N1, N2 = grid.half_extent
    assert np.all(grid.r_xy[N2, :] == 0)
    assert np.all(grid.r_xy[:, N1] == 0)


def test_on_axis_values_are_parallel_and_perp(grid):
    corr = grid  # x lag: r_xx is along the separation (parallel)
    r_par_5 = grid.at(5, 0, "xx")
    r_perp_5 = grid.at(5, 0, "yy")
    assert r_par_5 < r_perp_5
    assert grid.at(0, 5, "yy") == pytest.approx(r_par_5, rel=1e-12)
    assert corr.at(0, 5, "xx") == pytest.approx(r_perp_5, rel=1e-12)


def test_spot_check_against_direct_quadrature(cfg, grid):
    p = Cn2Profile.constant(0.25e-15)
    rng = np.random.default_rng(7)
    N1, N2 = grid.half_extent
    for _ in range(4):
        n1, n2 = int(rng.integers(-N1, N1 + 1)), int(rng.integers(-N2, N2 + 1))
        th = pixels_to_separation(np.hypot(n1, n2), cfg)
        tot = tilt_corr_pixels(tilt_corr_total(cfg, p, th, rtol=1e-7), cfg)
        assert grid.at(n1, n2, "t") == pytest.approx(tot, rel=1e-4)
        rp = tilt_corr_pixels(tilt_corr_parallel(cfg, p, th, rtol=1e-7), cfg)
        rq = tilt_corr_pixels(tilt_corr_perp(cfg, p, th, rtol=1e-7), cfg)
        d2 = n1 * n1 + n2 * n2
        c2 = n1 * n1 / d2 if d2 else 1.0
        assert grid.at(n1, n2, "xx") == pytest.approx(rp * c2 + rq * (1 - c2), rel=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_total_isotropic(n1, n2):
    # rotation consistency: r_xx + r_yy depends only on |n|
    from conftest import _shared_grid
    g = _shared_grid()
    d = np.hypot(n1, n2)
    corr = g["corr"]
    lhs = autocorr_xx((n1, n2), corr) + autocorr_yy((n1, n2), corr)
    rhs = autocorr_xx((d, 0.0), corr) + autocorr_yy((d, 0.0), corr)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_pointwise_functions_match_grid(cfg, grid):
    from anisotilt.stats import tabulate_correlations
    corr = tabulate_correlations(cfg, Cn2Profile.constant(0.25e-15), 40.0)
    for n in [(3, 4), (-7, 2), (0, 9)]:
        assert autocorr_xx(n, corr) == pytest.approx(grid.at(*n, "xx"), rel=1e-12)
        assert crosscorr_xy(n, corr) == pytest.approx(grid.at(*n, "xy"), rel=1e-12, abs=1e-15)


def test_out_of_range(grid):
    with pytest.raises(OutOfRangeError):
        grid.at(31, 0)
    from anisotilt.stats import tabulate_correlations, table1_config
    corr = tabulate_correlations(table1_config(), Cn2Profile.constant(1e-16), 5.0)
    with pytest.raises(OutOfRangeError):
        autocorr_xx((10, 0), corr)


def test_crop(grid):
    c = grid.crop(5, 3)
    assert c.r_xx.shape == (7, 11)
    assert c.at(2, -3, "xy") == grid.at(2, -3, "xy")
