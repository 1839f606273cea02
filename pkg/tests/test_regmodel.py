import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisotilt.corr2d import build_autocorr_grid
from anisotilt.errors import ConfigError, OutOfRangeError
from anisotilt.regmodel import (RegistrationSpec, TiltFilter, alpha_curve, alpha_sensitivity,
                                filter_autocorrelation, filtered_variance, global_alpha_from_grid,
                                global_residual_filter, patch_filter, patch_tilt_variance,
                                registration_alpha, residual_filter, residual_tilt_variance,
                                tilt_correction_factor)
from anisotilt.stats import Cn2Profile
from oracles import naive_filtered_variance


@pytest.fixture(scope="module")
def small_grid(cfg):
    return build_autocorr_grid(cfg, Cn2Profile.constant(1e-15), 12)


def _lag(grid, which="xx"):
    return lambda d1, d2: grid.at(d1, d2, which)


@pytest.mark.parametrize("M", [1, 2, 3])
@pytest.mark.parametrize("make", [patch_filter, residual_filter])
def test_lag_weighted_matches_naive(small_grid, M, make):
    h = make(M)
    fast = filtered_variance(small_grid, h)
    slow = naive_filtered_variance(h.taps, _lag(small_grid))
    assert abs(fast - slow) <= 1e-12 * max(1.0, abs(slow))


@pytest.mark.parametrize("M", [0, 1, 4])
def test_closed_form_filter_autocorrelation(M):
    from scipy.signal import correlate
    for h in (patch_filter(M), residual_filter(M)):
        np.testing.assert_allclose(filter_autocorrelation(h),
                                   correlate(h.taps, h.taps, mode="full"), atol=1e-15)


def test_generic_filter_path(small_grid):
    rng = np.random.default_rng(3)
    h = TiltFilter(rng.normal(size=(5, 3)))
    assert filtered_variance(small_grid, h, sigma_e2=0.1) == pytest.approx(
        0.1 + naive_filtered_variance(h.taps, _lag(small_grid)), rel=1e-12)


def test_identity_filter_gives_variance(small_grid):
    h = TiltFilter(np.ones((1, 1)))
    assert filtered_variance(small_grid, h) == pytest.approx(small_grid.sigma_t2)


def test_patch_plus_residual_relation(small_grid):
    # sigma_R^2 = sigma_T^2 - 2 cov(tilt, patch mean) + sigma_P^2
    M = 3
    s0 = small_grid.sigma_t2
    sP = filtered_variance(small_grid, patch_filter(M))
    n = 2 * M + 1
    r = small_grid.r_xx[12 - M:12 + M + 1, 12 - M:12 + M + 1]
    sR = filtered_variance(small_grid, residual_filter(M))
    assert sR == pytest.approx(s0 - 2 * r.sum() / n ** 2 + sP, rel=1e-12)


def test_grid_too_small(small_grid):
    with pytest.raises(OutOfRangeError):
        filtered_variance(small_grid, patch_filter(7))


def test_table_values_level1(cfg, level1, grid_l1):
    assert patch_tilt_variance(cfg, level1, 100, grid=grid_l1) == pytest.approx(0.5333, rel=1e-2)
    assert residual_tilt_variance(cfg, level1, 100, grid=grid_l1) == pytest.approx(0.2154, rel=1e-2)


def test_alpha_m10_quantized(cfg, level1):
    assert tilt_correction_factor(cfg, level1, 10, 1 / 12) == pytest.approx(0.8878, abs=1e-3)


def test_alpha_level_independent(cfg):
    a = tilt_correction_factor(cfg, Cn2Profile.constant(1e-16), 8)
    b = tilt_correction_factor(cfg, Cn2Profile.constant(1.7e-15), 8)
    assert a == pytest.approx(b, rel=1e-9)


def test_alpha_decreases_with_M(cfg, level1):
    a = alpha_curve(cfg, level1, [1, 2, 5, 10, 20, 40])
    assert np.all(np.diff(a) < 0)
    assert np.all((a > 0) & (a < 1))


def test_epsilon_shifts_alpha(cfg, level1, small_grid):
    a0 = tilt_correction_factor(cfg, level1, 4, 0.0, grid=small_grid)
    a1 = tilt_correction_factor(cfg, level1, 4, 0.2, grid=small_grid)
    assert a0 - a1 == pytest.approx(0.2, rel=1e-12)


def test_negative_alpha_warns(cfg, level1, small_grid):
    with pytest.warns(RuntimeWarning):
        assert tilt_correction_factor(cfg, level1, 1, 1.5, grid=small_grid) < 0


def test_global_map_matches_per_pixel_filters(small_grid):
    M_img = (4, 3)
    am = global_alpha_from_grid(small_grid, M_img)
    s0 = small_grid.sigma_t2
    for k in [(0, 0), (4, 3), (-4, 1), (2, -3)]:
        h = global_residual_filter(k, M_img)
        sR = naive_filtered_variance(h.taps, _lag(small_grid))
        assert am.alpha_x[k[1] + 3, k[0] + 4] == pytest.approx(1 - sR / s0, rel=1e-10)
        sRy = filtered_variance(small_grid, h, which="yy")
        assert am.alpha_y[k[1] + 3, k[0] + 4] == pytest.approx(1 - sRy / s0, rel=1e-10)


def test_global_map_symmetry(small_grid):
    am = global_alpha_from_grid(small_grid, 5)
    np.testing.assert_allclose(am.alpha_x, am.alpha_x[::-1, ::-1], rtol=1e-12)
    np.testing.assert_allclose(am.alpha_x, am.alpha_y.T, rtol=1e-10)
    # centre pixel is best compensated
    assert am.peak == pytest.approx(am.alpha_x[5, 5])


def test_global_filter_outside_image():
    with pytest.raises(OutOfRangeError):
        global_residual_filter((6, 0), 5)


def test_registration_spec_validation():
    with pytest.raises(ConfigError):
        RegistrationSpec("bma", 0)
    with pytest.raises(ConfigError):
        RegistrationSpec("affine")
    with pytest.raises(ConfigError):
        RegistrationSpec("global", epsilon=-0.1)


def test_registration_alpha(cfg):
    assert registration_alpha(cfg, RegistrationSpec()) == 0.0
    a = registration_alpha(cfg, RegistrationSpec("bma", 10, 1 / 12))
    assert a == pytest.approx(0.8878, abs=1e-3)
    g = registration_alpha(cfg, RegistrationSpec("global"), (41, 41))
    assert 0 < g < 1


def test_sensitivity_constant_reference(cfg):
    out = alpha_sensitivity(cfg, 1e-15, [-1e-15, 0.0, 1e-15], [5])
    assert out[5][1] == pytest.approx(out["constant"][5], rel=1e-9)
    with pytest.raises(ConfigError):
        alpha_sensitivity(cfg, 1e-15, [3e-15], [5])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5), st.floats(0.0, 0.5))
def test_residual_variance_nonnegative(M, eps):
    from conftest import _shared_grid
    from anisotilt.corr2d import autocorr_grid_from
    g = autocorr_grid_from(_shared_grid()["corr"], 2 * M)
    sR = filtered_variance(g, residual_filter(M), eps * g.sigma_t2)
    assert sR >= -1e-12
    assert sR <= g.sigma_t2 * (1 + eps) + 1e-9
