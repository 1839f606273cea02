import math

import numpy as np
import pytest

from anisotilt.errors import ConfigError, DataError, FitError
from anisotilt.friedest import (ImageSequence, RadialProfile, centred_frequency, estimate_r0,
                                estimate_r0_windows, fit_gaussian_sigma, long_exposure_spectrum,
                                mean_short_exposure_spectrum, r0_from_sigma, radial_median_profile,
                                spectral_ratio, tukey_window_2d)
from anisotilt.mitigation import shift_image
from anisotilt.otf import sigma_G2
from anisotilt.regmodel import RegistrationSpec
from anisotilt.synth import synthetic_scene
from oracles import radial_bins_loop


def _analytic_ratio(shape, sigma):
    f = centred_frequency(shape)
    return np.exp(-f ** 2 / (2 * sigma ** 2))


def test_tukey_limits():
    np.testing.assert_array_equal(tukey_window_2d(5, 7, 0.0), 1.0)
    with pytest.raises(ConfigError):
        tukey_window_2d(5, 5, 1.5)


def test_radial_median_matches_loop():
    rng = np.random.default_rng(0)
    r = rng.random((21, 24))
    r[3, 4] = np.nan
    prof = radial_median_profile(r, min_count=1)
    ref = radial_bins_loop(r)
    for f, v in zip(prof.frequency, prof.values):
        assert v == pytest.approx(ref[int(round(f * 24))])


def test_profile_rho_units(cfg):
    p = RadialProfile(np.array([0.1]), np.array([1.0]), np.array([9]), cfg.pixel_pitch)
    assert p.rho[0] == pytest.approx(0.1 / cfg.pixel_pitch)


@pytest.mark.parametrize("sigma", [0.04, 0.057, 0.12])
def test_fit_noiseless(sigma):
    prof = radial_median_profile(_analytic_ratio((256, 256), sigma))
    s, rms = fit_gaussian_sigma(prof)
    assert s == pytest.approx(sigma, rel=1e-3)
    assert rms < 1e-6


def test_fit_multiplicative_noise():
    rng = np.random.default_rng(42)
    sigma = 0.057
    base = _analytic_ratio((256, 256), sigma)
    errs = []
    for _ in range(20):
        noisy = base * (1 + 0.01 * rng.standard_normal(base.shape))
        errs.append(fit_gaussian_sigma(radial_median_profile(noisy))[0] / sigma - 1)
    assert max(abs(e) for e in errs) < 0.02


def test_fit_rejects_flat_and_sparse():
    flat = radial_median_profile(np.ones((64, 64)))
    with pytest.raises(FitError):
        fit_gaussian_sigma(flat)
    with pytest.raises(FitError):
        fit_gaussian_sigma(radial_median_profile(_analytic_ratio((64, 64), 0.05)), band=(0.3, 0.31))


def test_r0_from_sigma_level1(cfg):
    assert r0_from_sigma(1.164e5, 0.0, cfg) == pytest.approx(0.1901, rel=2e-3)
    with pytest.raises(ConfigError):
        r0_from_sigma(1e5, 1.0, cfg)


def test_spectral_ratio_floor():
    short = np.ones((5, 5))
    short[0, 0] = 0.0
    r = spectral_ratio(np.full((5, 5), 0.5), short)
    assert np.isnan(r[0, 0]) and r[2, 2] == 0.5
    with pytest.raises(DataError):
        spectral_ratio(np.ones((4, 4)), np.zeros((4, 4)))


def test_identical_frames_ratio_one():
    img = synthetic_scene(64, 0)
    frames = np.stack([img] * 4)
    s = mean_short_exposure_spectrum(frames)
    lng = long_exposure_spectrum(frames)
    np.testing.assert_allclose(lng, s, rtol=1e-12)


def test_global_registration_undoes_shifts():
    img = synthetic_scene(96, 2)
    shifts = [(0, 0), (2, -1), (-1.5, 0.5), (0.4, 0.0)]
    frames = np.stack([shift_image(img, dx, dy) for dx, dy in shifts])
    w = tukey_window_2d(96, 96)
    single = np.abs(np.fft.fft2(w * img))
    lng = np.fft.ifftshift(long_exposure_spectrum(frames, RegistrationSpec("global"), window=w))
    mask = single > 1e-3 * single.max()
    rms = np.sqrt(np.mean(((lng - single) / single.max())[mask] ** 2))
    assert rms < 0.01


def test_needs_cfg_and_frames(cfg):
    img = synthetic_scene(32, 0)
    with pytest.raises(ConfigError):
        estimate_r0(ImageSequence(np.stack([img, img])))
    with pytest.raises(DataError):
        estimate_r0(ImageSequence(img[None], cfg))
    with pytest.raises(DataError):
        ImageSequence(np.full((2, 8, 8), np.nan))


def test_windows(cfg):
    from anisotilt.stats import Cn2Profile
    from anisotilt.synth import SynthConfig, degrade_sequence
    seq = degrade_sequence(synthetic_scene(96, 1), SynthConfig(cfg, Cn2Profile.constant(1e-15), 12, seed=2))
    res = estimate_r0_windows(seq, 6, 3)
    assert [s for s, _ in res] == [0, 3, 6]
    assert all(r.r0 > 0 for _, r in res)
    with pytest.raises(ConfigError):
        estimate_r0_windows(seq, 1, 1)


def test_level4_stationary_closed_loop(cfg):
    """Level-4 synthetic frames: stationary estimate within 15% of true r0."""
    from anisotilt.stats import Cn2Profile
    from anisotilt.synth import SynthConfig, degrade_sequence
    seq = degrade_sequence(synthetic_scene(256, 11),
                           SynthConfig(cfg, Cn2Profile.constant(1e-15), 100, seed=11), threads=4)
    r0 = seq.metadata["r0_m"]
    assert r0 == pytest.approx(0.0478, rel=5e-3)
    est = estimate_r0(seq, threads=4)
    assert abs(est.r0 / r0 - 1) < 0.15
    assert est.alpha == 0.0
    # width is consistent with the model at alpha = 0
    assert est.sigma_G == pytest.approx(math.sqrt(sigma_G2(cfg, r0, 0.0)), rel=0.15)
