import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisotilt.errors import DataError
from anisotilt.metrics import psnr, ssim
from anisotilt.synth import synthetic_scene
from oracles import ssim_reference


def test_psnr_identical():
    a = np.arange(64.0).reshape(8, 8)
    assert psnr(a, a) == math.inf


def test_psnr_known():
    a = np.zeros((10, 10))
    b = a + 1.0
    assert psnr(a, b) == pytest.approx(20 * math.log10(255))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = synthetic_scene(64, seed)
    b = a + rng.normal(0, 10 * (seed + 1), a.shape)
    assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)


def test_ssim_identity_and_shape():
    a = synthetic_scene(32, 4)
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(DataError):
        ssim(a, a[:-1])
    with pytest.raises(DataError):
        psnr(a, a[:, :-1])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 40.0))
def test_more_noise_lower_scores(s):
    rng = np.random.default_rng(0)
    a = synthetic_scene(32, 0)
    n = rng.normal(size=a.shape)
    assert psnr(a, a + s * n) > psnr(a, a + 2 * s * n)
    assert ssim(a, a + s * n) > ssim(a, a + 2 * s * n)
