import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from convinv import metrics
from convinv.errors import DimensionError, UndefinedMetricError
from oracles import sam_loop, ssim_loop


def test_psnr_formula_cases(rng):
    ref = np.zeros((1, 4, 4))
    est = np.full((1, 4, 4), 0.1)
    assert metrics.psnr(ref, est, peak=1.0) == pytest.approx(20.0, abs=1e-12)
    r = rng.uniform(size=(2, 8, 8))
    assert metrics.psnr(r, r + 0.1, 1.0) == pytest.approx(20.0, abs=1e-12)
    assert metrics.psnr(r, r) == math.inf


def test_psnr_default_peak_and_symmetry(rng):
    a = rng.uniform(size=(2, 8, 8))
    b = a + 0.05 * rng.standard_normal(a.shape)
    mse = np.mean((a - b) ** 2)
    assert metrics.psnr(a, b) == pytest.approx(
        10 * np.log10(a.max() ** 2 / mse), rel=1e-14)
    assert metrics.psnr(a, b, 1.0) == metrics.psnr(b, a, 1.0)


def test_psnr_checks():
    with pytest.raises(DimensionError):
        metrics.psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((2, 2)), np.ones((2, 2)))


def test_ssim_identity_and_inversion(rng):
    a = rng.uniform(size=(16, 16))
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert metrics.ssim(a, 1 - a, peak=1.0) < 1


def test_ssim_affine_matches_loop_oracle(rng):
    a = rng.uniform(size=(16, 16))
    b = 0.5 * a + 0.25
    assert abs(metrics.ssim(a, b, peak=1.0) - ssim_loop(a, b)) < 1e-6


@pytest.mark.parametrize("n", [11, 16, 24])
def test_ssim_matches_skimage(rng, n):
    a = rng.uniform(size=(n, n))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0,
                                full=True)[1]
    pad = 5
    interior = ref[pad:n - pad, pad:n - pad].mean()
    assert abs(metrics.ssim(a, b, peak=1.0) - interior) < 1e-6


def test_ssim_can_go_negative(rng):
    a = rng.uniform(size=(16, 16))
    assert metrics.ssim(a, a.max() - a) < 0


def test_ssim_size_checks():
    with pytest.raises(DimensionError):
        metrics.ssim(np.ones((8, 8)), np.ones((8, 8)))
    with pytest.raises(DimensionError):
        metrics.ssim(np.ones((1, 16, 16)), np.ones((1, 16, 16)))


def test_sam_cases(rng):
    ref = rng.uniform(0.1, 1, size=(3, 4, 4))
    assert metrics.sam(ref, 3 * ref) == pytest.approx(0.0, abs=1e-6)
    a = np.zeros((2, 4, 4))
    b = np.zeros((2, 4, 4))
    a[0] = 1
    b[1] = 2
    assert metrics.sam(a, b) == pytest.approx(90.0, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        metrics.sam(np.zeros((2, 4, 4)), b)


def test_sam_matches_loop(rng):
    a, b = rng.standard_normal((2, 3, 4, 4))
    assert abs(metrics.sam(a, b) - sam_loop(a, b)) < 1e-10


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_sam_symmetric_and_scale_invariant(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((2, 3, 5, 5))
    scale = r.uniform(0.1, 10, size=(1, 5, 5))
    assert abs(metrics.sam(a, b) - metrics.sam(b, a)) < 1e-10
    assert abs(metrics.sam(a, b * scale) - metrics.sam(a, b)) < 1e-8


def test_score_of_identical_stacks(rng):
    x = rng.uniform(size=(2, 16, 16))
    rep = metrics.score(x, x)
    assert rep.psnr_mean == math.inf
    assert all(v == math.inf for v in rep.psnr_db)
    assert rep.ssim_mean == pytest.approx(1.0, abs=1e-12)
    assert rep.sam_degrees == pytest.approx(0.0, abs=1e-6)
    d = json.loads(rep.to_json())
    assert d["psnr_mean"] == "inf" and d["dims"] == [2, 16, 16]
    assert rep.lines()[0].startswith("psnr_db_mean\t")


def test_score_uses_shared_peak(rng):
    x = rng.uniform(size=(2, 16, 16))
    x[1] *= 0.5
    y = x + 0.01
    rep = metrics.score(x, y)
    assert rep.psnr_db[0] == pytest.approx(rep.psnr_db[1])
