"""Reconstruction quality: PSNR, SSIM and spectral angle."""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import correlate

from . import tensor
from .errors import DimensionError, UndefinedMetricError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _same(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise DimensionError("shapes differ: %s vs %s"
                             % (ref.shape, est.shape))
    return ref, est


def psnr(ref, est, peak=None):
    """``10 log10(peak^2 / MSE)``; ``inf`` on an exact match.

    ``peak`` defaults to the maximum of ``ref``.
    """
    ref, est = _same(ref, est)
    if peak is None:
        peak = float(ref.max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak ** 2 / mse)


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(ref_slice, est_slice, peak=None):
    """Mean SSIM of two 2D images over all full 11 x 11 windows.

    Both images are divided by ``peak`` (default: max of ``ref``) so the
    dynamic range is 1.  Windows are Gaussian-weighted (sigma 1.5).
    """
    ref, est = _same(ref_slice, est_slice)
    if ref.ndim != 2:
        raise DimensionError("ssim works on single 2D slices")
    if min(ref.shape) < SSIM_WIN:
        raise DimensionError("images must be at least %d x %d"
                             % (SSIM_WIN, SSIM_WIN))
    if peak is None:
        peak = float(ref.max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = ref / peak, est / peak
    w = gaussian_window()

    def filt(img):
        return correlate(img, w, mode="valid", method="direct")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
            / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(smap.mean())


def sam(ref, est, eps=1e-12):
    """Mean angle (degrees) between per-pixel spectra along the slice axis."""
    ref, est = _same(tensor.as_stack(ref), tensor.as_stack(est))
    dot = np.sum(ref * est, axis=0)
    na = np.sqrt(np.sum(ref ** 2, axis=0))
    nb = np.sqrt(np.sum(est ** 2, axis=0))
    valid = (na > eps) & (nb > eps)
    if not np.any(valid):
        raise UndefinedMetricError("no pixel has nonzero spectra in both")
    cos = np.clip(dot[valid] / (na[valid] * nb[valid]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean())


@dataclass
class MetricReport:
    psnr_db: list
    psnr_mean: float
    ssim: list
    ssim_mean: float
    sam_degrees: float
    dims: list

    def to_json(self):
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, list):
                return [enc(i) for i in v]
            return v
        return json.dumps({k: enc(v) for k, v in asdict(self).items()},
                          indent=2, sort_keys=True)

    def lines(self):
        return ["psnr_db_mean\t%s" % self.psnr_mean,
                "ssim_mean\t%s" % self.ssim_mean,
                "sam_degrees\t%s" % self.sam_degrees]


def score(ref, est, peak=None):
    """All three metrics for a pair of stacks.

    PSNR and SSIM are per slice and averaged; the peak is shared by all
    slices (maximum of the whole reference unless given).  SAM is
    ``nan`` when every pixel is degenerate.
    """
    ref, est = _same(tensor.as_stack(ref), tensor.as_stack(est))
    if peak is None:
        peak = float(ref.max())
    per_psnr = [psnr(r, e, peak) for r, e in zip(ref, est)]
    per_ssim = [ssim(r, e, peak) for r, e in zip(ref, est)]
    try:
        angle = sam(ref, est)
    except UndefinedMetricError:
        angle = math.nan
    return MetricReport(per_psnr, psnr(ref, est, peak), per_ssim,
                        float(np.mean(per_ssim)), angle, list(ref.shape))
