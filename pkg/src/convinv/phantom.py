"""Synthetic multispectral scenes used in place of real datacubes."""
import numpy as np


def make_phantom(N=32, S=2, n_shapes=6, seed=0):
    """Piecewise-smooth ``(S, N, N)`` scene with values in [0, 1].

    A smooth background ramp plus ellipses and rectangles; every shape
    has its own spectral weight per slice, so slices are correlated but
    not identical.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:N, 0:N] / max(N - 1, 1)
    ramp_dir = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * (np.cos(ramp_dir) * (xx - 0.5)
                        + np.sin(ramp_dir) * (yy - 0.5))
    out = 0.15 * ramp[None] * rng.uniform(0.5, 1.0, size=(S, 1, 1))
    for i in range(n_shapes):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        ry, rx = rng.uniform(0.06, 0.25, size=2)
        if i % 2 == 0:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        # gentle intensity slope inside each shape keeps it piecewise smooth
        slope = 1.0 + 0.3 * (xx - cx) * rng.uniform(-1, 1)
        spectrum = rng.uniform(0.2, 1.0, size=S)
        out += spectrum[:, None, None] * (mask * slope)[None] * 0.6
    out -= out.min()
    peak = out.max()
    return out / peak if peak > 0 else out
