"""
Separable orthonormal analysis transforms.

A TransformOracle applies a 1D orthonormal basis along both spatial axes
of every slice, optionally followed by another 1D basis along the slice
axis.  Any orthonormal matrix can be plugged in, so periodized wavelets
with user-supplied filters (e.g. Symmlets) fit the same interface.
"""
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError

HAAR_LOWPASS = (2 ** -0.5, 2 ** -0.5)


@lru_cache(maxsize=64)
def dct_matrix(n):
    """Orthonormal DCT-II matrix (rows are basis functions)."""
    return sfft.dct(np.eye(n), norm="ortho", axis=0)


def _dwt_level(n, lowpass):
    h = np.asarray(lowpass, dtype=np.float64)
    ln = len(h)
    g = np.array([(-1) ** k * h[ln - 1 - k] for k in range(ln)])
    w = np.zeros((n, n))
    half = n // 2
    for i in range(half):
        for k in range(ln):
            w[i, (2 * i + k) % n] += h[k]
            w[half + i, (2 * i + k) % n] += g[k]
    return w


def wavelet_matrix(n, lowpass=HAAR_LOWPASS, levels=None):
    """Periodized orthonormal DWT matrix built from a QMF lowpass filter.

    Levels continue while the approximation band has even length no
    smaller than the filter.  ``levels`` caps that number.
    """
    w = np.eye(n)
    m = n
    level = 0
    while m % 2 == 0 and m >= max(len(lowpass), 2):
        if levels is not None and level >= levels:
            break
        step = np.eye(n)
        step[:m, :m] = _dwt_level(m, lowpass)
        w = step @ w
        m //= 2
        level += 1
    return w


@lru_cache(maxsize=64)
def haar_matrix(n):
    return wavelet_matrix(n, HAAR_LOWPASS)


BASES_1D = {
    "identity": None,
    "dct": dct_matrix,
    "haar": haar_matrix,
}


class TransformOracle:
    """Unitary separable transform acting on ``(S, N, N)`` stacks.

    Parameters
    ----------
    spatial : callable or None
        ``n -> (n, n)`` orthonormal matrix applied along rows and columns
        of each slice.  None means identity.
    depth : callable or None
        Matrix builder for the slice axis.  None leaves slices
        uncorrelated (the per-slice 2D case).
    mode : str
        Label only: 'per-slice-2D', 'full-3D' or 'kronecker'.
    """

    def __init__(self, spatial=None, depth=None, mode=None, name=None):
        self.spatial = spatial
        self.depth = depth
        if mode is None:
            mode = "per-slice-2D" if depth is None else "kronecker"
        self.mode = mode
        self.name = name or mode

    def __repr__(self):
        return "TransformOracle(%r, mode=%r)" % (self.name, self.mode)

    def _mats(self, shape):
        if len(shape) != 3 or shape[1] != shape[2]:
            raise DimensionError("transform expects (S, N, N), got %s"
                                 % (shape,))
        a = None if self.spatial is None else self.spatial(shape[1])
        b = None if self.depth is None else self.depth(shape[0])
        for m, n in ((a, shape[1]), (b, shape[0])):
            if m is not None and m.shape != (n, n):
                raise DimensionError("basis matrix has shape %s, expected %s"
                                     % (m.shape, (n, n)))
        return a, b

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        a, b = self._mats(x.shape)
        c = x if a is None else a @ x @ a.T
        if b is not None:
            c = np.tensordot(b, c, axes=(1, 0))
        return c

    def adjoint(self, c):
        c = np.asarray(c, dtype=np.float64)
        a, b = self._mats(c.shape)
        x = c if b is None else np.tensordot(b.T, c, axes=(1, 0))
        if a is not None:
            x = a.T @ x @ a
        return x


def identity_transform():
    return TransformOracle(name="identity")


def _parse_2d(token):
    if token == "identity":
        return None
    if token in ("dct2", "haar2"):
        return BASES_1D[token[:-1]]
    raise ValueError("unknown 2D basis %r" % (token,))


def _parse_1d(token):
    if token in ("identity", "identity1"):
        return None
    if token in ("dct1", "haar1"):
        return BASES_1D[token[:-1]]
    raise ValueError("unknown 1D basis %r" % (token,))


def from_config(name):
    """Build a transform from a config string.

    Recognized: 'identity', 'dct2', 'haar2', 'dct3' and
    'kron:<2d>+<1d>' with 2D bases {dct2, haar2, identity} and 1D
    bases {dct1, haar1, identity}, e.g. 'kron:haar2+dct1'.
    """
    if name == "identity":
        return identity_transform()
    if name in ("dct2", "haar2"):
        return TransformOracle(_parse_2d(name), None, "per-slice-2D", name)
    if name == "dct3":
        return TransformOracle(dct_matrix, dct_matrix, "full-3D", name)
    if name.startswith("kron:"):
        parts = name[5:].split("+")
        if len(parts) != 2:
            raise ValueError("kronecker transform needs '<2d>+<1d>': %r"
                             % (name,))
        return TransformOracle(_parse_2d(parts[0]), _parse_1d(parts[1]),
                               "kronecker", name)
    raise ValueError("unknown transform %r" % (name,))


TRANSFORM_NAMES = ("identity", "dct2", "dct3", "haar2", "kron:haar2+dct1",
                   "kron:dct2+dct1")
