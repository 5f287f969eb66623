"""
Superimposed-convolution forward model.

Measurement ``k`` is the sum over source slices ``s`` of the circular
convolution of slice ``s`` with kernel ``h[k][s]``.  Kernels are kept at
their native support and embedded centered-at-origin with wraparound.
"""
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor
from .errors import DegenerateSignalError, DimensionError


def embed_kernel(kernel, n):
    """Zero-pad ``kernel`` to ``n x n`` with its center moved to (0, 0)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise DimensionError("kernel must be 2D")
    h, w = kernel.shape
    if h > n or w > n:
        raise DimensionError(
            "kernel of shape %s does not fit in %d x %d" % (kernel.shape, n, n))
    out = np.zeros((n, n))
    out[:h, :w] = kernel
    return np.roll(out, (-(h // 2), -(w // 2)), axis=(0, 1))


def kernel_spectrum(kernel, n):
    """Convolution multiplier of ``kernel``: the unnormalized 2D DFT.

    With unitary transforms, ``fft2(h * x) = spectrum(h) . fft2(x)``,
    so the multiplier is ``n`` times the unitary DFT of the kernel.
    """
    return n * tensor.fft2(embed_kernel(kernel, n))


def make_psf(kind, size=None, sigma=None, radius=None, weight=1.0):
    """Build a nonnegative, unit-sum blur kernel.

    Parameters
    ----------
    kind : {'gaussian', 'disk', 'disk-defocus', 'delta'}
    size : int, optional
        Side of the (square) support.  Defaults to the smallest odd size
        that holds the kernel.
    sigma : float
        Gaussian standard deviation in pixels.  Widths below 0.25 px
        collapse to a delta.
    radius : float
        Disk radius in pixels.
    weight : float
        Scalar applied after normalization.
    """
    if kind == "delta" or (kind == "gaussian" and sigma is not None
                           and 0 < sigma < 0.25):
        n = 1 if size is None else int(size)
        k = np.zeros((n, n))
        k[n // 2, n // 2] = 1.0
    elif kind == "gaussian":
        if sigma is None or sigma <= 0:
            raise ValueError("gaussian PSF needs sigma > 0")
        n = int(size) if size is not None else 2 * int(np.ceil(3 * sigma)) + 1
        r = np.arange(n) - n // 2
        g = np.exp(-0.5 * (r / sigma) ** 2)
        k = np.outer(g, g)
    elif kind in ("disk", "disk-defocus"):
        if radius is None or radius <= 0:
            raise ValueError("disk PSF needs radius > 0")
        n = int(size) if size is not None else 2 * int(np.ceil(radius)) + 1
        r = np.arange(n) - n // 2
        k = (r[:, None] ** 2 + r[None, :] ** 2 <= radius ** 2).astype(float)
    else:
        raise ValueError("unknown PSF kind %r" % (kind,))
    k = k / k.sum()
    return weight * k


class BlurBank:
    """K x S grid of blur kernels with cached convolution spectra.

    ``spectra`` has shape ``(K, S, N, N)``; ``spectra[k, s]`` is the
    multiplier of the convolution with ``weights[k, s] * kernels[k][s]``.
    Instances are treated as immutable.
    """

    def __init__(self, kernels, n, weights=None):
        self.kernels = [[np.array(h, dtype=np.float64) for h in row]
                        for row in kernels]
        self.K = len(self.kernels)
        self.S = len(self.kernels[0]) if self.K else 0
        if self.K < 1 or self.S < 1 or any(len(r) != self.S
                                           for r in self.kernels):
            raise DimensionError("kernels must form a non-empty K x S grid")
        if not all(np.all(np.isfinite(h)) for r in self.kernels for h in r):
            raise ValueError("kernels must be finite")
        self.N = int(n)
        if weights is None:
            weights = np.ones((self.K, self.S))
        self.weights = np.array(weights, dtype=np.float64).reshape(
            self.K, self.S)
        spectra = np.empty((self.K, self.S, self.N, self.N), complex)
        for k in range(self.K):
            for s in range(self.S):
                spectra[k, s] = self.weights[k, s] * kernel_spectrum(
                    self.kernels[k][s], self.N)
        spectra.setflags(write=False)
        self.spectra = spectra

    @classmethod
    def from_specs(cls, specs, n):
        """Build from a K x S nested list of :func:`make_psf` keyword dicts."""
        kernels, weights = [], []
        for row in specs:
            krow, wrow = [], []
            for spec in row:
                spec = dict(spec)
                wrow.append(float(spec.pop("weight", 1.0)))
                krow.append(make_psf(**spec))
            kernels.append(krow)
            weights.append(wrow)
        return cls(kernels, n, weights)

    def embedded(self, k, s):
        return self.weights[k, s] * embed_kernel(self.kernels[k][s], self.N)

    def digest(self):
        """SHA-256 of the effective kernels; identifies a bank in manifests."""
        h = hashlib.sha256()
        h.update(np.array([self.K, self.S, self.N], "<i8").tobytes())
        for k in range(self.K):
            for s in range(self.S):
                h.update(np.ascontiguousarray(self.embedded(k, s),
                                              "<f8").tobytes())
        return h.hexdigest()

    def save(self, directory):
        """Write one container per kernel plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for k in range(self.K):
            row = []
            for s in range(self.S):
                name = "kernel_%d_%d.civs" % (k, s)
                tensor.write_container(self.kernels[k][s], directory / name)
                row.append(name)
            paths.append(row)
        manifest = {"K": self.K, "S": self.S, "N": self.N,
                    "kernels": paths, "weights": self.weights.tolist()}
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        kernels = [[tensor.read_container(directory / p)[0] for p in row]
                   for row in manifest["kernels"]]
        bank = cls(kernels, manifest["N"], manifest.get("weights"))
        if (bank.K, bank.S) != (manifest["K"], manifest["S"]):
            raise DimensionError("manifest K/S disagree with kernel grid")
        return bank


def _check_depth(bank, x, depth, name):
    x = tensor.as_stack(x, name)
    if x.shape[0] != depth or x.shape[1] != bank.N:
        raise DimensionError("%s has shape %s, expected (%d, %d, %d)"
                             % (name, x.shape, depth, bank.N, bank.N))
    return x


def apply_forward(bank, x):
    """Return ``y`` with ``y[k] = sum_s x[s] (*) h[k][s]``, shape (K, N, N)."""
    x = _check_depth(bank, x, bank.S, "x")
    yf = np.einsum("ksij,sij->kij", bank.spectra, tensor.fft2(x))
    return tensor.real_part(tensor.ifft2(yf))


def apply_adjoint(bank, y):
    """Return ``H^H y``: correlation with each kernel, summed over k."""
    y = _check_depth(bank, y, bank.K, "y")
    xf = np.einsum("ksij,kij->sij", bank.spectra.conj(), tensor.fft2(y))
    return tensor.real_part(tensor.ifft2(xf))


@dataclass(frozen=True)
class NoiseSpec:
    """White Gaussian noise set by a target SNR.

    ``snr_db = inf`` requests noiseless measurements.  In per-measurement
    mode each measurement ``k`` gets its own variance from its own clean
    energy; otherwise a single variance is derived from the whole stack.
    """
    snr_db: float = 30.0
    seed: int = 0
    per_measurement: bool = True

    def __post_init__(self):
        if np.isnan(self.snr_db) or self.snr_db == -np.inf:
            raise ValueError("snr_db must be finite or +inf")


def noise_sigmas(clean, snr_db, per_measurement=True):
    """Standard deviations giving ``snr_db`` on the clean stack."""
    clean = np.asarray(clean)
    k, n = clean.shape[0], clean.shape[1] * clean.shape[2]
    if np.isinf(snr_db):
        return np.zeros(k)
    scale = 10.0 ** (snr_db / 10.0)
    if per_measurement:
        energy = np.sum(clean ** 2, axis=(1, 2))
        if np.any(energy == 0):
            raise DegenerateSignalError(
                "clean measurement %d is identically zero"
                % int(np.flatnonzero(energy == 0)[0]))
        return np.sqrt(energy / (n * scale))
    energy = np.sum(clean ** 2)
    if energy == 0:
        raise DegenerateSignalError("clean measurements are identically zero")
    return np.full(k, np.sqrt(energy / (k * n * scale)))


def simulate_measurements(bank, x, noise=NoiseSpec()):
    """Return ``(y, sigmas)`` with ``y = H x + w``."""
    clean = apply_forward(bank, x)
    sigmas = noise_sigmas(clean, noise.snr_db, noise.per_measurement)
    if np.isinf(noise.snr_db):
        return clean, sigmas
    rng = np.random.default_rng(noise.seed)
    w = rng.standard_normal(clean.shape) * sigmas[:, None, None]
    return clean + w, sigmas


def realized_snr_db(clean, noisy):
    """Per-measurement SNR actually achieved, in dB."""
    clean = np.asarray(clean)
    err = np.asarray(noisy) - clean
    return 10 * np.log10(np.sum(clean ** 2, axis=(1, 2))
                         / np.sum(err ** 2, axis=(1, 2)))
