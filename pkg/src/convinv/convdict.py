"""
Convolutional dictionary prior: sparse coding and filter learning.

Layout conventions
------------------
filters   ``(M, R, L, L)``; per-slice mode has ``R = 1``.
codes     ``(M, S, N, N)``, or ``(B, M, S, N, N)`` for a batch of B images.
Filters are corner-anchored: the filter origin sits at index 0 and the
support is ``[:R, :L, :L]`` of the zero-padded code-size array.

Volumetric mode convolves in 3D over ``(S, N, N)``; per-slice mode
convolves each slice in 2D with a shared set of 2D filters.  All solves
run per frequency bin in the unitary Fourier domain.
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor
from .errors import DegenerateProjectionError, DimensionError
from .prox import soft_threshold

MODES = ("volumetric", "per-slice")


def _axes(mode):
    return (-3, -2, -1) if mode == "volumetric" else (-2, -1)


def fwd(a, mode):
    """Unitary DFT over the convolution axes of ``mode``."""
    return tensor.fft3(a) if mode == "volumetric" else tensor.fft2(a)


def inv(a, mode):
    return tensor.ifft3(a) if mode == "volumetric" else tensor.ifft2(a)


def multiplier(a, mode):
    """Convolution multiplier (unnormalized DFT) of a code-size array."""
    n = np.prod([a.shape[ax] for ax in _axes(mode)])
    return np.sqrt(n) * fwd(a, mode)


class ConvDictionary:
    """M filters with unit norm and L x L x R support."""

    def __init__(self, filters, mode="per-slice"):
        if mode not in MODES:
            raise ValueError("unknown mode %r" % (mode,))
        f = np.array(filters, dtype=np.float64)
        if f.ndim == 3:
            f = f[:, np.newaxis]
        if f.ndim != 4 or f.shape[2] != f.shape[3]:
            raise DimensionError("filters must have shape (M, R, L, L)")
        if mode == "per-slice" and f.shape[1] != 1:
            raise DimensionError("per-slice filters must have R = 1")
        self.filters = f
        self.mode = mode
        self._cache = {}

    @property
    def M(self):
        return self.filters.shape[0]

    @property
    def R(self):
        return self.filters.shape[1]

    @property
    def L(self):
        return self.filters.shape[2]

    def padded(self, S, N):
        """Filters zero-padded to code size, shape ``(M, S', N, N)``."""
        depth = S if self.mode == "volumetric" else 1
        if self.L > N or self.R > depth:
            raise DimensionError("filters of support %dx%dx%d exceed %dx%dx%d"
                                 % (self.L, self.L, self.R, N, N, depth))
        out = np.zeros((self.M, depth, N, N))
        out[:, :self.R, :self.L, :self.L] = self.filters
        return out

    def spectra(self, S, N):
        """Filter multipliers at code size, shape ``(M, S or 1, N, N)``."""
        key = (S, N)
        if key not in self._cache:
            self._cache[key] = multiplier(self.padded(S, N), self.mode)
        return self._cache[key]

    def norms(self):
        return np.sqrt(np.sum(self.filters ** 2, axis=(1, 2, 3)))

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for m in range(self.M):
            name = "filter_%d.civs" % m
            tensor.write_container(self.filters[m], directory / name)
            names.append(name)
        manifest = {"M": self.M, "L": self.L, "R": self.R, "mode": self.mode,
                    "anchor": "corner", "filters": names}
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        man = json.loads((directory / "manifest.json").read_text())
        if man.get("anchor", "corner") != "corner":
            raise ValueError("only corner-anchored filters are supported")
        filters = np.stack([tensor.read_container(directory / p)
                            for p in man["filters"]])
        return cls(filters, man["mode"])

    @classmethod
    def random(cls, M, L, R=1, mode="per-slice", seed=0):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((M, R if mode == "volumetric" else 1, L, L))
        f /= np.sqrt(np.sum(f ** 2, axis=(1, 2, 3), keepdims=True))
        return cls(f, mode)


@dataclass(frozen=True)
class TikhonovSpec:
    """Gradient penalty ``mu/2 sum_i ||r_i * z_m||^2`` on the codes."""
    mu: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    def grad_spectra(self, S, N, mode):
        """Sum of squared multipliers of circular [1, -1] differences."""
        wn = 2 - 2 * np.cos(2 * np.pi * np.arange(N) / N)
        g = wn[:, None] + wn[None, :]
        if mode == "volumetric":
            ws = 2 - 2 * np.cos(2 * np.pi * np.arange(S) / S)
            return ws[:, None, None] + g[None]
        return g[None]


def solve_rank_ones(e, a, c):
    """Solve ``(e I + sum_p a_p a_p^H) v = c`` independently per bin.

    ``a`` has shape ``(P, M, *bins)`` and ``c`` shape ``(M, *bins)``;
    ``e`` is positive and broadcasts against a bin array.  With P = 1
    this is the Sherman-Morrison formula; for P > 1 the rank-one terms
    are folded in one at a time (iterated Sherman-Morrison).
    """
    ws, deltas = [], []

    def apply_inverse(b, upto):
        r = b / e
        for j in range(upto):
            r = r - ws[j] * (np.sum(np.conj(a[j]) * r, axis=0) / deltas[j])
        return r

    for p in range(a.shape[0]):
        w = apply_inverse(a[p], p)
        ws.append(w)
        deltas.append(1.0 + np.sum(np.conj(a[p]) * w, axis=0))
    return apply_inverse(c, a.shape[0])


def _code_shapes(dictionary, x):
    x = tensor.as_stack(x, "x")
    return x, x.shape[0], x.shape[1]


def csc_code_update(dictionary, x, t_aux, u_dual, rho, tik=TikhonovSpec()):
    """Solve ``(rho I + mu sum R^H R + D^H D) z = D^H x + rho (t - u)``.

    Per frequency bin the system is a positive diagonal ``e_n`` plus
    the rank-one term of the filter spectra, solved in closed form.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    x, S, N = _code_shapes(dictionary, x)
    mode = dictionary.mode
    theta = dictionary.spectra(S, N)
    a = np.conj(theta)
    c = a * fwd(x, mode)[None] + rho * fwd(t_aux - u_dual, mode)
    e = rho + tik.mu * tik.grad_spectra(S, N, mode)
    ac = np.sum(theta * c, axis=0)
    aa = np.sum(np.abs(theta) ** 2, axis=0)
    v = (c - a * (ac / (e + aa))) / e
    return tensor.real_part(inv(v, mode))


def conv_synth(dictionary, z):
    """``sum_m d_m * z_m``; shape ``(S, N, N)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4 or z.shape[0] != dictionary.M:
        raise DimensionError("codes must have shape (M, S, N, N), got %s"
                             % (z.shape,))
    theta = dictionary.spectra(z.shape[1], z.shape[2])
    xf = np.sum(theta * fwd(z, dictionary.mode), axis=0)
    return tensor.real_part(inv(xf, dictionary.mode))


def project_filters(v, L, R):
    """Crop to ``[:R, :L, :L]``, zero-pad back and normalize each filter."""
    out = np.zeros_like(v)
    out[:, :R, :L, :L] = v[:, :R, :L, :L]
    nrm = np.sqrt(np.sum(out ** 2, axis=(1, 2, 3), keepdims=True))
    if np.any(nrm < 1e-14):
        raise DegenerateProjectionError("a filter projected to zero")
    return out / nrm


def conv_dict_update(z, x, g, e, sigma, L, R=1, mode="per-slice"):
    """One ADMM round of the constrained filter update.

    Parameters
    ----------
    z : codes ``(M, S, N, N)`` or a batch ``(B, M, S, N, N)``
    x : images ``(S, N, N)`` or ``(B, S, N, N)``
    g, e : auxiliary and scaled dual, code-size filters
        ``(M, S or 1, N, N)``
    sigma : penalty parameter

    Returns ``(d, g, e)``: the least-squares filters, their projection
    onto unit-norm L x L x R support, and the dual updated as
    ``e + d - g``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.ndim == 4:
        z, x = z[np.newaxis], x[np.newaxis]
    if z.ndim != 5 or x.ndim != 4 or z.shape[0] != x.shape[0] \
            or z.shape[2:] != x.shape[1:]:
        raise DimensionError("codes %s and images %s disagree"
                             % (z.shape, x.shape))
    gamma = multiplier(z, mode)                  # (B, M, S, N, N)
    xf = fwd(x, mode)                            # (B, S, N, N)
    rhs = np.sum(np.conj(gamma) * xf[:, None], axis=0)
    if mode == "per-slice":
        # Shared 2D filters: every slice of every image adds a rank-one term
        rhs = np.sum(rhs, axis=1, keepdims=True)
        b, m, s = gamma.shape[:3]
        terms = np.conj(np.moveaxis(gamma, 2, 1)).reshape(
            b * s, m, 1, *gamma.shape[3:])
    else:
        terms = np.conj(gamma)
    rhs = rhs + sigma * fwd(g - e, mode)
    d = tensor.real_part(inv(solve_rank_ones(sigma, terms, rhs), mode))
    g_new = project_filters(d + e, L, R)
    return d, g_new, e + d - g_new


@dataclass
class TrainConfig:
    """Settings for :func:`train_conv_dict`.

    ``restarts`` independent random initializations (seeds ``seed``,
    ``seed + 1``, ...) are trained and the one reaching the lowest
    final objective is kept.  Support-constrained filter learning has
    shifted-copy local minima, which restarts sidestep.

    With ``lam_start`` set, the sparsity weight decays geometrically
    from ``lam_start`` to ``lam`` (factor ``lam_decay`` per iteration).

    ``shift_iters > 0`` enables a final local search: each filter in
    turn is moved by one pixel in every spatial direction, every
    candidate is refined for ``shift_iters`` iterations at fixed
    ``lam``, and the lowest objective wins.  Smooth filters otherwise
    tend to come back as shifted, slightly cropped copies.
    """
    M: int = 4
    L: int = 8
    R: int = 1
    mode: str = "per-slice"
    lam: float = 0.1
    rho: float = 1.0
    sigma: float = 10.0
    mu: float = 0.0
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0
    restarts: int = 1
    lam_start: float = None
    lam_decay: float = 0.97
    shift_iters: int = 0

    def lam_at(self, it):
        if self.lam_start is None:
            return self.lam
        return max(self.lam, self.lam_start * self.lam_decay ** it)


@dataclass
class TrainHistory:
    iterations: int = 0
    objective: float = float("nan")
    seed: int = 0
    dict_change: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)


def coding_objective(dictionary, x, codes, lam, tik=TikhonovSpec()):
    """``1/2 ||sum_m d_m * z_m - x||^2 + lam ||z||_1`` (+ Tikhonov)."""
    fit = 0.5 * float(np.sum((conv_synth(dictionary, codes) - x) ** 2))
    if tik.mu:
        S, N = codes.shape[1], codes.shape[2]
        gs = tik.grad_spectra(S, N, dictionary.mode)
        fit += 0.5 * tik.mu * float(np.sum(gs * np.abs(
            fwd(codes, dictionary.mode)) ** 2))
    return fit + lam * float(np.sum(np.abs(codes)))


def _train_once(x, cfg, init):
    B, S, N, _ = x.shape
    R = init.R
    g = init.padded(S, N)
    e = np.zeros_like(g)
    z = np.zeros((B, cfg.M, S, N, N))
    t = np.zeros_like(z)
    u = np.zeros_like(z)
    tik = TikhonovSpec(cfg.mu)
    hist = TrainHistory()
    dictionary = init
    for it in range(cfg.max_iters):
        for b in range(B):
            z[b] = csc_code_update(dictionary, x[b], t[b], u[b], cfg.rho, tik)
        t = soft_threshold(z + u, cfg.lam_at(it) / cfg.rho)
        u = u + z - t
        _, g_new, e = conv_dict_update(z, x, g, e, cfg.sigma, cfg.L, R,
                                       cfg.mode)
        change = np.linalg.norm(g_new - g) / np.linalg.norm(g)
        g = g_new
        dictionary = ConvDictionary(g[:, :R, :cfg.L, :cfg.L], cfg.mode)
        hist.iterations = it + 1
        hist.dict_change.append(float(change))
        hist.norms.append(dictionary.norms().tolist())
        if change < cfg.tol and it > 0 and cfg.lam_at(it) == cfg.lam:
            break
    hist.objective = sum(coding_objective(dictionary, x[b], t[b], cfg.lam,
                                          tik) for b in range(B))
    return dictionary, hist


def train_conv_dict(training_stacks, config=TrainConfig(), init=None):
    """Learn filters from clean stacks by alternating coding and updates.

    Each outer iteration runs one code/auxiliary/dual round of the
    sparse coding ADMM followed by one round of the filter ADMM, so the
    dictionary stays unit-norm and support-limited at every iteration.
    Returns the dictionary and a :class:`TrainHistory`.
    """
    stacks = [tensor.as_stack(s) for s in training_stacks]
    if not stacks:
        raise ValueError("training set is empty")
    if len({s.shape for s in stacks}) != 1:
        raise DimensionError("training stacks must share one shape")
    x = np.stack(stacks)                          # (B, S, N, N)
    cfg = config
    R = cfg.R if cfg.mode == "volumetric" else 1
    if init is not None:
        return _train_once(x, cfg, init)
    best = None
    objectives = []
    for k in range(max(cfg.restarts, 1)):
        seed = cfg.seed + k
        start = ConvDictionary.random(cfg.M, cfg.L, R, cfg.mode, seed)
        dictionary, hist = _train_once(x, cfg, start)
        hist.seed = seed
        objectives.append(hist.objective)
        if best is None or hist.objective < best[1].objective:
            best = (dictionary, hist)
    best[1].restart_objectives = objectives
    if cfg.shift_iters > 0:
        best = _shift_search(x, cfg, best)
    return best


def shift_filter(f, dy, dx):
    """Move an ``(R, L, L)`` filter inside its support, then renormalize."""
    L = f.shape[-1]
    out = np.zeros_like(f)
    out[..., max(dy, 0):L + min(dy, 0), max(dx, 0):L + min(dx, 0)] = \
        f[..., max(-dy, 0):L + min(-dy, 0), max(-dx, 0):L + min(-dx, 0)]
    nrm = np.linalg.norm(out)
    return out / nrm if nrm > 0 else f


def _shift_search(x, cfg, best):
    fixed = replace(cfg, lam_start=None, max_iters=cfg.shift_iters)
    dictionary, hist = best
    restarts = hist.restart_objectives
    for m in range(dictionary.M):
        trials = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                f = dictionary.filters.copy()
                f[m] = shift_filter(f[m], dy, dx)
                trials.append(_train_once(x, fixed,
                                          ConvDictionary(f, cfg.mode)))
        dictionary, hist = min(trials, key=lambda t: t[1].objective)
    hist.seed = best[1].seed
    hist.restart_objectives = restarts
    return dictionary, hist
