"""
ADMM reconstruction drivers.

``run_analysis`` handles transform-sparsity and TV priors,
``run_synthesis`` the patch and convolutional dictionary priors (with
optional online dictionary learning).  Both start from zero iterates and
stop once the relative change of the image drops below ``stop_tol``.
"""
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import convdict, forward, freqsolve, patch, prox
from .errors import DimensionError, DivergenceError
from .transforms import identity_transform

log = logging.getLogger(__name__)

PRIORS = ("l1-transform", "tv", "patch-dict", "conv-dict",
          "conv-dict-tikhonov")
ANALYSIS_PRIORS = ("l1-transform", "tv")
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class AdaptSpec:
    enabled: bool = False
    tau: float = 2.0
    mu_ratio: float = 10.0


@dataclass(frozen=True)
class SolverConfig:
    prior: str = "tv"
    beta: float = 1.0
    lam: float = 1e-2
    rho0: float = 0.1
    sigma0: float = 1.0
    mu_tik: float = 0.0
    adapt: AdaptSpec = AdaptSpec()
    max_iters: int = 200
    stop_tol: float = 1e-4
    online_dict_update: bool = False
    seed: int = 0
    inner_iters: int = 30
    inner_tol: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.prior not in PRIORS:
            raise ValueError("unknown prior %r" % (self.prior,))
        for name in ("beta", "lam", "rho0", "sigma0", "stop_tol"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if self.mu_tik < 0:
            raise ValueError("mu_tik must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.adapt.tau <= 1 or self.adapt.mu_ratio <= 0:
            raise ValueError("adaptation needs tau > 1 and mu_ratio > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("adapt"), dict):
            d["adapt"] = AdaptSpec(**d["adapt"])
        return cls(**d)


# Parameter regimes per prior and SNR: 2D priors (tag '2d') and 3D priors
# (tag '3d').  rho may depend on lambda, hence the callables.
_REGIMES = {
    ("tv", "2d"): {
        20: dict(lam=1e-2), 30: dict(lam=1e-3), 40: dict(lam=1e-4),
        "common": dict(beta=1.0, rho=lambda lam: 10 * lam)},
    ("patch-dict", "2d"): {
        20: dict(beta=100.0), 30: dict(beta=500.0), 40: dict(beta=3000.0),
        "common": dict(lam=0.05, rho=lambda lam: 1.0, sigma0=1.0)},
    ("conv-dict", "2d"): {
        20: dict(lam=0.2, beta=2.0), 30: dict(lam=0.15, beta=8.0),
        40: dict(lam=0.15, beta=50.0),
        "common": dict(rho=lambda lam: 50 * lam + 0.5, sigma0=10.0)},
    ("l1-transform", "3d"): {
        20: dict(lam=0.5), 30: dict(lam=0.1), 40: dict(lam=0.01),
        "common": dict(beta=1.0, rho=lambda lam: 500 * lam)},
    ("patch-dict", "3d"): {
        20: dict(beta=0.1), 30: dict(beta=1.0), 40: dict(beta=10.0),
        "common": dict(lam=1e-4, rho=lambda lam: 1000.0, sigma0=10.0)},
    ("conv-dict", "3d"): {
        20: dict(beta=0.01), 30: dict(beta=0.1), 40: dict(beta=0.2),
        "common": dict(lam=1e-3, rho=lambda lam: 1000.0, sigma0=10.0)},
}
_TIKHONOV_MU = {"2d": 0.01, "3d": 0.1}


def preset(prior, snr_db, dims="2d", **overrides):
    """SolverConfig for one of the published parameter regimes."""
    base = "conv-dict" if prior == "conv-dict-tikhonov" else prior
    try:
        table = _REGIMES[(base, dims)]
        params = dict(table["common"], **table[int(snr_db)])
    except KeyError:
        raise KeyError("no preset for prior=%r snr=%r dims=%r"
                       % (prior, snr_db, dims)) from None
    rho = params.pop("rho")(params["lam"])
    params["rho0"] = rho
    if prior == "conv-dict-tikhonov":
        params["mu_tik"] = _TIKHONOV_MU[dims]
    params.update(overrides)
    return SolverConfig(prior=prior, **params)


def adapt_penalty(rho, r, s, tau=2.0, mu_ratio=10.0):
    """Residual balancing: grow rho when r dominates, shrink when s does."""
    if r > mu_ratio * s:
        return tau * rho
    if s > mu_ratio * r:
        return rho / tau
    return rho


def relative_change(x_new, x_old):
    """``||x_new - x_old|| / ||x_old||``; None when ``x_old`` is zero."""
    denom = np.linalg.norm(x_old)
    if denom == 0:
        return None
    return float(np.linalg.norm(x_new - x_old) / denom)


@dataclass
class RunReport:
    prior: str
    iterations: int = 0
    converged: bool = False
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    psi_inversions: int = 0

    def record(self, r, s, change, rho, objective, seconds, sigma=None):
        self.primal_residual.append(float(r))
        self.dual_residual.append(float(s))
        self.rel_change.append(None if change is None else float(change))
        self.rho.append(float(rho))
        if sigma is not None:
            self.sigma.append(float(sigma))
        self.objective.append(float(objective))
        self.timings.append(float(seconds))

    def to_dict(self, timings=True):
        d = asdict(self)
        d["final_primal_residual"] = (self.primal_residual[-1]
                                      if self.primal_residual else None)
        d["final_dual_residual"] = (self.dual_residual[-1]
                                    if self.dual_residual else None)
        if not timings:
            d.pop("timings")
        return d

    def to_json(self, timings=True):
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "objective", "primal_residual",
                    "dual_residual", "rel_change", "rho"])
        for i in range(self.iterations):
            ch = self.rel_change[i]
            w.writerow([i + 1, repr(self.objective[i]),
                        repr(self.primal_residual[i]),
                        repr(self.dual_residual[i]),
                        "" if ch is None else repr(ch), repr(self.rho[i])])
        return buf.getvalue()


def _data_term(bank, y, x, beta):
    return 0.5 * beta * float(np.sum((y - forward.apply_forward(bank, x)) ** 2))


def _check_shapes(y, bank):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    if y.shape != (bank.K, bank.N, bank.N):
        raise DimensionError("measurement shape %s does not match bank "
                             "(K=%d, N=%d)" % (y.shape, bank.K, bank.N))
    return y


def _stop(change, tol):
    if change is not None and change > DIVERGENCE_LIMIT:
        raise DivergenceError("relative change %.3g" % change)
    return change is not None and change < tol


def run_analysis(y, bank, transform=None, prox_kind=None, config=None,
                 callback=None):
    """Reconstruct with an analysis prior.

    Parameters
    ----------
    y : measurements ``(K, N, N)``
    bank : BlurBank
    transform : TransformOracle, ignored (identity) for TV
    prox_kind : 'soft' or 'tv'; inferred from ``config.prior`` if None
    config : SolverConfig
    callback : optional ``f(iteration, x)`` called after each iteration

    Returns ``(x, RunReport)``.
    """
    cfg = config or SolverConfig()
    if prox_kind is None:
        prox_kind = "tv" if cfg.prior == "tv" else "soft"
    if prox_kind not in ("soft", "tv"):
        raise ValueError("prox_kind must be 'soft' or 'tv'")
    if prox_kind == "tv" or transform is None:
        transform = identity_transform()
    y = _check_shapes(y, bank)
    S, N = bank.S, bank.N
    report = RunReport(prior=cfg.prior)

    rho = cfg.rho0
    psi_inv = freqsolve.invert_psi(freqsolve.assemble_psi(bank, cfg.beta, rho))
    report.psi_inversions = 1
    rhs = freqsolve.precompute_rhs(bank, y, cfg.beta)

    x = np.zeros((S, N, N))
    t = np.zeros_like(x)
    u = np.zeros_like(x)

    if prox_kind == "tv":
        def prox_t(v):
            return prox.tv_prox(v, cfg.lam / rho, cfg.inner_iters,
                                cfg.inner_tol)

        def penalty(x_):
            return prox.tv_norm(x_)
    else:
        def prox_t(v):
            return prox.soft_threshold(v, cfg.lam / rho)

        def penalty(x_):
            return float(np.sum(np.abs(transform.apply(x_))))

    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        x_new = freqsolve.image_update_analysis(psi_inv, rhs, transform,
                                                t - u, rho)
        tx = transform.apply(x_new)
        t_prev = t
        t = prox_t(tx + u)
        u = u + tx - t
        r = np.linalg.norm(tx - t)
        s = rho * np.linalg.norm(t - t_prev)
        change = relative_change(x_new, x) if it > 0 else None
        x = x_new
        elapsed = time.perf_counter() - t0
        obj = _data_term(bank, y, x, cfg.beta) + cfg.lam * penalty(x)
        report.record(r, s, change, rho, obj, elapsed)
        report.iterations = it + 1
        if callback is not None:
            callback(it, x)
        if _stop(change, cfg.stop_tol):
            report.converged = True
            break
        if cfg.adapt.enabled:
            new_rho = adapt_penalty(rho, r, s, cfg.adapt.tau,
                                    cfg.adapt.mu_ratio)
            if new_rho != rho:
                # scaled dual u = y / rho must follow rho
                u = u * (rho / new_rho)
                rho = new_rho
                psi_inv = freqsolve.invert_psi(
                    freqsolve.assemble_psi(bank, cfg.beta, rho))
                report.psi_inversions += 1
    log.info("analysis run: %d iterations, converged=%s",
             report.iterations, report.converged)
    return x, report


class PatchPrior:
    """Patch dictionary state for :func:`run_synthesis`."""

    def __init__(self, D, geom):
        self.D = np.asarray(D, dtype=np.float64)
        self.geom = geom
        if self.D.shape[0] != geom.patch_len:
            raise DimensionError("dictionary rows %d != patch length %d"
                                 % (self.D.shape[0], geom.patch_len))
        if geom.t_scale is None:
            raise DimensionError(
                "patch geometry has uneven coverage; the closed-form image "
                "update needs P^H P = t I (use wrap=True with strides "
                "dividing the patch size)")
        self.E = np.zeros_like(self.D)

    @property
    def t_scale(self):
        return self.geom.t_scale

    def code_shape(self):
        return (self.D.shape[1], self.geom.J)

    def synth(self, z):
        return patch.dict_synth_term(self.D, z, self.geom)

    def code_update(self, x, t, u, rho):
        self._X = patch.extract_patches(x, self.geom)
        return patch.patch_code_update(self.D, self._X, t, u, rho)

    def penalty_fit(self, x, z):
        return 0.5 * float(np.sum((self.D @ z
                                   - patch.extract_patches(x, self.geom)) ** 2))

    def dict_update(self, z, sigma):
        D_ls, G, self.E = patch.patch_dict_update(self._X, z, self.D,
                                                  self.E, sigma)
        residual = np.linalg.norm(D_ls - G)
        change = np.linalg.norm(G - self.D)
        self.D = G
        return residual, change

    def rescale_dual(self, factor):
        self.E = self.E * factor

    def constraint_error(self):
        return abs(np.linalg.norm(self.D) - 1.0)


class ConvPrior:
    """Convolutional dictionary state for :func:`run_synthesis`."""

    def __init__(self, dictionary, S, N, mu=0.0):
        self.dictionary = dictionary
        self.S, self.N = S, N
        self.tik = convdict.TikhonovSpec(mu)
        self.g = dictionary.padded(S, N)
        self.e = np.zeros_like(self.g)

    t_scale = 1.0

    def code_shape(self):
        return (self.dictionary.M, self.S, self.N, self.N)

    def synth(self, z):
        return convdict.conv_synth(self.dictionary, z)

    def code_update(self, x, t, u, rho):
        self._x = x
        return convdict.csc_code_update(self.dictionary, x, t, u, rho,
                                        self.tik)

    def penalty_fit(self, x, z):
        fit = 0.5 * float(np.sum((self.synth(z) - x) ** 2))
        if self.tik.mu:
            gs = self.tik.grad_spectra(self.S, self.N, self.dictionary.mode)
            zf = convdict.fwd(z, self.dictionary.mode)
            fit += 0.5 * self.tik.mu * float(np.sum(gs * np.abs(zf) ** 2))
        return fit

    def dict_update(self, z, sigma):
        d = self.dictionary
        d_ls, g, self.e = convdict.conv_dict_update(
            z, self._x, self.g, self.e, sigma, d.L, d.R, d.mode)
        residual = np.linalg.norm(d_ls - g)
        change = np.linalg.norm(g - self.g)
        self.g = g
        self.dictionary = convdict.ConvDictionary(g[:, :d.R, :d.L, :d.L],
                                                  d.mode)
        return residual, change

    def rescale_dual(self, factor):
        self.e = self.e * factor

    def constraint_error(self):
        return float(np.abs(self.dictionary.norms() - 1.0).max())


def run_synthesis(y, bank, dict_prior, config=None, callback=None):
    """Reconstruct with a synthesis (dictionary) prior.

    ``dict_prior`` is a :class:`PatchPrior` or :class:`ConvPrior`; its
    dictionary is updated in place when ``config.online_dict_update`` is
    set.  ``callback(iteration, x, dict_prior)`` runs after every
    iteration.  Returns ``(x, RunReport, dict_prior)``.
    """
    cfg = config or SolverConfig(prior="conv-dict")
    y = _check_shapes(y, bank)
    S, N = bank.S, bank.N
    report = RunReport(prior=cfg.prior)

    t_scale = dict_prior.t_scale
    psi_inv = freqsolve.invert_psi(
        freqsolve.assemble_psi(bank, cfg.beta, t_scale))
    report.psi_inversions = 1
    rhs = freqsolve.precompute_rhs(bank, y, cfg.beta)

    x = np.zeros((S, N, N))
    z = np.zeros(dict_prior.code_shape())
    t = np.zeros_like(z)
    u = np.zeros_like(z)
    rho, sigma = cfg.rho0, cfg.sigma0

    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        x_new = freqsolve.image_update_synthesis(psi_inv, rhs,
                                                 dict_prior.synth(z), t_scale)
        z = dict_prior.code_update(x_new, t, u, rho)
        t_prev = t
        t = prox.soft_threshold(z + u, cfg.lam / rho)
        u = u + z - t
        r = np.linalg.norm(z - t)
        s = rho * np.linalg.norm(t - t_prev)
        if cfg.online_dict_update:
            r_d, ch_d = dict_prior.dict_update(z, sigma)
            s_d = sigma * ch_d
        change = relative_change(x_new, x) if it > 0 else None
        x = x_new
        elapsed = time.perf_counter() - t0
        obj = (_data_term(bank, y, x, cfg.beta)
               + dict_prior.penalty_fit(x, z)
               + cfg.lam * float(np.sum(np.abs(z))))
        report.record(r, s, change, rho, obj, elapsed,
                      sigma if cfg.online_dict_update else None)
        report.iterations = it + 1
        if callback is not None:
            callback(it, x, dict_prior)
        if _stop(change, cfg.stop_tol):
            report.converged = True
            break
        if cfg.adapt.enabled:
            new_rho = adapt_penalty(rho, r, s, cfg.adapt.tau,
                                    cfg.adapt.mu_ratio)
            if new_rho != rho:
                u = u * (rho / new_rho)
                rho = new_rho
            if cfg.online_dict_update:
                new_sigma = adapt_penalty(sigma, r_d, s_d, cfg.adapt.tau,
                                          cfg.adapt.mu_ratio)
                if new_sigma != sigma:
                    dict_prior.rescale_dual(sigma / new_sigma)
                    sigma = new_sigma
    log.info("synthesis run: %d iterations, converged=%s",
             report.iterations, report.converged)
    return x, report, dict_prior


def with_overrides(config, **kw):
    return replace(config, **kw)
