"""
Patch-based dictionary prior.

Patches are Q x Q x T blocks taken with circular wrap, so with unit
strides every voxel is covered exactly Q*Q*T times and the adjoint of
extraction composed with extraction is a scaled identity.
"""
import json
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import tensor
from .errors import DegenerateProjectionError, DimensionError


@dataclass(frozen=True)
class PatchGeometry:
    """Where patches come from in an ``(S, N, N)`` stack.

    ``mode='per-slice'`` forces ``T = 1`` (2D patches from every slice).
    ``depth_stride`` steps the patch window along the slice axis; with
    ``T == S`` and ``depth_stride == S`` a single depth position is used,
    i.e. unit stride in the spatial dimensions only.
    """
    N: int
    S: int
    Q: int
    T: int = 1
    stride: int = 1
    depth_stride: int = 1
    mode: str = "volumetric"
    wrap: bool = True

    def __post_init__(self):
        if self.mode not in ("volumetric", "per-slice"):
            raise ValueError("unknown patch mode %r" % (self.mode,))
        if self.mode == "per-slice" and self.T != 1:
            raise ValueError("per-slice patches have T = 1")
        if self.Q > self.N or self.T > self.S:
            raise DimensionError("patch %dx%dx%d exceeds stack %dx%dx%d"
                                 % (self.Q, self.Q, self.T,
                                    self.N, self.N, self.S))
        if min(self.Q, self.T, self.stride, self.depth_stride) < 1:
            raise ValueError("patch sizes and strides must be positive")

    @property
    def patch_len(self):
        return self.Q * self.Q * self.T

    @cached_property
    def index(self):
        """Flat indices, shape ``(Q*Q*T, J)``: column j holds patch j."""
        n, s, q, t = self.N, self.S, self.Q, self.T
        if self.wrap:
            rows = np.arange(0, n, self.stride)
            deps = np.arange(0, s, self.depth_stride)
        else:
            rows = np.arange(0, n - q + 1, self.stride)
            deps = np.arange(0, s - t + 1, self.depth_stride)
        d0, r0, c0 = np.meshgrid(deps, rows, rows, indexing="ij")
        dt, dr, dc = np.meshgrid(np.arange(t), np.arange(q), np.arange(q),
                                 indexing="ij")
        dd = (d0.ravel()[None, :] + dt.ravel()[:, None]) % s
        rr = (r0.ravel()[None, :] + dr.ravel()[:, None]) % n
        cc = (c0.ravel()[None, :] + dc.ravel()[:, None]) % n
        return np.ascontiguousarray((dd * n + rr) * n + cc)

    @property
    def J(self):
        return self.index.shape[1]

    @cached_property
    def coverage(self):
        """Diagonal of P^H P as an ``(S, N, N)`` stack."""
        counts = np.bincount(self.index.ravel(), minlength=self.S * self.N ** 2)
        return counts.reshape(self.S, self.N, self.N).astype(np.float64)

    @property
    def t_scale(self):
        """The scalar t with P^H P = t I, or None if coverage is uneven."""
        cov = self.coverage
        if np.all(cov == cov.flat[0]) and cov.flat[0] > 0:
            return float(cov.flat[0])
        return None

    def to_dict(self):
        return asdict(self)


def extract_patches(x, geom):
    """Patch matrix ``X`` of shape ``(Q*Q*T, J)``."""
    x = tensor.as_stack(x)
    if x.shape != (geom.S, geom.N, geom.N):
        raise DimensionError("stack %s does not match geometry (%d, %d, %d)"
                             % (x.shape, geom.S, geom.N, geom.N))
    return x.ravel()[geom.index]


def aggregate_patches(X, geom):
    """Overlap-add of patch columns; the exact adjoint of extraction."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != geom.index.shape:
        raise DimensionError("patch matrix %s, expected %s"
                             % (X.shape, geom.index.shape))
    out = np.bincount(geom.index.ravel(), weights=X.ravel(),
                      minlength=geom.S * geom.N ** 2)
    return out.reshape(geom.S, geom.N, geom.N)


def patch_code_update(D, X, t_aux, u_dual, rho):
    """Codes ``z_j = (rho I + D^T D)^-1 (D^T x_j + rho (t_j - u_j))``.

    One Cholesky factorization serves every column.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    D = np.asarray(D, dtype=np.float64)
    gram = D.T @ D
    gram[np.diag_indices_from(gram)] += rho
    factor = sla.cho_factor(gram, lower=True)
    return sla.cho_solve(factor, D.T @ X + rho * (t_aux - u_dual))


def project_unit_frobenius(A):
    nrm = np.linalg.norm(A)
    if nrm < 1e-14:
        raise DegenerateProjectionError("cannot normalize a zero dictionary")
    return A / nrm


def patch_dict_update(X, Z, G, E, sigma):
    """One ADMM round for ``min ||D Z - X||_F^2  s.t. ||D||_F = 1``.

    Returns ``(D, G, E)``.  ``D`` is the least-squares iterate, ``G`` its
    projection onto the unit Frobenius sphere (the dictionary to use for
    coding), and ``E`` the scaled dual, updated as ``E + D - G``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = Z @ Z.T
    a[np.diag_indices_from(a)] += sigma
    b = X @ Z.T + sigma * (G - E)
    # D a = b with a symmetric positive definite
    D = sla.cho_solve(sla.cho_factor(a, lower=True), b.T).T
    G_new = project_unit_frobenius(D + E)
    E_new = E + D - G_new
    return D, G_new, E_new


def dict_synth_term(D, Z, geom):
    """Spatial-domain ``sum_j P_j^H D z_j``."""
    return aggregate_patches(np.asarray(D) @ Z, geom)


def random_dictionary(n_rows, n_atoms=None, seed=0):
    """Gaussian dictionary scaled to unit Frobenius norm."""
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n_rows, n_atoms or n_rows))
    return D / np.linalg.norm(D)


def save_patch_dictionary(D, geom, path):
    """Dictionary as a ``rows x cols x 1`` container plus a JSON sidecar."""
    path = Path(path)
    tensor.write_container(np.asarray(D), path,
                           metadata={"geometry": geom.to_dict()})
    path.with_suffix(".json").write_text(
        json.dumps({"kind": "patch", "geometry": geom.to_dict()},
                   indent=2, sort_keys=True))


def load_patch_dictionary(path):
    path = Path(path)
    D = tensor.read_container(path)[0]
    side = json.loads(path.with_suffix(".json").read_text())
    return D, PatchGeometry(**side["geometry"])
