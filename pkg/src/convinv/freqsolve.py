"""
Frequency-domain linear algebra for the ADMM image updates.

In the 2D Fourier basis the normal matrix ``c I + beta H^H H`` becomes an
S x S grid of diagonal blocks.  Each block is stored as an N x N array of
its diagonal, so a FreqBlockMatrix is a ``(S, S, N, N)`` complex array and
block products reduce to elementwise arithmetic.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ContractError, DimensionError, SingularBlockError

PIVOT_TOL = 1e-14


@dataclass(frozen=True)
class FreqBlockMatrix:
    """S x S grid of diagonal blocks.

    ``c`` and ``beta`` record the parameters a Psi (or its inverse) was
    assembled with, so the image updates can refuse a stale operator.
    """
    blocks: np.ndarray
    c: float = None
    beta: float = None
    inverse: bool = False

    @property
    def S(self):
        return self.blocks.shape[0]

    @property
    def N(self):
        return self.blocks.shape[-1]

    def apply(self, v):
        """Multiply a ``(S, N, N)`` spectrum stack by this block matrix."""
        if v.shape != (self.S, self.N, self.N):
            raise DimensionError("operand has shape %s, expected %s"
                                 % (v.shape, (self.S, self.N, self.N)))
        return np.einsum("ijab,jab->iab", self.blocks, v)

    def matmul(self, other):
        return FreqBlockMatrix(_bmul(self.blocks, other.blocks))

    def is_hermitian(self, tol=1e-12):
        diff = self.blocks - np.conj(np.swapaxes(self.blocks, 0, 1))
        return np.abs(diff).max() <= tol * max(np.abs(self.blocks).max(), 1)


def _bmul(a, b):
    return np.einsum("ijab,jkab->ikab", a, b)


def assemble_psi(bank, beta, c):
    """Psi = c I + beta Lambda^H Lambda, as a FreqBlockMatrix."""
    if not beta >= 0:
        raise ValueError("beta must be nonnegative")
    if not c > 0:
        raise ValueError("c must be positive")
    lam = bank.spectra
    blocks = beta * np.einsum("kiab,kjab->ijab", lam.conj(), lam)
    idx = np.arange(bank.S)
    blocks[idx, idx] += c
    return FreqBlockMatrix(blocks, c=float(c), beta=float(beta))


def _invert_blocks(p):
    s = p.shape[0]
    if s == 1:
        if np.abs(p).min() < PIVOT_TOL:
            raise SingularBlockError("pivot below %.0e" % PIVOT_TOL)
        return 1.0 / p
    h = (s + 1) // 2
    p11, p12 = p[:h, :h], p[:h, h:]
    p21, p22 = p[h:, :h], p[h:, h:]
    inv11 = _invert_blocks(p11)
    left = _bmul(inv11, p12)            # Psi11^-1 Psi12
    right = _bmul(p21, inv11)           # Psi21 Psi11^-1
    b = -_invert_blocks(p22 - _bmul(p21, left))
    out = np.empty_like(p)
    out[:h, :h] = inv11 - _bmul(_bmul(left, b), right)
    out[:h, h:] = _bmul(left, b)
    out[h:, :h] = _bmul(b, right)
    out[h:, h:] = -b
    return out


def invert_psi(psi, method="recursive"):
    """Inverse of a FreqBlockMatrix.

    ``method='recursive'`` partitions into 2 x 2 block form (sizes
    ceil(S/2) and floor(S/2)) and inverts through the Schur complement,
    recursing on both diagonal pieces.  ``method='dense'`` solves an
    S x S system per frequency bin instead.
    """
    if method == "recursive":
        inv = _invert_blocks(psi.blocks)
    elif method == "dense":
        inv = invert_dense(psi.blocks)
    else:
        raise ValueError("unknown inversion method %r" % (method,))
    return FreqBlockMatrix(inv, c=psi.c, beta=psi.beta, inverse=True)


def invert_dense(blocks):
    """Per-frequency dense inverse of a ``(S, S, N, N)`` block array."""
    mats = np.moveaxis(blocks, (0, 1), (-2, -1))
    return np.moveaxis(np.linalg.inv(mats), (-2, -1), (0, 1))


def precompute_rhs(bank, y, beta):
    """beta Lambda^H F y, the constant part of both image updates."""
    y = tensor.as_stack(y, "y")
    if y.shape != (bank.K, bank.N, bank.N):
        raise DimensionError("measurement shape %s does not match bank "
                             "(K=%d, N=%d)" % (y.shape, bank.K, bank.N))
    return beta * np.einsum("ksab,kab->sab", bank.spectra.conj(),
                            tensor.fft2(y))


def _check_inverse(psi_inv, c, name):
    if not psi_inv.inverse:
        raise ContractError("expected an inverted Psi")
    if psi_inv.c is not None and not np.isclose(psi_inv.c, c, rtol=1e-12,
                                                atol=0):
        raise ContractError("Psi was assembled with c=%g but %s=%g"
                            % (psi_inv.c, name, c))


def image_update_analysis(psi_inv, rhs, transform, t_minus_u, rho):
    """x = F^H (rho I + beta L^H L)^-1 (rhs + rho F T^H (t - u))."""
    _check_inverse(psi_inv, rho, "rho")
    prior = transform.adjoint(t_minus_u)
    if prior.shape != rhs.shape:
        raise DimensionError("prior term shape %s vs rhs %s"
                             % (prior.shape, rhs.shape))
    xf = psi_inv.apply(rhs + rho * tensor.fft2(prior))
    return tensor.real_part(tensor.ifft2(xf))


def image_update_synthesis(psi_inv, rhs, dict_synth, t_scale):
    """x = F^H (t I + beta L^H L)^-1 (rhs + F P^H D z).

    ``dict_synth`` is the spatial-domain ``P^H D z`` produced by the
    dictionary module.
    """
    _check_inverse(psi_inv, t_scale, "t_scale")
    dict_synth = np.asarray(dict_synth, dtype=np.float64)
    if dict_synth.shape != rhs.shape:
        raise DimensionError("synthesis term shape %s vs rhs %s"
                             % (dict_synth.shape, rhs.shape))
    xf = psi_inv.apply(rhs + tensor.fft2(dict_synth))
    return tensor.real_part(tensor.ifft2(xf))
