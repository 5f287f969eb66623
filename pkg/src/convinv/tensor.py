"""
Stack storage conventions, unitary FFT helpers and the CIVS container.

A stack is a float64 numpy array of shape ``(S, N, N)``: slice-major,
row-major within each slice.  Complex stacks use the same layout.
All transforms use the unitary ("ortho") normalization, and every
convolution in the package is circular.
"""
import json
import struct
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import (BadMagicError, ContainerError, DimensionError,
                     NonFiniteError, TruncatedError)

MAGIC = b"CIVS"
VERSION = 1
_HEADER = struct.Struct("<4sBIII")


def as_stack(x, name="stack"):
    """Return ``x`` as a float64 ``(S, N, N)`` array.

    A single ``(N, N)`` slice is promoted to depth one.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.size == 0:
        raise DimensionError(
            "%s must have shape (S, N, N), got %s" % (name, arr.shape))
    return arr


def _check_square(a):
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(
            "expected square trailing dimensions, got %s" % (a.shape,))
    return a


def fft2(a, workers=None):
    """Unitary 2D DFT over the last two (square) axes."""
    a = _check_square(a)
    return sfft.fft2(a, norm="ortho", workers=workers)


def ifft2(a, workers=None):
    a = _check_square(a)
    return sfft.ifft2(a, norm="ortho", workers=workers)


def fft1_depth(a, workers=None):
    """Unitary 1D DFT along the slice axis (axis -3)."""
    return sfft.fft(np.asarray(a), axis=-3, norm="ortho", workers=workers)


def ifft1_depth(a, workers=None):
    return sfft.ifft(np.asarray(a), axis=-3, norm="ortho", workers=workers)


def fft3(a, workers=None):
    """Unitary 3D DFT over the last three axes of a stack."""
    a = _check_square(a)
    return sfft.fftn(a, axes=(-3, -2, -1), norm="ortho", workers=workers)


def ifft3(a, workers=None):
    a = _check_square(a)
    return sfft.ifftn(a, axes=(-3, -2, -1), norm="ortho", workers=workers)


def real_part(z, tol=1e-9):
    """Drop the imaginary part of an inverse transform after checking it."""
    re = z.real
    scale = max(np.abs(re).max(initial=0.0), 1.0)
    resid = np.abs(z.imag).max(initial=0.0)
    if resid > tol * scale:
        raise ArithmeticError(
            "imaginary residue %.3g exceeds %.1g of the real part"
            % (resid, tol))
    return np.ascontiguousarray(re)


def write_container(stack, path, metadata=None):
    """Write an array of shape ``(D, H, W)`` (or ``(H, W)``) to ``path``.

    The header stores dims as (H, W, D); the payload is little-endian
    float64 in slice-major, row-major order.  ``metadata`` is any JSON
    serializable object, or a pre-encoded ``str``/``bytes`` which is
    kept verbatim.
    """
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise DimensionError("container payload must be 2D or 3D")
    d, h, w = arr.shape
    chunks = [_HEADER.pack(MAGIC, VERSION, h, w, d),
              np.ascontiguousarray(arr, dtype="<f8").tobytes()]
    if metadata is not None:
        if isinstance(metadata, bytes):
            blob = metadata
        elif isinstance(metadata, str):
            blob = metadata.encode("utf-8")
        else:
            blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
        chunks.append(struct.pack("<I", len(blob)))
        chunks.append(blob)
    Path(path).write_bytes(b"".join(chunks))


def read_container(path, with_metadata=False):
    """Read a container written by :func:`write_container`.

    Returns the ``(D, H, W)`` array, and the metadata string (or None)
    when ``with_metadata`` is set.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError("%s: bad magic %r" % (path, raw[:4]))
    if len(raw) < _HEADER.size:
        raise TruncatedError("%s: header truncated" % path)
    _, version, h, w, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ContainerError("%s: unsupported version %d" % (path, version))
    nbytes = h * w * d * 8
    end = _HEADER.size + nbytes
    if len(raw) < end:
        raise TruncatedError("%s: payload has %d bytes, expected %d"
                             % (path, len(raw) - _HEADER.size, nbytes))
    data = np.frombuffer(raw, dtype="<f8", count=h * w * d,
                         offset=_HEADER.size).astype(np.float64)
    data = data.reshape(d, h, w)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("%s: payload contains NaN or Inf" % path)
    meta = None
    tail = raw[end:]
    if tail:
        if len(tail) < 4:
            raise TruncatedError("%s: metadata length truncated" % path)
        (mlen,) = struct.unpack_from("<I", tail)
        if len(tail) < 4 + mlen:
            raise TruncatedError("%s: metadata block truncated" % path)
        meta = tail[4:4 + mlen].decode("utf-8")
    if with_metadata:
        return data, meta
    return data
