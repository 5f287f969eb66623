"""Proximal maps for the auxiliary-variable updates."""
import numpy as np

CHAMBOLLE_STEP = 0.248


def soft_threshold(v, tau):
    """Elementwise ``sign(v) * max(|v| - tau, 0)``."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative, got %g" % tau)
    v = np.asarray(v, dtype=np.float64)
    # sign(0) counts as +1; the magnitude is zero there anyway
    sign = np.where(v > 0, 1.0, -1.0)
    return sign * np.maximum(np.abs(v) - tau, 0.0)


def grad(u):
    """Circular forward differences along the two spatial axes."""
    return (np.roll(u, -1, axis=-2) - u, np.roll(u, -1, axis=-1) - u)


def div(px, py):
    """Negative adjoint of :func:`grad`."""
    return (px - np.roll(px, 1, axis=-2)) + (py - np.roll(py, 1, axis=-1))


def tv_norm(u):
    """Isotropic TV summed over all slices."""
    gx, gy = grad(np.asarray(u, dtype=np.float64))
    return float(np.sum(np.sqrt(gx ** 2 + gy ** 2)))


def tv_prox(v, weight, inner_iters=30, inner_tol=1e-5, step=CHAMBOLLE_STEP):
    """Approximately minimize ``weight * TV(u) + 0.5 ||u - v||^2``.

    Chambolle's dual projection iteration, run independently on every
    2D slice of ``v``.  Stops after ``inner_iters`` sweeps or when the
    largest dual change drops below ``inner_tol``.
    """
    if weight <= 0:
        raise ValueError("TV weight must be positive")
    v = np.asarray(v, dtype=np.float64)
    px = np.zeros_like(v)
    py = np.zeros_like(v)
    for _ in range(inner_iters):
        gx, gy = grad(div(px, py) - v / weight)
        norm = 1.0 + step * np.sqrt(gx ** 2 + gy ** 2)
        nx = (px + step * gx) / norm
        ny = (py + step * gy) / norm
        delta = max(np.abs(nx - px).max(), np.abs(ny - py).max())
        px, py = nx, ny
        if delta < inner_tol:
            break
    return v - weight * div(px, py)
