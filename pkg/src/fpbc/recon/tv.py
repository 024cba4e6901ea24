"""Isotropic total variation over the two spatial axes and its proximal operator."""
from __future__ import annotations

import numpy as np


def grad(x):
    """Forward differences along axes 0 and 1 (Neumann: last difference is zero)."""
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:-1] = x[1:] - x[:-1]
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    return gy, gx


def grad_adj(gy, gx):
    """Exact adjoint of ``grad`` (minus the discrete divergence)."""
    out = np.zeros_like(gy)
    out[:-1] -= gy[:-1]
    out[1:] += gy[:-1]
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    return out


def tv_norm(x):
    if np.iscomplexobj(x):
        return tv_norm(x.real) + tv_norm(x.imag)
    if x.ndim < 2:
        x = x[:, None]
    gy, gx = grad(x)
    return float(np.sum(np.sqrt(gy ** 2 + gx ** 2)))


def _fgp(b, weight, iters, lower, upper):
    """Fast gradient projection on the dual (Beck-Teboulle) for
    argmin_x 1/2 ||x - b||^2 + weight * TV(x) s.t. lower <= x <= upper."""
    def project_c(v):
        if lower is not None or upper is not None:
            return np.clip(v, lower, upper)
        return v

    # dual variable scaled by the weight (u = weight * p) so the step does not
    # blow up for tiny weights; the dual feasible set is |u| <= weight
    py = np.zeros_like(b)
    px = np.zeros_like(b)
    ry, rx = py, px
    t = 1.0
    for _ in range(iters):
        x = project_c(b - grad_adj(ry, rx))
        gy, gx = grad(x)
        qy, qx = ry + gy / 8.0, rx + gx / 8.0
        nrm = np.maximum(1.0, np.sqrt(qy ** 2 + qx ** 2) / weight)
        py_new, px_new = qy / nrm, qx / nrm
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        ry = py_new + (t - 1) / t_new * (py_new - py)
        rx = px_new + (t - 1) / t_new * (px_new - px)
        py, px, t = py_new, px_new, t_new
    return project_c(b - grad_adj(py, px))


def prox_tv(x, weight, inner_iters=20, nonneg=False):
    """Approximate prox of ``weight * TV`` (isotropic, spatial axes, per plane)."""
    x = np.asarray(x)
    if weight <= 0:
        return np.clip(x, 0, None) if nonneg and not np.iscomplexobj(x) else x.copy()
    if np.iscomplexobj(x):
        return (prox_tv(x.real, weight, inner_iters) + 1j * prox_tv(x.imag, weight, inner_iters))
    squeeze = x.ndim == 1
    b = x[:, None] if squeeze else x
    out = _fgp(b.astype(float), float(weight), int(inner_iters), 0.0 if nonneg else None, None)
    return out[:, 0] if squeeze else out
