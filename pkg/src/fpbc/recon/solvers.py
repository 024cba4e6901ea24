"""Model-based reconstruction: FISTA-TV, GAP-TV, ADMM-TV, Richardson-Lucy and Wiener.

All TV solvers minimise

    F(x) = 1/2 ||A(x) - y||^2 + lam * sigma_max^2 * TV(x)

so ``lam`` is dimensionless (relative to the operator scale) and the proximal
weight per unit gradient step is simply ``lam``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from ..errors import AlgorithmIncompatible, Diverged, ShapeMismatch
from ..graph import OperatorGraph, _power_sigma_max
from .metrics import psnr, ssim, WIN
from .tv import prox_tv, tv_norm

ALGORITHMS = ("fista_tv", "gap_tv", "admm_tv", "richardson_lucy", "wiener")
DIVERGE_FACTOR = 10.0


@dataclass
class SolverConfig:
    algorithm: str = "fista_tv"
    lam: float = 1e-3
    max_iters: int = 200
    step: float | str = "auto"
    tv_inner_iters: int = 20
    tol: float = 0.0
    rho: float = 0.1  # ADMM penalty, relative to sigma_max^2
    noise_sigma: float | None = None  # Wiener noise level; None uses lam as the NSR
    nonneg: bool | None = None  # None: follow the object's value domain
    sigma_max: float | None = None  # precomputed operator norm
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class ReconResult:
    x_hat: np.ndarray
    iters_run: int
    objective_trace: list
    psnr_db: float | None = None
    ssim: float | None = None
    algorithm: str = ""
    step: float | None = None
    sigma_max: float | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self):
        return {"algorithm": self.algorithm, "iters_run": self.iters_run,
                "objective_trace": [float(v) for v in self.objective_trace],
                "psnr_db": self.psnr_db, "ssim": self.ssim, "step": self.step,
                "sigma_max": self.sigma_max,
                "x_shape": list(self.x_hat.shape), "x_dtype": str(self.x_hat.dtype)}


# --------------------------------------------------------------------------
# helpers

def _sigma_max(g: OperatorGraph, cfg: SolverConfig):
    if cfg.sigma_max is not None:
        return float(cfg.sigma_max)
    return _power_sigma_max(g, iters=100, rtol=1e-8, seed=cfg.seed)


def _nonneg(g: OperatorGraph, cfg: SolverConfig):
    if cfg.nonneg is not None:
        return bool(cfg.nonneg) and g.value_domain != "complex"
    return g.value_domain == "real_nonneg"


def _zeros(g: OperatorGraph):
    return np.zeros(g.object_dims, dtype=complex if g.value_domain == "complex" else float)


def _check_y(g: OperatorGraph, y):
    y = np.asarray(y)
    if tuple(y.shape) != tuple(g.measurement_dims):
        raise ShapeMismatch(f"measurement has shape {y.shape}, graph produces {g.measurement_dims}")
    return y


def _finish(x, trace, iters, x_star, algorithm, step=None, smax=None, **extras):
    p = s = None
    if x_star is not None:
        xs = np.asarray(x_star)
        p = psnr(x, xs)
        if xs.ndim >= 2 and xs.shape[0] >= WIN and xs.shape[1] >= WIN:
            s = ssim(x, xs)
    return ReconResult(x, iters, [float(v) for v in trace], p, s, algorithm, step, smax, extras)


def _guard(obj, f0, where):
    if not math.isfinite(obj) or obj > DIVERGE_FACTOR * max(f0, 1e-300):
        raise Diverged(f"{where}: objective {obj:.4g} exceeds {DIVERGE_FACTOR}x initial {f0:.4g}")


# --------------------------------------------------------------------------
# proximal gradient core (shared by FISTA and HPG)

def prox_grad_core(forward, vjp, y, x0, step, weight, tv_w, inner_iters, nonneg,
                   max_iters, tol=0.0, momentum=True, where="fista_tv"):
    """Monotone FISTA on 1/2||forward(x) - y||^2 + tv_w * TV(x).

    ``vjp(x, r)`` returns the (possibly surrogate) gradient direction for the
    residual ``r`` at ``x``; ``weight`` is the prox weight per step. With
    ``momentum=False`` this is plain proximal Landweber.
    """
    def objective(x):
        r = forward(x) - y
        return 0.5 * float(np.real(np.vdot(r, r))) + tv_w * tv_norm(x), r

    x = np.array(x0, copy=True)
    fx, _ = objective(x)
    f0 = fx
    trace = [fx]
    z_m = x.copy()
    t = 1.0
    it = 0
    for it in range(1, max_iters + 1):
        r = forward(z_m) - y
        v = z_m - step * vjp(z_m, r)
        z = prox_tv(v, weight, inner_iters, nonneg=nonneg)
        fz, _ = objective(z)
        _guard(fz, f0, where)
        x_prev = x
        if not momentum:
            x, fx = z, fz
            z_m = x
        else:
            if fz <= fx:
                x, fx = z, fz
            t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
            z_m = x + (t / t_new) * (z - x) + ((t - 1) / t_new) * (x - x_prev)
            t = t_new
        trace.append(fx)
        if tol > 0:
            dn = np.linalg.norm(x - x_prev)
            if dn <= tol * max(np.linalg.norm(x), 1e-30):
                break
    return x, trace, it


# --------------------------------------------------------------------------
# solvers

def fista_tv(g: OperatorGraph, y, cfg: SolverConfig, x_star=None, x0=None):
    y = _check_y(g, y)
    smax = _sigma_max(g, cfg)
    step = 1.0 / smax ** 2 if cfg.step == "auto" else float(cfg.step)
    tv_w = cfg.lam * smax ** 2
    x0 = _zeros(g) if x0 is None else np.asarray(x0)
    x, trace, it = prox_grad_core(g.forward, g.vjp, y, x0, step, step * tv_w, tv_w,
                                  cfg.tv_inner_iters, _nonneg(g, cfg), cfg.max_iters, cfg.tol)
    return _finish(x, trace, it, x_star, "fista_tv", step, smax)


def _aat_diagonal(g: OperatorGraph, seed=0, probes=2):
    """d = A A^T 1 if A A^T is diagonal (checked on random probes), else None."""
    if not g.is_linear:
        return None
    rng = np.random.default_rng(seed)
    ones = np.ones(g.measurement_dims)
    d = np.real(g.forward(g.adjoint(ones)))
    if not np.any(d > 0):
        return None
    for _ in range(probes):
        r = rng.standard_normal(g.measurement_dims)
        ar = g.forward(g.adjoint(r))
        if np.linalg.norm(ar - d * r) > 1e-8 * np.linalg.norm(d * r):
            return None
    return d


def _pinv_diag(d):
    """Elementwise pseudo-inverse; measurements no voxel reaches get weight 0."""
    live = d > 1e-12 * float(d.max())
    return np.where(live, 1.0 / np.where(live, d, 1.0), 0.0)


def gap_tv(g: OperatorGraph, y, cfg: SolverConfig, x_star=None, x0=None):
    """Generalized alternating projection: data projection, then TV denoising."""
    if not g.is_linear:
        raise AlgorithmIncompatible("gap_tv needs a linear forward model")
    y = _check_y(g, y)
    smax = _sigma_max(g, cfg)
    d = _aat_diagonal(g, cfg.seed)
    d_inv = _pinv_diag(d) if d is not None else None
    step = 1.0 / smax ** 2 if cfg.step == "auto" else float(cfg.step)
    tv_w = cfg.lam * smax ** 2
    nonneg = _nonneg(g, cfg)

    def objective(x):
        r = g.forward(x) - y
        return 0.5 * float(np.real(np.vdot(r, r))) + tv_w * tv_norm(x)

    x = _zeros(g) if x0 is None else np.array(x0, copy=True)
    f0 = objective(x)
    trace = [f0]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        r = y - g.forward(x)
        v = x + (g.adjoint(r * d_inv) if d is not None else step * g.adjoint(r))
        x_new = prox_tv(v, cfg.lam, cfg.tv_inner_iters, nonneg=nonneg)
        f = objective(x_new)
        _guard(f, f0, "gap_tv")
        dn = np.linalg.norm(x_new - x)
        x = x_new
        trace.append(f)
        if cfg.tol > 0 and dn <= cfg.tol * max(np.linalg.norm(x), 1e-30):
            break
    return _finish(x, trace, it, x_star, "gap_tv", step, smax,
                   projection="exact" if d is not None else "landweber")


def admm_tv(g: OperatorGraph, y, cfg: SolverConfig, x_star=None, x0=None, cg_iters=20):
    """Scaled ADMM with splitting x = z: CG x-update, TV-prox z-update, dual ascent on u."""
    if not g.is_linear:
        raise AlgorithmIncompatible("admm_tv needs a linear forward model")
    y = _check_y(g, y)
    smax = _sigma_max(g, cfg)
    rho = cfg.rho * smax ** 2
    tv_w = cfg.lam * smax ** 2
    nonneg = _nonneg(g, cfg)
    shape = tuple(g.object_dims)
    n = int(np.prod(shape))
    cplx = g.value_domain == "complex"
    dtype = complex if cplx else float

    def normal(v):
        v = v.reshape(shape)
        return (g.adjoint(g.forward(v)) + rho * v).ravel()

    op = LinearOperator((n, n), matvec=normal, dtype=dtype)
    aty = g.adjoint(y)

    def objective(x):
        r = g.forward(x) - y
        return 0.5 * float(np.real(np.vdot(r, r))) + tv_w * tv_norm(x)

    x = _zeros(g) if x0 is None else np.array(x0, copy=True, dtype=dtype)
    z = x.copy()
    u = np.zeros_like(x)
    f0 = objective(z)
    trace = [f0]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        rhs = (aty + rho * (z - u)).ravel()
        sol, _ = cg(op, rhs, x0=x.ravel(), maxiter=cg_iters, rtol=1e-10)
        x = sol.reshape(shape)
        z_prev = z
        z = prox_tv(x + u, tv_w / rho, cfg.tv_inner_iters, nonneg=nonneg)
        u = u + x - z
        f = objective(z)
        _guard(f, f0, "admm_tv")
        trace.append(f)
        if cfg.tol > 0 and np.linalg.norm(z - z_prev) <= cfg.tol * max(np.linalg.norm(z), 1e-30):
            break
    return _finish(z, trace, it, x_star, "admm_tv", None, smax)


_NON_POSITIVE_KINDS = ("F", "P", "Lambda")


def preserves_nonneg(g: OperatorGraph, seed=0) -> bool:
    """Linear, real, and A, A^T map nonnegative fields to nonnegative fields."""
    if not g.is_linear or g.value_domain == "complex":
        return False
    if any(nd.kind in _NON_POSITIVE_KINDS for nd in g.nodes):
        return False
    rng = np.random.default_rng(seed)
    ax = g.forward(rng.random(g.object_dims))
    aty = g.adjoint(rng.random(g.measurement_dims))
    if np.iscomplexobj(ax) or np.iscomplexobj(aty):
        return False
    tol = 1e-10
    return bool(ax.min() >= -tol * ax.max() and aty.min() >= -tol * aty.max())


def richardson_lucy(g: OperatorGraph, y, cfg: SolverConfig, x_star=None, x0=None, eps=1e-12):
    """x <- x * A^T(y / Ax) / A^T 1. Negative measurements are clipped to zero."""
    if not preserves_nonneg(g, cfg.seed):
        raise AlgorithmIncompatible("richardson_lucy needs a real, nonnegativity-preserving linear chain")
    y = np.clip(_check_y(g, y).real, 0, None)
    norm = g.adjoint(np.ones(g.measurement_dims))
    norm = np.where(norm > eps, norm, np.inf)
    if x0 is None:
        c = float(y.sum()) / max(float(g.forward(np.ones(g.object_dims)).sum()), eps)
        x = np.full(g.object_dims, max(c, eps))
    else:
        x = np.clip(np.asarray(x0, dtype=float), eps, None)

    def objective(x):
        ax = g.forward(x)
        return float(np.sum(ax - y * np.log(np.maximum(ax, eps))))

    trace = [objective(x)]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        ax = g.forward(x)
        x_new = x * g.adjoint(y / np.maximum(ax, eps)) / norm
        x_new = np.where(np.isfinite(x_new), x_new, 0.0)
        dn = np.linalg.norm(x_new - x)
        x = x_new
        trace.append(objective(x))
        if cfg.tol > 0 and dn <= cfg.tol * max(np.linalg.norm(x), 1e-30):
            break
    return _finish(x, trace, it, x_star, "richardson_lucy")


def _wiener_nodes(g: OperatorGraph):
    kinds = [g.node_map[nid].kind for nid in g.topo_order]
    if kinds != ["C", "D"] or not g.node_map[g.topo_order[1]].primitive.is_linear:
        raise AlgorithmIncompatible(f"wiener needs a C→D chain, got {'→'.join(kinds)}")
    return g.node_map[g.topo_order[0]].primitive, g.node_map[g.topo_order[1]].primitive


def wiener(g: OperatorGraph, y, cfg: SolverConfig, x_star=None, x0=None):
    """Frequency-domain regularized inverse conj(H) Y / (|H|^2 + NSR)."""
    conv, det = _wiener_nodes(g)
    y = _check_y(g, y)
    H = det.gain * conv._otf_b(tuple(g.object_dims))
    Y = np.fft.fft2(y, axes=(0, 1))
    if cfg.noise_sigma is not None:
        power = float(np.mean(np.abs(y) ** 2))
        nsr = cfg.noise_sigma ** 2 / max(power, 1e-30)
    else:
        nsr = cfg.lam
    X = np.conj(H) * Y / (np.abs(H) ** 2 + nsr)
    x = np.fft.ifft2(X, axes=(0, 1))
    if g.value_domain != "complex":
        x = x.real
        if g.value_domain == "real_nonneg":
            x = np.clip(x, 0, None)
    r = g.forward(x) - y
    return _finish(x, [0.5 * float(np.real(np.vdot(r, r)))], 1, x_star, "wiener", None, None,
                   nsr=float(nsr))


_SOLVERS = {"fista_tv": fista_tv, "gap_tv": gap_tv, "admm_tv": admm_tv,
            "richardson_lucy": richardson_lucy, "wiener": wiener}


def reconstruct(g: OperatorGraph, y, cfg: SolverConfig | None = None, x_star=None, x0=None):
    """Dispatch on ``cfg.algorithm``."""
    cfg = cfg or SolverConfig()
    return _SOLVERS[cfg.algorithm](g, y, cfg, x_star=x_star, x0=x0)
