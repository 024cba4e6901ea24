"""The eleven canonical operators.

Fields are plain numpy arrays whose first two axes are spatial (rows, columns);
any further axes index planes (depth, wavelength, time). Each primitive knows its
forward map, its adjoint (for nonlinear kinds: the adjoint of the Jacobian at a
linearization point) and a closed-form Lipschitz bound.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from ..errors import (
    DomainError,
    MissingParam,
    NotLinearizable,
    ShapeMismatch,
    TierUnsupported,
    UnknownFamily,
)

KINDS = ("P", "M", "Pi", "F", "C", "Sigma", "D", "S", "W", "R", "Lambda")
NONLINEAR_KINDS = ("D", "R", "Lambda")
SYMBOL = {"P": "P", "M": "M", "Pi": "Π", "F": "F", "C": "C", "Sigma": "Σ", "D": "D",
          "S": "S", "W": "W", "R": "R", "Lambda": "Λ"}
LAMBDA_FAMILIES = ("exponential", "logarithmic", "phase_wrap", "polynomial", "saturation")


def _require(params, key, kind):
    if key not in params:
        raise MissingParam(f"{kind} requires parameter {key!r}")
    return params[key]


def _as_float(params, key, default):
    v = params.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise MissingParam(f"parameter {key!r} must be numeric, got {v!r}")
    return float(v)


def _spatial(shape, kind):
    if len(shape) < 2:
        raise ShapeMismatch(f"{kind} needs at least 2 spatial axes, got shape {tuple(shape)}")
    return shape[0], shape[1]


def _bcast2(arr2d, ndim):
    return arr2d.reshape(arr2d.shape + (1,) * (ndim - 2))


def fourier_shift(img, shift, axis):
    """Circular shift by a possibly fractional amount, linear interpolation between rolls."""
    f = math.floor(shift)
    a = shift - f
    out = np.roll(img, f, axis=axis)
    if a:
        out = (1 - a) * out + a * np.roll(img, f + 1, axis=axis)
    return out


class Primitive:
    """Base class; concrete kinds override the hooks below."""

    kind = "?"
    max_tier = 2

    def __init__(self, params=None, tier=1, variant=None, in_shape=None):
        self.params = dict(params or {})
        if not isinstance(tier, (int, np.integer)) or not 0 <= tier <= self.max_tier:
            raise TierUnsupported(f"{self.kind} supports tiers 0..{self.max_tier}, got {tier!r}")
        self.tier = int(tier)
        self.variant = variant
        self.in_shape = tuple(in_shape) if in_shape is not None else None
        self.adjoint_scale = 1.0  # test hook used by the compiler unit suite
        self._cache = {}
        self._validate()

    # hooks -----------------------------------------------------------
    def _validate(self):
        pass

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def _forward(self, x):
        raise NotImplementedError

    def _adjoint(self, y, x0):
        raise NotImplementedError

    def _lipschitz(self):
        return 1.0

    # common ----------------------------------------------------------
    @property
    def linearity(self):
        return "nonlinear" if self.kind in NONLINEAR_KINDS else "linear"

    @property
    def is_linear(self):
        """True when the map is linear in x (adjoint needs no linearization point)."""
        return True

    @property
    def symbol(self):
        s = SYMBOL[self.kind]
        if self.variant == "z" and self.kind == "C":
            return "Φ_z"
        if self.variant in ("lambda", "t") and self.kind == "W":
            return "W_λ" if self.variant == "lambda" else "W_t"
        return s

    @property
    def lipschitz_L(self):
        return float(self._lipschitz())

    @property
    def psf_stack(self):
        return None

    def bind(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape(self.in_shape)
        return self

    def forward(self, x):
        x = np.asarray(x)
        self.out_shape(x.shape)
        return self._forward(x)

    def adjoint(self, y, x0=None):
        y = np.asarray(y)
        if not self.is_linear and x0 is None:
            raise NotLinearizable(f"{self.kind} adjoint needs a linearization point")
        if self.in_shape is not None and tuple(y.shape) != self.out_shape(self.in_shape):
            raise ShapeMismatch(f"{self.kind} adjoint expected {self.out_shape(self.in_shape)}, got {y.shape}")
        out = self._adjoint(y, None if x0 is None else np.asarray(x0))
        if self.adjoint_scale != 1.0:
            out = out * self.adjoint_scale
        return out

    def jvp(self, x0, v):
        """Jacobian-vector product; equals forward(v) for linear kinds."""
        return self.forward(v)

    def free_params(self):
        return []

    def family(self):
        return None

    def param_bounds(self):
        return {}

    def __repr__(self):
        return f"{type(self).__name__}(params={self.params}, tier={self.tier})"


# --------------------------------------------------------------------------
# M: modulation

class Modulate(Primitive):
    kind = "M"

    def _validate(self):
        mask = self.params.get("mask", "random")
        if isinstance(mask, str) and mask not in ("ones", "random", "sinusoid", "coil"):
            raise MissingParam(f"unknown mask pattern {mask!r}")

    def mask(self, shape):
        key = tuple(shape)
        if key in self._cache:
            return self._cache[key]
        p = self.params
        mask = p.get("mask", "random")
        per_plane = bool(p.get("per_plane", False)) or p.get("n_patterns") is not None
        h, w = _spatial(shape, "M") if len(shape) >= 2 else (shape[0], 1)
        base_shape = tuple(shape) if per_plane else (h, w)
        amp = _as_float(p, "amplitude", 1.0)
        rng = np.random.default_rng(int(p.get("seed", 0)))
        if isinstance(mask, np.ndarray) or isinstance(mask, list):
            arr = np.asarray(mask)
            if arr.size == int(np.prod(shape)):
                m = arr.reshape(shape)
                per_plane = True
            elif arr.size == h * w:
                m = arr.reshape(h, w)
            else:
                m = np.resize(arr, base_shape)
        elif mask == "ones":
            m = np.ones(base_shape)
        elif mask == "random":
            m = (rng.random(base_shape) < _as_float(p, "density", 0.5)).astype(float)
        elif mask == "sinusoid":
            period = _as_float(p, "period", 4.0)
            phase = _as_float(p, "phase", 0.0)
            jj = np.arange(w)[None, :]
            m = 0.5 + 0.5 * np.cos(2 * np.pi * jj / period + phase) * np.ones((h, 1))
            if per_plane:
                m = np.broadcast_to(_bcast2(m, len(shape)), shape).copy()
        else:  # coil sensitivity: smooth complex map
            yy, xx = np.mgrid[0:h, 0:w]
            cy, cx = 0.3 * h, 0.3 * w
            mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (0.6 * max(h, w)) ** 2))
            m = mag * np.exp(1j * 2 * np.pi * (yy / h + 0.5 * xx / w) * 0.25)
            m = m / np.abs(m).max()
        m = amp * m
        s = _as_float(p, "mask_shift", 0.0)
        if s:
            if self.tier == 0:
                s = float(round(s))
            m = fourier_shift(m, s, axis=1 if m.ndim >= 2 else 0)
        if m.ndim == 2 and len(shape) > 2 and not per_plane:
            m = _bcast2(m, len(shape))
        self._cache[key] = m
        return m

    @property
    def n_patterns(self):
        k = self.params.get("n_patterns")
        return None if k is None else int(k)

    def out_shape(self, in_shape):
        if self.n_patterns is None:
            return tuple(in_shape)
        _spatial(in_shape, "M")
        return tuple(in_shape) + (self.n_patterns,)

    def _forward(self, x):
        if self.n_patterns is not None:
            # a stack of K illumination patterns, one output plane per pattern
            xs = x[..., None]
            return self.mask(self.out_shape(x.shape)) * xs
        return self.mask(x.shape) * x

    def _adjoint(self, y, x0):
        m = self.mask(y.shape)
        out = np.conj(m) * y if np.iscomplexobj(m) else m * y
        if self.n_patterns is not None:
            return out.sum(axis=-1)
        return out

    def _lipschitz(self):
        mask = self.params.get("mask", "random")
        if self.n_patterns is not None:
            return abs(_as_float(self.params, "amplitude", 1.0)) * math.sqrt(self.n_patterns)
        amp = abs(_as_float(self.params, "amplitude", 1.0))
        if isinstance(mask, (list, np.ndarray)):
            return amp * float(np.abs(np.asarray(mask)).max())
        return amp


# --------------------------------------------------------------------------
# F: unitary DFT

class Fourier(Primitive):
    kind = "F"

    def _forward(self, x):
        _spatial(x.shape, "F")
        return np.fft.fft2(x, axes=(0, 1), norm="ortho")

    def _adjoint(self, y, x0):
        return np.fft.ifft2(y, axes=(0, 1), norm="ortho")


# --------------------------------------------------------------------------
# Π: parallel-beam projection by rotate-and-sum

@lru_cache(maxsize=32)
def _radon_matrix(n, angles_deg, nearest):
    c = (n - 1) / 2.0
    ii, jj = np.mgrid[0:n, 0:n]
    u = (ii - c).ravel()
    v = (jj - c).ravel()
    blocks = []
    for th in np.deg2rad(np.asarray(angles_deg)):
        ct, st = math.cos(th), math.sin(th)
        si = c + ct * u - st * v
        sj = c + st * u + ct * v
        out_col = jj.ravel()
        rows, cols, vals = [], [], []
        if nearest:
            ri, rj = np.rint(si).astype(int), np.rint(sj).astype(int)
            ok = (ri >= 0) & (ri < n) & (rj >= 0) & (rj < n)
            rows.append(out_col[ok])
            cols.append((ri * n + rj)[ok])
            vals.append(np.ones(ok.sum()))
        else:
            i0 = np.floor(si).astype(int)
            j0 = np.floor(sj).astype(int)
            fi, fj = si - i0, sj - j0
            for di, dj, wgt in ((0, 0, (1 - fi) * (1 - fj)), (1, 0, fi * (1 - fj)),
                                (0, 1, (1 - fi) * fj), (1, 1, fi * fj)):
                a, b = i0 + di, j0 + dj
                ok = (a >= 0) & (a < n) & (b >= 0) & (b < n) & (wgt > 0)
                rows.append(out_col[ok])
                cols.append((a * n + b)[ok])
                vals.append(wgt[ok])
        blk = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n * n)).tocsr()
        blk.sum_duplicates()
        blocks.append(blk)
    mat = sp.vstack(blocks).tocsr()
    return mat, mat.T.tocsr()


class Project(Primitive):
    kind = "Pi"

    def _validate(self):
        n = _require(self.params, "n_angles", "Pi")
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise MissingParam(f"n_angles must be a positive integer, got {n!r}")

    def angles(self):
        p = self.params
        n = int(p["n_angles"])
        rng = _as_float(p, "angle_range", 180.0)
        off = _as_float(p, "angle_offset", 0.0)
        return tuple(float(off + k * rng / n) for k in range(n))

    def out_shape(self, in_shape):
        h, w = _spatial(in_shape, "Pi")
        if h != w:
            raise ShapeMismatch(f"Π needs a square image, got {h}x{w}")
        return (int(self.params["n_angles"]), w) + tuple(in_shape[2:])

    def _mats(self, n):
        return _radon_matrix(n, self.angles(), self.tier == 0)

    def _forward(self, x):
        n = x.shape[0]
        a, _ = self._mats(n)
        planes = x.reshape(n * n, -1)
        y = a @ planes if not np.iscomplexobj(planes) else (a @ planes.real + 1j * (a @ planes.imag))
        return y.reshape((len(self.angles()), n) + x.shape[2:])

    def _adjoint(self, y, x0):
        n = y.shape[1]
        _, at = self._mats(n)
        planes = y.reshape(y.shape[0] * n, -1)
        x = at @ planes if not np.iscomplexobj(planes) else (at @ planes.real + 1j * (at @ planes.imag))
        return x.reshape((n, n) + y.shape[2:])

    def _lipschitz(self):
        # ||Π|| <= sqrt(n_angles * n); angle sensitivity of bilinear rotation adds r_max * 2√2 per radian
        n_ang = int(self.params["n_angles"])
        n = self.in_shape[0] if self.in_shape else 1
        opn = math.sqrt(n_ang * n)
        per_deg = math.radians(1.0) * (n / math.sqrt(2)) * 2 * math.sqrt(2)
        return opn * max(1.0, per_deg)


# --------------------------------------------------------------------------
# C: circular convolution (optionally one PSF per depth plane)

class Convolve(Primitive):
    kind = "C"

    def _validate(self):
        psf = self.params.get("psf", "gaussian")
        if isinstance(psf, str):
            name = psf.replace(" ", "")
            if name.endswith("(z)"):
                enc = name[:-3]
                if enc not in ("diffuser", "multilens", "metasurface"):
                    raise MissingParam(f"unknown depth encoder {enc!r}")
                self.variant = "z"
            elif name not in ("gaussian", "delta", "random", "caustic"):
                raise MissingParam(f"unknown psf {psf!r}")

    @property
    def depth_axis(self):
        return int(self.params.get("axis", 2))

    def _psfs(self, shape):
        key = tuple(shape)
        if key in self._cache:
            return self._cache[key]
        from .psf import generate_depth_psfs, single_psf
        h, w = _spatial(shape, "C")
        psf = self.params.get("psf", "gaussian")
        if isinstance(psf, (np.ndarray, list)):
            arr = np.asarray(psf, dtype=float)
            stack = arr[None] if arr.ndim == 2 else arr
        elif self.variant == "z":
            ax = self.depth_axis
            if ax >= len(shape):
                raise ShapeMismatch(f"depth axis {ax} missing from shape {tuple(shape)}")
            enc = psf.replace(" ", "")[:-3]
            extra = {k: v for k, v in self.params.items()
                     if k not in ("psf", "axis", "seed") and not isinstance(v, (str, list))}
            stack = generate_depth_psfs(enc, shape[ax], extra, int(self.params.get("seed", 0)),
                                        size=(h, w))
        else:
            stack = single_psf(psf, (h, w), self.params)[None]
        if stack.shape[1:] != (h, w):
            raise ShapeMismatch(f"PSF shape {stack.shape[1:]} does not match field {(h, w)}")
        otf = np.fft.fft2(np.fft.ifftshift(stack, axes=(1, 2)), axes=(1, 2))
        self._cache[key] = (stack, otf)
        return stack, otf

    @property
    def psf_stack(self):
        if self.in_shape is None:
            return None
        return self._psfs(self.in_shape)[0]

    def _otf_b(self, shape, conj=False):
        _, otf = self._psfs(shape)
        if conj:
            otf = np.conj(otf)
        nd = len(shape)
        if otf.shape[0] == 1:
            return otf[0].reshape(otf.shape[1:] + (1,) * (nd - 2))
        ax = self.depth_axis
        if shape[ax] != otf.shape[0]:
            raise ShapeMismatch(f"{otf.shape[0]} PSFs for {shape[ax]} planes")
        b = np.moveaxis(otf, 0, -1)  # (h, w, nz)
        tgt = [1] * nd
        tgt[0], tgt[1], tgt[ax] = shape[0], shape[1], shape[ax]
        return b.reshape(tgt)

    def _apply(self, x, conj):
        H = self._otf_b(x.shape, conj)
        out = np.fft.ifft2(np.fft.fft2(x, axes=(0, 1)) * H, axes=(0, 1))
        if not np.iscomplexobj(x) and self._real_psf(x.shape):
            return out.real
        return out

    def _real_psf(self, shape):
        return not np.iscomplexobj(self._psfs(shape)[0])

    def _forward(self, x):
        return self._apply(x, conj=False)

    def _adjoint(self, y, x0):
        return self._apply(y, conj=True)

    def _lipschitz(self):
        psf = self.params.get("psf", "gaussian")
        if isinstance(psf, (np.ndarray, list)):
            return float(np.abs(np.asarray(psf)).sum(axis=(-2, -1)).max())
        return 1.0  # unit-sum nonnegative PSFs: max |OTF| = OTF(0) = 1


# --------------------------------------------------------------------------
# P: free-space propagation

class Propagate(Primitive):
    kind = "P"

    def _tf(self, shape):
        key = tuple(shape[:2])
        if key in self._cache:
            return self._cache[key]
        h, w = _spatial(shape, "P")
        d = _as_float(self.params, "distance", 10.0)
        lam = _as_float(self.params, "wavelength", 0.5)
        pitch = _as_float(self.params, "pitch", 1.0)
        fy = np.fft.fftfreq(h, d=pitch)[:, None]
        fx = np.fft.fftfreq(w, d=pitch)[None, :]
        f2 = fx ** 2 + fy ** 2
        if self.tier == 0:  # Fresnel transfer function
            H = np.exp(2j * np.pi * d / lam) * np.exp(-1j * np.pi * lam * d * f2)
        else:
            arg = 1.0 / lam ** 2 - f2
            kz = np.sqrt(np.abs(arg))
            H = np.where(arg >= 0, np.exp(2j * np.pi * d * kz), 0)
            if self.tier == 2:  # keep evanescent components, exponentially damped
                H = np.where(arg >= 0, H, np.exp(-2 * np.pi * d * kz))
        self._cache[key] = H
        return H

    def _forward(self, x):
        H = _bcast2(self._tf(x.shape), x.ndim)
        return np.fft.ifft2(np.fft.fft2(x, axes=(0, 1)) * H, axes=(0, 1))

    def _adjoint(self, y, x0):
        H = _bcast2(np.conj(self._tf(y.shape)), y.ndim)
        return np.fft.ifft2(np.fft.fft2(y, axes=(0, 1)) * H, axes=(0, 1))


# --------------------------------------------------------------------------
# W: per-bin lateral shear (dispersion / temporal streak)

class Disperse(Primitive):
    kind = "W"

    @property
    def axis(self):
        return int(self.params.get("axis", 2))

    @property
    def shift_axis(self):
        return int(self.params.get("shift_axis", 1))

    @property
    def shift(self):
        return _as_float(self.params, "shift", 1.0)

    def _bins(self, in_shape):
        if self.axis >= len(in_shape) or self.axis == self.shift_axis:
            raise ShapeMismatch(f"W bin axis {self.axis} invalid for shape {tuple(in_shape)}")
        return in_shape[self.axis]

    def extent(self, bins):
        if "extent" in self.params:
            return int(self.params["extent"])
        return int(math.ceil((bins - 1) * abs(self.shift) - 1e-9))

    def offsets(self, bins):
        s = self.shift
        o = np.arange(bins) * s
        o = o - o.min()
        if self.tier == 0:
            o = np.rint(o)
        return o

    def out_shape(self, in_shape):
        bins = self._bins(in_shape)
        out = list(in_shape)
        out[self.shift_axis] = in_shape[self.shift_axis] + self.extent(bins)
        return tuple(out)

    def _forward(self, x):
        bins = x.shape[self.axis]
        out = np.zeros(self.out_shape(x.shape), dtype=x.dtype)
        L = x.shape[self.shift_axis]
        Lo = out.shape[self.shift_axis]
        for k, o in enumerate(self.offsets(bins)):
            f = int(math.floor(o))
            a = o - f
            plane = np.take(x, [k], axis=self.axis)
            for off, wgt in ((f, 1 - a), (f + 1, a)):
                if wgt == 0 or off >= Lo:
                    continue
                n = min(L, Lo - off)
                src = _slice(plane, self.shift_axis, 0, n)
                _add_slice(out, self.axis, k, self.shift_axis, off, n, wgt * src)
        return out

    def _adjoint(self, y, x0):
        bins = y.shape[self.axis]
        L = y.shape[self.shift_axis] - self.extent(bins)
        if self.in_shape is not None:
            L = self.in_shape[self.shift_axis]
        shape = list(y.shape)
        shape[self.shift_axis] = L
        x = np.zeros(shape, dtype=y.dtype)
        Lo = y.shape[self.shift_axis]
        for k, o in enumerate(self.offsets(bins)):
            f = int(math.floor(o))
            a = o - f
            plane = np.take(y, [k], axis=self.axis)
            for off, wgt in ((f, 1 - a), (f + 1, a)):
                if wgt == 0 or off >= Lo:
                    continue
                n = min(L, Lo - off)
                src = _slice(plane, self.shift_axis, off, off + n)
                _add_slice(x, self.axis, k, self.shift_axis, 0, n, wgt * src)
        return x

    def _lipschitz(self):
        # shear of each plane has norm <= 1; d/d(shift) of plane k is bounded by 2k
        if self.in_shape is None:
            return 1.0
        bins = self._bins(self.in_shape)
        return max(1.0, 2.0 * (bins - 1))


def _slice(a, axis, start, stop):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def _add_slice(out, bin_axis, k, axis, start, n, val):
    idx = [slice(None)] * out.ndim
    idx[bin_axis] = slice(k, k + 1)
    idx[axis] = slice(start, start + n)
    out[tuple(idx)] += val


# --------------------------------------------------------------------------
# Σ: accumulation

class Accumulate(Primitive):
    kind = "Sigma"

    def axes(self, in_shape):
        ax = self.params.get("axis")
        if ax is None:
            return tuple(range(2, len(in_shape)))
        ax = (ax,) if isinstance(ax, int) else tuple(int(a) for a in ax)
        for a in ax:
            if not 0 <= a < len(in_shape):
                raise ShapeMismatch(f"Σ axis {a} out of range for shape {tuple(in_shape)}")
        return ax

    def out_shape(self, in_shape):
        ax = self.axes(in_shape)
        return tuple(d for i, d in enumerate(in_shape) if i not in ax)

    def _forward(self, x):
        ax = self.axes(x.shape)
        return x.sum(axis=ax) if ax else x.copy()

    def _adjoint(self, y, x0):
        if self.in_shape is None:
            raise ShapeMismatch("Σ adjoint needs the bound input shape")
        ax = self.axes(self.in_shape)
        out = y
        for a in sorted(ax):
            out = np.expand_dims(out, a)
        return np.broadcast_to(out, self.in_shape).copy()

    def _lipschitz(self):
        if self.in_shape is None:
            return 1.0
        k = math.prod(self.in_shape[a] for a in self.axes(self.in_shape))
        return math.sqrt(k)


# --------------------------------------------------------------------------
# S: binary sampling

class Sample(Primitive):
    kind = "S"

    def keep(self, shape):
        key = tuple(shape[:2])
        if key in self._cache:
            return self._cache[key]
        p = self.params
        h, w = (shape[0], shape[1]) if len(shape) >= 2 else (shape[0], 1)
        if "acceleration" in p:
            frac = 1.0 / _as_float(p, "acceleration", 1.0)
        else:
            frac = _as_float(p, "fraction", 0.5)
        rng = np.random.default_rng(int(p.get("seed", 0)))
        pattern = p.get("pattern", "random")
        if pattern == "lines":
            center = _as_float(p, "center", 0.08)
            n_keep = max(1, int(round(frac * h)))
            rows = set()
            nc = max(1, int(round(center * h)))
            for r in range(-(nc // 2), nc - nc // 2):
                rows.add(r % h)  # k-space center sits at index 0 for an unshifted DFT
            rest = [r for r in rng.permutation(h) if r not in rows]
            for r in rest:
                if len(rows) >= n_keep:
                    break
                rows.add(int(r))
            m = np.zeros((h, w))
            m[sorted(rows), :] = 1.0
        elif pattern == "rows":
            m = np.zeros((h, w))
            m[: max(1, int(round(frac * h))), :] = 1.0
        else:
            m = (rng.random((h, w)) < frac).astype(float)
        self._cache[key] = m
        return m

    def keep_fraction(self, shape):
        return float(self.keep(shape).mean())

    def _mask(self, shape):
        m = self.keep(shape)
        return _bcast2(m, len(shape)) if len(shape) >= 2 else m[:, 0]

    def _forward(self, x):
        return self._mask(x.shape) * x

    def _adjoint(self, y, x0):
        return self._mask(y.shape) * y


# --------------------------------------------------------------------------
# D: detection response

class Detect(Primitive):
    kind = "D"

    def _validate(self):
        mode = self.params.get("mode", "linear")
        if mode not in ("linear", "intensity"):
            raise MissingParam(f"D mode must be linear or intensity, got {mode!r}")

    @property
    def intensity(self):
        return self.params.get("mode", "linear") == "intensity"

    @property
    def is_linear(self):
        return not self.intensity

    @property
    def gain(self):
        return _as_float(self.params, "gain", 1.0)

    def _forward(self, x):
        if self.intensity:
            return self.gain * (x.real ** 2 + x.imag ** 2 if np.iscomplexobj(x) else x ** 2)
        return self.gain * x

    def _adjoint(self, y, x0):
        if self.intensity:
            return 2 * self.gain * x0 * y
        return self.gain * y

    def jvp(self, x0, v):
        if self.intensity:
            return 2 * self.gain * np.real(np.conj(x0) * v)
        return self.gain * v

    def free_params(self):
        return ["gain"]

    def family(self):
        return "polynomial"

    def param_bounds(self):
        return {"gain": (0.0, _as_float(self.params, "gain_max", 1e6))}

    def _lipschitz(self):
        g = abs(self.gain)
        if self.intensity:
            return 2 * g * _as_float(self.params, "input_max", 1.0)
        return g


# --------------------------------------------------------------------------
# R: scattering (Gaussian smoothing; tier 3 adds a quadratic term)

class Scatter(Primitive):
    kind = "R"
    max_tier = 3

    @property
    def is_linear(self):
        return self.tier < 3

    @property
    def beta(self):
        return _as_float(self.params, "beta", 0.08) if self.tier == 3 else 0.0

    def _smooth(self, x):
        s = _as_float(self.params, "length", 1.0)
        if s <= 0:
            return x.copy()
        sig = (s, s) + (0,) * (x.ndim - 2)
        if np.iscomplexobj(x):
            return (ndimage.gaussian_filter(x.real, sig, mode="wrap")
                    + 1j * ndimage.gaussian_filter(x.imag, sig, mode="wrap"))
        return ndimage.gaussian_filter(x, sig, mode="wrap")

    def out_shape(self, in_shape):
        _spatial(in_shape, "R")
        return tuple(in_shape)

    def _forward(self, x):
        g = self._smooth(x)
        if self.tier == 3:
            return g + self.beta * g * g
        return g

    def jvp(self, x0, v):
        gv = self._smooth(v)
        if self.tier == 3:
            return gv + 2 * self.beta * self._smooth(x0) * gv
        return gv

    def _adjoint(self, y, x0):
        # the wrapped Gaussian filter is symmetric, hence self-adjoint
        if self.tier == 3:
            return self._smooth(y + 2 * self.beta * self._smooth(x0) * y)
        return self._smooth(y)

    def free_params(self):
        return ["length"] + (["beta"] if self.tier == 3 else [])

    def family(self):
        return "polynomial"

    def param_bounds(self):
        b = {"length": (0.0, _as_float(self.params, "length_max", 100.0))}
        if self.tier == 3:
            b["beta"] = (0.0, _as_float(self.params, "beta_max", 1.0))
        return b

    def _lipschitz(self):
        return 1.0 + 2 * self.beta * _as_float(self.params, "input_max", 1.0)


# --------------------------------------------------------------------------
# Λ: pointwise nonlinearity from one of five families

_FAMILY_DEFAULTS = {
    "exponential": {"mu": 1.0},
    "logarithmic": {"a": 1.0},
    "phase_wrap": {"k": 1.0},
    "polynomial": {"c1": 1.0},
    "saturation": {"s": 1.0},
}
_FAMILY_BOUNDS = {
    "mu": (0.0, 10.0), "a": (0.0, 100.0), "k": (0.0, 100.0), "s": (1e-6, 1e6),
}


class Nonlinear(Primitive):
    kind = "Lambda"

    def _validate(self):
        fam = _require(self.params, "family", "Lambda")
        if fam not in LAMBDA_FAMILIES:
            raise UnknownFamily(f"Λ family {fam!r} not in {LAMBDA_FAMILIES}")

    @property
    def is_linear(self):
        return False

    def family(self):
        return self.params["family"]

    def coeffs(self):
        fam = self.family()
        if fam == "polynomial":
            keys = sorted((k for k in self.params if _is_coef(k)), key=lambda k: int(k[1:]))
            c = {k: _as_float(self.params, k, 0.0) for k in keys}
            return c or dict(_FAMILY_DEFAULTS["polynomial"])
        (name, dflt), = _FAMILY_DEFAULTS[fam].items()
        return {name: _as_float(self.params, name, dflt)}

    def free_params(self):
        fam = self.family()
        if fam == "polynomial":
            return [k for k in self.params if _is_coef(k)] or ["c1"]
        names = [n for n in _FAMILY_DEFAULTS[fam]]
        extra = [k for k in self.params if _is_coef(k)]
        return names + extra

    def param_bounds(self):
        out = {}
        for k in self.coeffs():
            lo, hi = _FAMILY_BOUNDS.get(k, (-10.0, 10.0))
            out[k] = (_as_float(self.params, f"{k}_min", lo), _as_float(self.params, f"{k}_max", hi))
        return out

    def t_range(self):
        return _as_float(self.params, "t_min", 0.0), _as_float(self.params, "t_max", 1.0)

    def _f(self, t):
        fam, c = self.family(), self.coeffs()
        if fam == "exponential":
            return np.exp(-c["mu"] * t)
        if fam == "logarithmic":
            arg = 1 + c["a"] * t
            if np.any(np.real(arg) <= 0):
                raise DomainError("logarithm of a nonpositive value")
            return np.log(arg)
        if fam == "phase_wrap":
            return np.exp(1j * c["k"] * t)
        if fam == "saturation":
            den = 1 + t / c["s"]
            if np.any(np.real(den) <= 0):
                raise DomainError("saturation response undefined below -s")
            return t / den
        return sum(v * t ** int(k[1:]) for k, v in c.items())

    def _df(self, t):
        fam, c = self.family(), self.coeffs()
        if fam == "exponential":
            return -c["mu"] * np.exp(-c["mu"] * t)
        if fam == "logarithmic":
            return c["a"] / (1 + c["a"] * t)
        if fam == "phase_wrap":
            return 1j * c["k"] * np.exp(1j * c["k"] * t)
        if fam == "saturation":
            return 1.0 / (1 + t / c["s"]) ** 2
        return sum(v * int(k[1:]) * t ** (int(k[1:]) - 1) for k, v in c.items())

    def _forward(self, x):
        return self._f(x)

    def jvp(self, x0, v):
        out = self._df(x0) * v
        if not np.iscomplexobj(x0) and not np.iscomplexobj(self._df(np.zeros(1))):
            return np.real(out)
        return out

    def _adjoint(self, y, x0):
        out = np.conj(self._df(x0)) * y
        return np.real(out) if not np.iscomplexobj(x0) else out

    def _lipschitz(self):
        return lambda_lipschitz(self.family(), self.coeffs(), self.param_bounds(), self.t_range())


def _is_coef(k):
    return len(k) > 1 and k[0] == "c" and k[1:].isdigit()


def lambda_lipschitz(family, coeffs, bounds, t_range):
    """Closed-form sup over the declared ranges of max(|df/dt|, |df/dθ|)."""
    tmin, tmax = t_range
    T = max(abs(tmin), abs(tmax))
    if family == "exponential":
        lo, hi = bounds["mu"]
        # sup_t mu*exp(-mu t) on [tmin, tmax], then over mu in [lo, hi]
        if tmin <= 0:
            dt = hi * math.exp(-hi * tmin)
        else:
            mu = min(max(1.0 / tmin, lo), hi)
            dt = mu * math.exp(-mu * tmin)
        # sup t*exp(-mu t): largest at mu = lo, t = clip(1/lo)
        t_star = tmax if lo <= 0 else min(max(1.0 / lo, tmin), tmax)
        dp = abs(t_star) * math.exp(-lo * t_star)
        return max(dt, dp)
    if family == "logarithmic":
        lo, hi = bounds["a"]
        dt = hi / (1 + hi * tmin)
        dp = tmax / (1 + lo * tmax)
        return max(dt, dp)
    if family == "phase_wrap":
        lo, hi = bounds["k"]
        return max(abs(hi), abs(lo), T)
    if family == "saturation":
        lo, hi = bounds["s"]
        dt = 1.0 / (1 + tmin / hi) ** 2
        dp = tmax ** 2 / (lo + tmax) ** 2
        return max(dt, dp)
    # polynomial with coefficients bounded by their declared ranges
    dt = sum(int(k[1:]) * max(abs(b[0]), abs(b[1])) * T ** (int(k[1:]) - 1)
             for k, b in bounds.items())
    dp = max((T ** int(k[1:]) for k in bounds), default=0.0)
    return max(dt, dp)


# --------------------------------------------------------------------------

_CLASSES = {"P": Propagate, "M": Modulate, "Pi": Project, "F": Fourier, "C": Convolve,
            "Sigma": Accumulate, "D": Detect, "S": Sample, "W": Disperse, "R": Scatter,
            "Lambda": Nonlinear}
_ALIASES = {"Π": "Pi", "Σ": "Sigma", "Λ": "Lambda"}


def make_primitive(kind, params=None, tier=1, variant=None, in_shape=None) -> Primitive:
    kind = _ALIASES.get(kind, kind)
    if kind not in _CLASSES:
        raise MissingParam(f"unknown primitive kind {kind!r}")
    return _CLASSES[kind](params or {}, tier=tier, variant=variant, in_shape=in_shape)


def apply(p: Primitive, x):
    return p.forward(x)


def adjoint(p: Primitive, y, x0=None):
    return p.adjoint(y, x0)


def lipschitz_bound(p: Primitive) -> float:
    return p.lipschitz_L


def dot_test(p: Primitive, shape, seed=0, trials=3, complex_input=False):
    """The C5 statistic for a single primitive: max over trials of the relative mismatch."""
    rng = np.random.default_rng(seed)
    p.bind(shape)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(shape)
        if complex_input:
            x = x + 1j * rng.standard_normal(shape)
        x0 = rng.random(shape) + 0.1
        ax = p.jvp(x0, x) if not p.is_linear else p.forward(x)
        y = rng.standard_normal(ax.shape)
        if np.iscomplexobj(ax):
            y = y + 1j * rng.standard_normal(ax.shape)
        aty = p.adjoint(y, x0)
        lhs = np.real(np.vdot(ax, y))
        rhs = np.real(np.vdot(x, aty))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-8))
    return worst
