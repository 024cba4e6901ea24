"""Synthetic phantoms. Every generator is a pure function of (dims, seed)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

# (intensity, a, b, x0, y0, phi_deg) of the modified Shepp-Logan head
_SHEPP = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
])


def shepp_logan_2d(n=64, seed=None, jitter=0.1):
    """Shepp-Logan head in [0, 1]. ``seed=None`` gives the canonical phantom;
    an integer seed perturbs every ellipse (family member)."""
    h, w = (n, n) if np.isscalar(n) else tuple(n)
    ell = _SHEPP.copy()
    if seed is not None:
        rng = np.random.default_rng(seed)
        ell[:, 0] *= 1 + jitter * rng.uniform(-1, 1, len(ell))
        ell[:, 1:3] *= 1 + jitter * rng.uniform(-1, 1, (len(ell), 2))
        ell[:, 3:5] += 0.5 * jitter * rng.uniform(-1, 1, (len(ell), 2))
        ell[:, 5] += 20 * jitter * rng.uniform(-1, 1, len(ell))
    yy, xx = np.mgrid[-1:1:1j * h, -1:1:1j * w]
    img = np.zeros((h, w))
    for a, ea, eb, x0, y0, phi in ell:
        t = np.deg2rad(phi)
        xr = (xx - x0) * np.cos(t) + (yy - y0) * np.sin(t)
        yr = -(xx - x0) * np.sin(t) + (yy - y0) * np.cos(t)
        img[(xr / ea) ** 2 + (yr / eb) ** 2 <= 1] += a
    img = np.clip(img, 0, None)
    m = img.max()
    return img / m if m > 0 else img


def _blobs(shape, rng, n_blobs):
    h, w = shape
    img = np.zeros(shape)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
        ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[inside] = rng.uniform(0.2, 1.0)
    return img


def piecewise_2d(shape=(64, 64), seed=0, n_blobs=6):
    """Piecewise-constant ellipses and rectangles on a zero background."""
    rng = np.random.default_rng(seed)
    return _blobs(tuple(shape), rng, n_blobs)


def piecewise_3d(dims=(32, 32, 4), seed=0, n_blobs=5):
    """Piecewise-constant volume: blobs whose extent varies smoothly across planes."""
    rng = np.random.default_rng(seed)
    h, w = dims[:2]
    planes = int(np.prod(dims[2:])) if len(dims) > 2 else 1
    vol = np.zeros((h, w, planes))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        r = rng.uniform(0.1, 0.3) * min(h, w)
        zc = rng.uniform(0, planes)
        zw = rng.uniform(0.5, max(1.0, planes / 2))
        val = rng.uniform(0.3, 1.0)
        for k in range(planes):
            rk = r * max(0.0, 1 - ((k - zc) / (zw + 1e-9)) ** 2) ** 0.5
            if rk > 0.5:
                vol[(yy - cy) ** 2 + (xx - cx) ** 2 <= rk ** 2, k] = val
    return vol.reshape(tuple(dims))


def spectral_cube_toy(dims=(32, 32, 8), seed=0, n_materials=4):
    """Segmented scene where each segment carries a smooth spectral signature."""
    rng = np.random.default_rng(seed)
    h, w, bands = dims[0], dims[1], int(np.prod(dims[2:]))
    labels = np.zeros((h, w), dtype=int)
    yy, xx = np.mgrid[0:h, 0:w]
    for m in range(1, n_materials + 1):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        ry, rx = rng.uniform(0.15, 0.35) * h, rng.uniform(0.15, 0.35) * w
        labels[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1] = m
    lam = np.linspace(0, 1, bands)
    cube = np.zeros((h, w, bands))
    for m in range(n_materials + 1):
        mu, sd = rng.uniform(0, 1), rng.uniform(0.2, 0.6)
        sig = 0.1 + 0.9 * np.exp(-((lam - mu) ** 2) / (2 * sd ** 2))
        sig *= 0.15 if m == 0 else rng.uniform(0.5, 1.0)
        cube[labels == m] = sig
    return cube.reshape(tuple(dims))


PHANTOMS = {
    "shepp_logan_2d": shepp_logan_2d,
    "piecewise_2d": piecewise_2d,
    "piecewise_3d": piecewise_3d,
    "spectral_cube_toy": spectral_cube_toy,
}


def make_phantom(name, dims, seed=0):
    """Named phantom resized to ``dims``; 2D generators are tiled across extra axes."""
    dims = tuple(int(d) for d in dims)
    if name not in PHANTOMS:
        raise KeyError(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}")
    if name in ("shepp_logan_2d", "piecewise_2d"):
        img = shepp_logan_2d(dims[:2], seed) if name == "shepp_logan_2d" else piecewise_2d(dims[:2], seed)
        if len(dims) > 2:
            img = np.broadcast_to(img.reshape(dims[:2] + (1,) * (len(dims) - 2)), dims).copy()
        return img if len(dims) >= 2 else img[:, 0]
    if len(dims) < 3:
        dims3 = dims[:2] + (1,)
        return PHANTOMS[name](dims3, seed).reshape(dims)
    return PHANTOMS[name](dims, seed)


def default_phantom_name(dims, value_domain="real_nonneg"):
    if len(dims) <= 2:
        return "shepp_logan_2d"
    return "spectral_cube_toy"


def phantom_family(dims, n_draws=32, seed=0, value_domain="real_nonneg", name=None):
    """``n_draws`` independent family members, stacked on a leading axis."""
    name = name or default_phantom_name(dims, value_domain)
    ss = np.random.SeedSequence(seed)
    out = []
    for child in ss.spawn(n_draws):
        s = int(child.generate_state(1)[0])
        x = make_phantom(name, dims, s)
        if value_domain == "complex":
            x = as_complex(x, s)
        out.append(x)
    return np.stack(out)


def as_complex(x, seed=0):
    """Amplitude ``x`` with a smooth phase field (thin-specimen style object)."""
    rng = np.random.default_rng(seed)
    ph = ndimage.gaussian_filter(rng.standard_normal(x.shape[:2]), 3, mode="wrap")
    ph = ph / (np.abs(ph).max() + 1e-12) * 0.5
    ph = ph.reshape(ph.shape + (1,) * (x.ndim - 2))
    return (0.5 + 0.5 * x) * np.exp(1j * ph)
