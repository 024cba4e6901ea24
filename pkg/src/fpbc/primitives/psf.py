"""Point-spread functions: single lensless/blur kernels and depth-encoder stacks."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import BadEncoderParam

ENCODERS = ("diffuser", "multilens", "metasurface")

# Free constants (diffuser aperture, lenslet parallax, metasurface aberration
# weights) were set so the mean inter-depth correlation at 64x64 with 8 depths
# lands near 0.29 / 0.17 / 0.46 for diffuser / multilens / metasurface.
ENCODER_DEFAULTS = {
    "diffuser": {"feature_scale": 1.0, "defocus_max": 40.0, "phase_std": 6.0, "aperture": 0.54},
    "multilens": {"n_lenses": 9, "spot_sigma": 0.8, "parallax": 4.5, "spread": 0.7},
    "metasurface": {"cubic": 15.0, "trefoil": 6.0, "astigmatism": 4.0, "defocus_max": 25.0,
                    "aperture": 0.5},
}


def _grid(size):
    h, w = size
    yy = (np.arange(h) - h // 2)[:, None] / (h / 2)
    xx = (np.arange(w) - w // 2)[None, :] / (w / 2)
    return yy * np.ones((1, w)), xx * np.ones((h, 1))


def _pupil_psf(pupil_field):
    f = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(pupil_field)))
    psf = np.abs(f) ** 2
    return psf / psf.sum()


def _defocus(k, n_depths, dmax):
    return 0.0 if n_depths == 1 else dmax * k / (n_depths - 1)


def _num(params, key, kind):
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise BadEncoderParam(f"{kind}: {key} must be numeric")
    return float(v)


def generate_depth_psfs(encoder, n_depths, params=None, seed=0, size=(64, 64)):
    """Stack of ``n_depths`` unit-sum PSFs, shape (n_depths, h, w)."""
    if encoder not in ENCODERS:
        raise BadEncoderParam(f"unknown encoder {encoder!r}")
    if not isinstance(n_depths, (int, np.integer)) or n_depths < 1:
        raise BadEncoderParam("n_depths must be >= 1")
    p = dict(ENCODER_DEFAULTS[encoder])
    for k, v in (params or {}).items():
        if k in p:
            p[k] = v
    for k in p:
        p[k] = _num(p, k, encoder)
    rng = np.random.default_rng(seed)
    h, w = size
    yy, xx = _grid(size)
    rho2 = yy ** 2 + xx ** 2
    out = np.empty((n_depths, h, w))
    if encoder == "diffuser":
        if p["feature_scale"] < 0 or p["aperture"] <= 0:
            raise BadEncoderParam("diffuser needs feature_scale >= 0 and aperture > 0")
        phi = rng.standard_normal(size)
        if p["feature_scale"] > 0:
            phi = ndimage.gaussian_filter(phi, p["feature_scale"], mode="wrap")
        sd = phi.std()
        phi = phi / sd * p["phase_std"] if sd > 0 and p["phase_std"] > 0 else np.zeros(size)
        pupil = (rho2 <= p["aperture"] ** 2).astype(float)
        for k in range(n_depths):
            d = _defocus(k, n_depths, p["defocus_max"])
            out[k] = _pupil_psf(pupil * np.exp(1j * (phi + d * rho2)))
    elif encoder == "multilens":
        n_l = int(p["n_lenses"])
        if n_l < 1 or p["spot_sigma"] <= 0:
            raise BadEncoderParam("multilens needs n_lenses >= 1 and spot_sigma > 0")
        pos = rng.uniform(-p["spread"], p["spread"], size=(n_l, 2)) * np.array([h / 2, w / 2])
        ii = np.arange(h)[:, None] - h // 2
        jj = np.arange(w)[None, :] - w // 2
        for k in range(n_depths):
            z = 0.0 if n_depths == 1 else k / (n_depths - 1) - 0.5
            psf = np.zeros(size)
            for py, px in pos:
                # parallax grows with the lenslet's distance from the optical axis
                cy = py * (1 + p["parallax"] * z / (h / 2) * 4)
                cx = px * (1 + p["parallax"] * z / (w / 2) * 4)
                dy = (ii - cy + h / 2) % h - h / 2
                dx = (jj - cx + w / 2) % w - w / 2
                psf += np.exp(-(dy ** 2 + dx ** 2) / (2 * p["spot_sigma"] ** 2))
            out[k] = psf / psf.sum()
    else:
        if p["aperture"] <= 0:
            raise BadEncoderParam("metasurface needs aperture > 0")
        a = p["aperture"]
        yn, xn = yy / a, xx / a
        r2n = rho2 / a ** 2
        theta = np.arctan2(yn, xn)
        r = np.sqrt(r2n)
        base = (p["cubic"] * (xn ** 3 + yn ** 3) + p["trefoil"] * r ** 3 * np.cos(3 * theta)
                + p["astigmatism"] * r2n * np.cos(2 * theta))
        pupil = (r2n <= 1).astype(float)
        for k in range(n_depths):
            d = _defocus(k, n_depths, p["defocus_max"])
            out[k] = _pupil_psf(pupil * np.exp(1j * (base + d * r2n)))
    return out


def single_psf(name, size, params=None):
    """Unit-sum PSF for plain convolution nodes."""
    params = params or {}
    h, w = size
    if name == "delta":
        psf = np.zeros(size)
        psf[h // 2, w // 2] = 1.0
        return psf
    if name == "gaussian":
        s = float(params.get("sigma", 1.5))
        ii = (np.arange(h) - h // 2)[:, None]
        jj = (np.arange(w) - w // 2)[None, :]
        psf = np.exp(-(ii ** 2 + jj ** 2) / (2 * s ** 2))
        return psf / psf.sum()
    # "random" / "caustic": a smooth random phase screen imaged to a caustic pattern
    fs = float(params.get("feature_scale", 2.5))
    rng = np.random.default_rng(int(params.get("seed", 0)))
    phi = ndimage.gaussian_filter(rng.standard_normal(size), fs, mode="wrap")
    phi = phi / phi.std() * float(params.get("phase_std", 6.0))
    yy, xx = _grid(size)
    pupil = ((yy ** 2 + xx ** 2) <= float(params.get("aperture", 0.5)) ** 2).astype(float)
    return _pupil_psf(pupil * np.exp(1j * phi))


def psf_cross_correlation(stack):
    """Mean pairwise Pearson correlation between the PSFs of a stack."""
    flat = stack.reshape(stack.shape[0], -1)
    if flat.shape[0] < 2:
        return 1.0
    c = np.corrcoef(flat)
    iu = np.triu_indices(flat.shape[0], 1)
    return float(c[iu].mean())


def export_psf_stack(stack, path):
    """Flat binary: int64 ndim, int64 dims..., then little-endian float64 data."""
    arr = np.ascontiguousarray(stack, dtype="<f8")
    with open(path, "wb") as fh:
        np.asarray([arr.ndim, *arr.shape], dtype="<i8").tofile(fh)
        arr.tofile(fh)


def load_psf_stack(path):
    with open(path, "rb") as fh:
        ndim = int(np.fromfile(fh, dtype="<i8", count=1)[0])
        dims = tuple(int(d) for d in np.fromfile(fh, dtype="<i8", count=ndim))
        data = np.fromfile(fh, dtype="<f8")
    return data.reshape(dims)
