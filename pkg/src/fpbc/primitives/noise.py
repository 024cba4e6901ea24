"""Detector noise models."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NegativeIntensity


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "gaussian"  # gaussian | poisson | poisson_gaussian | none
    sigma: float | None = None
    i0: float | None = None
    snr_db: float | None = None
    seed: int = 0

    @classmethod
    def from_spec(cls, ns, seed=0):
        return cls(kind=ns.kind, sigma=ns.sigma, i0=ns.i0, snr_db=ns.snr_db, seed=int(seed))

    def gaussian_sigma(self, y_clean=None):
        """Standard deviation in normalized intensity units."""
        if self.kind == "poisson_gaussian" and self.sigma is not None and self.i0:
            return self.sigma / self.i0  # sigma quoted in counts
        if self.sigma is not None:
            return float(self.sigma)
        if self.snr_db is not None and y_clean is not None:
            rms = float(np.sqrt(np.mean(np.abs(y_clean) ** 2)))
            return rms * 10 ** (-self.snr_db / 20)
        return 0.0


def detect(y_clean, nm: NoiseModel):
    """Add detector noise. Deterministic given ``nm.seed``."""
    y = np.asarray(y_clean)
    rng = np.random.default_rng(nm.seed)
    out = y.copy()
    if nm.kind in ("poisson", "poisson_gaussian") and nm.i0 is not None and math.isfinite(nm.i0):
        if np.iscomplexobj(y):
            raise NegativeIntensity("Poisson noise needs a real intensity")
        peak = float(np.abs(y).max()) if y.size else 0.0
        if np.any(y < -1e-12 * max(peak, 1.0)):
            raise NegativeIntensity(f"min intensity {float(y.min())!r} < 0")
        lam = np.clip(y, 0, None) * nm.i0
        out = rng.poisson(lam).astype(float) / nm.i0
    if nm.kind in ("gaussian", "poisson_gaussian"):
        s = nm.gaussian_sigma(y)
        if s > 0:
            if np.iscomplexobj(out):
                out = out + (s / math.sqrt(2)) * (rng.standard_normal(y.shape)
                                                  + 1j * rng.standard_normal(y.shape))
            else:
                out = out + s * rng.standard_normal(y.shape)
    return out
