"""Deterministic algorithm choice and analytical quality prediction."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from ..specdoc import ChainExpr, NoiseSpec, parse_chain

DEFAULT_LAMBDA = {"fista_tv": 1e-3, "gap_tv": 3e-2, "admm_tv": 1e-3,
                  "richardson_lucy": 0.0, "wiener": 1e-2}


def _kinds(chain):
    if isinstance(chain, str):
        chain = parse_chain(chain)
    if isinstance(chain, ChainExpr):
        return [n.kind for n in chain.nodes]
    return list(chain)


def select_algorithm(chain, noise: NoiseSpec | None = None) -> str:
    """Rule table, first match wins:

    1. projection (Pi) present        -> fista_tv
    2. dispersion (W), or a mask followed by accumulation (compressive snapshot) -> gap_tv
    3. exactly C -> D with gaussian noise -> wiener
    4. Poisson-dominated noise         -> richardson_lucy
    5. otherwise                       -> fista_tv
    """
    kinds = _kinds(chain)
    kind = noise.kind if noise is not None else "gaussian"
    if "Pi" in kinds:
        return "fista_tv"
    if "W" in kinds or ("M" in kinds and "Sigma" in kinds):
        return "gap_tv"
    if kinds == ["C", "D"] and kind == "gaussian":
        return "wiener"
    if kind == "poisson":
        return "richardson_lucy"
    return "fista_tv"


def load_solver_gaps(path=None) -> dict:
    if path is None:
        path = resources.files("fpbc") / "data" / "solver_gaps.json"
        text = path.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


@dataclass
class QualityPrediction:
    predicted_psnr_db: float
    g1_ceiling_db: float
    g2_ceiling_db: float
    delta_psnr_db: float
    solver_gap_db: float
    algorithm: str
    flags: list = field(default_factory=list)

    def to_json(self):
        from ..compiler import _num
        return {"predicted_psnr_db": _num(self.predicted_psnr_db),
                "g1_ceiling_db": _num(self.g1_ceiling_db),
                "g2_ceiling_db": _num(self.g2_ceiling_db),
                "delta_psnr_db": _num(self.delta_psnr_db),
                "solver_gap_db": _num(self.solver_gap_db),
                "algorithm": self.algorithm, "flags": list(self.flags)}


def _gate(gates, gid):
    if isinstance(gates, dict):
        return gates.get(gid)
    return next((v for v in gates if v.gate == gid), None)


def solver_gap(algorithm, modality=None, gaps=None) -> float:
    gaps = gaps if gaps is not None else load_solver_gaps()
    by_mod = gaps.get("by_modality", {})
    if modality is not None and modality in by_mod:
        return float(by_mod[modality])
    return float(gaps["by_algorithm"].get(algorithm, gaps.get("default", 0.0)))


def predict_quality(g, noise, gates, algorithm=None, gaps=None) -> QualityPrediction:
    """min(G1 ceiling, G2 ceiling) - Delta PSNR_total - solver gap.

    ``gates`` is a list of GateVerdicts (or a dict keyed by gate id). A missing
    G3 contributes no mismatch loss. An empty carrier budget (SNR <= 0, e.g.
    no photons) clamps the prediction to 0 dB and is flagged.
    """
    flags = []
    doc = getattr(g, "doc", None)
    if algorithm is None:
        chain = doc.forward_model if doc is not None else [nd.kind for nd in g.nodes]
        algorithm = select_algorithm(chain, noise)
    g1, g2, g3 = _gate(gates, "G1"), _gate(gates, "G2"), _gate(gates, "G3")
    c1 = g1.ceiling_or_deploy_psnr_db if g1 is not None else math.inf
    c2 = g2.ceiling_or_deploy_psnr_db if g2 is not None else math.inf
    delta = float(g3.details.get("delta_psnr_total", 0.0)) if g3 is not None else 0.0
    gap = solver_gap(algorithm, doc.modality if doc is not None else None, gaps)
    base = min(c1, c2, 99.0)
    pred = base - delta - gap
    snr = g2.details.get("snr", math.inf) if g2 is not None else math.inf
    if snr <= 0 or c2 == -math.inf:
        flags.append("zero or negative carrier budget: prediction clamped to 0 dB")
        pred = min(pred, 0.0) if math.isfinite(pred) else 0.0
    if g2 is not None and g2.details.get("kappa", 1.0) > 1e3:
        flags.append("ill-conditioned operator: G2 ceiling dominated by the kappa term")
    return QualityPrediction(pred, c1, c2, delta, gap, algorithm, flags)
