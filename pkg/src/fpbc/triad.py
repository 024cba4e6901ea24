"""Gates G1-G3, the feasibility/cost stub, and the Judge certificate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compiler import CompileReport, compile_spec, _num
from .errors import MissingDetectorField, MissingSensitivity
from .graph import (
    DENSE_LIMIT,
    OperatorGraph,
    build_graph,
    dense_matrix,
    downscale_doc,
    spectral_estimate,
)
from .phantoms import phantom_family
from .specdoc import DETECTOR_DEFAULTS, SpecDocument, SystemElements, TargetSpec

PSNR_CAP = 99.0
GAMMA_REF_DB = 30.0  # gamma_min is the compression at which the oracle ceiling reaches this
N_DRAWS = 32


@dataclass
class GateVerdict:
    gate: str
    passed: bool
    ceiling_or_deploy_psnr_db: float
    margin_db: float
    action_hint: str = ""
    details: dict = field(default_factory=dict)

    def to_json(self):
        return {"gate": self.gate, "passed": self.passed,
                "ceiling_or_deploy_psnr_db": _num(self.ceiling_or_deploy_psnr_db),
                "margin_db": _num(self.margin_db), "action_hint": self.action_hint,
                "details": _jsonify(self.details)}


def _jsonify(v):
    if isinstance(v, dict):
        return {str(k): _jsonify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonify(x) for x in v]
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return str(v)


def target_psnr(target: TargetSpec) -> float:
    """Target as a PSNR. SSIM targets map through psnr = 20 + 10 log10(1 / (1 - ssim))
    (0.9 -> 30 dB, 0.95 -> 33 dB); a design heuristic, flagged in gate details."""
    if target.metric == "psnr_db":
        return float(target.threshold)
    s = min(float(target.threshold), 1 - 1e-10)
    return 20.0 + 10 * math.log10(1.0 / (1.0 - s))


def _cap(db):
    if math.isnan(db):
        return db
    return min(PSNR_CAP, db)


# --------------------------------------------------------------------------
# Gate 1

def null_space_mse(A, family):
    """(1/n) * mean over centered draws of the energy outside the row space of A.

    ``A`` is (rows, n_cols) in real-stacked coordinates; ``family`` is
    (draws, n_cols). Returns (mse_min, rank).
    """
    n_cols = A.shape[1]
    if A.shape[0] == 0:
        c = family - family.mean(0)
        return float(np.mean(np.sum(c ** 2, axis=1)) / n_cols), 0
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    smax = s[0] if s.size else 0.0
    r = int(np.sum(s > 1e-10 * smax)) if smax > 0 else 0
    c = family - family.mean(0)
    proj = c @ vt[:r].T
    resid = np.sum(c ** 2, axis=1) - np.sum(proj ** 2, axis=1)
    return float(max(np.mean(resid), 0.0) / n_cols), r


def _family_matrix(g: OperatorGraph, seed, phantom=None):
    fam = phantom_family(g.object_dims, N_DRAWS, seed, g.value_domain)
    if phantom is not None:
        ph = np.asarray(phantom)
        if ph.ndim == len(g.object_dims) + 1:
            fam = ph
    flat = fam.reshape(fam.shape[0], -1)
    if np.iscomplexobj(flat):
        flat = np.concatenate([flat.real, flat.imag], axis=1)
    peak = float(np.abs(phantom).max()) if phantom is not None else float(np.abs(fam).max())
    return flat, peak


def gate1_oracle(g: OperatorGraph, seed=0, phantom=None, A=None):
    """Dense SVD oracle; returns (ceiling_db, mse_min, rank)."""
    if g.n > DENSE_LIMIT:
        from .errors import TooLargeForDense
        raise TooLargeForDense(f"n = {g.n} > {DENSE_LIMIT}")
    A = dense_matrix(g) if A is None else A
    flat, peak = _family_matrix(g, seed, phantom)
    mse, r = null_space_mse(A, flat)
    n = g.n
    mse = mse * flat.shape[1] / n  # complex objects: per complex entry
    ceiling = PSNR_CAP if mse < 1e-12 * peak ** 2 else _cap(10 * math.log10(peak ** 2 / mse))
    return ceiling, mse, r


def gamma_ceiling(gamma, gamma_min):
    """Fast-path ceiling from a registry threshold, anchored at 30 dB when gamma = gamma_min."""
    if gamma >= 1:
        return PSNR_CAP
    slack = max(1.0 - gamma_min, 1e-6)
    return _cap(GAMMA_REF_DB + 10 * math.log10(slack / (1.0 - gamma)))


def gate1_recoverability(g: OperatorGraph, obj, target: TargetSpec, phantom=None, reg=None,
                         mode="auto", seed=0) -> GateVerdict:
    gamma = g.compression_ratio()
    tgt = target_psnr(target)
    if mode == "auto":
        mode = "oracle" if g.n <= DENSE_LIMIT else "fast"
    details = {"gamma": gamma, "n": g.n, "m": g.measurement_count(), "path": mode}
    if target.metric == "ssim":
        details["target_mapping"] = "ssim->psnr heuristic"
    if mode == "oracle":
        ceiling, mse, r = gate1_oracle(g, seed, phantom)
        details.update(mse_min=mse, rank=r)
    else:
        entry = None
        if reg is not None and g.doc is not None:
            from .registry import match_chain
            entry = reg.get(g.doc.modality)
            if entry is None:
                m = match_chain(g.doc.forward_model, reg)
                entry = m.matched_entry
        if entry is not None:
            ceiling = gamma_ceiling(gamma, entry.gamma_min)
            details.update(gamma_min=entry.gamma_min, registry_entry=entry.modality)
        elif g.doc is not None:
            pg = build_graph(downscale_doc(g.doc, DENSE_LIMIT), None, enforce_bounds=False)
            ceiling, mse, r = gate1_oracle(pg, seed)
            details.update(path="proxy_oracle", proxy_dims=list(pg.object_dims), mse_min=mse)
        else:
            ceiling = PSNR_CAP if gamma >= 1 else float("nan")
    margin = ceiling - tgt
    passed = bool(margin >= 0)
    hint = "" if passed else "increase sampling density, add views, or reduce compression"
    return GateVerdict("G1", passed, ceiling, margin, hint, details)


# --------------------------------------------------------------------------
# Gate 2

def photon_budget(se: SystemElements, noise=None):
    """N_photon from source.n_photon, else from noise.i0; flags inconsistency > 1%."""
    src = se.source if se else {}
    n_src = src.get("n_photon")
    n_src = float(n_src) if isinstance(n_src, (int, float)) and not isinstance(n_src, bool) else None
    i0 = float(noise.i0) if noise is not None and noise.i0 is not None else None
    flags = []
    if n_src is not None and i0 is not None and abs(n_src - i0) > 0.01 * max(n_src, i0):
        flags.append(f"source.n_photon={n_src:g} and noise.i0={i0:g} disagree")
    if n_src is not None:
        return n_src, flags
    if i0 is not None:
        return i0, flags
    return None, flags + ["no photon budget given"]


def measurement_snr(qe, n_photon, read_noise_e, dark_current, exposure_s):
    signal = qe * n_photon
    if signal <= 0:
        return 0.0
    var = signal + read_noise_e ** 2 + dark_current * exposure_s
    return signal / math.sqrt(var) if var > 0 else math.inf


def c_m(n, x_inf, x_norm, kappa):
    """10 log10( n ||x||_inf^2 / ||x||^2 * kappa^-2 )."""
    return 10 * math.log10(n * x_inf ** 2 / x_norm ** 2) - 20 * math.log10(kappa)


def gate2_carrier_budget(se: SystemElements, target: TargetSpec, spec_stats: dict,
                         allow_defaults=True) -> GateVerdict:
    """spec_stats: n_photon, kappa, and optionally phantom (or n, x_inf, x_norm)."""
    det, defaulted = se.detector_params()
    if defaulted and not allow_defaults:
        raise MissingDetectorField(f"detector fields missing: {defaulted}")
    n_photon = spec_stats.get("n_photon")
    if n_photon is None:  # no photon budget anywhere: treated as noiseless, flagged
        snr = math.inf
    else:
        snr = measurement_snr(det["qe"], float(n_photon), det["read_noise_e"],
                              det["dark_current"], det["exposure_s"])
    snr_db = 10 * math.log10(snr) if snr > 0 else -math.inf
    kappa = float(spec_stats.get("kappa", 1.0))
    ph = spec_stats.get("phantom")
    if ph is not None:
        ph = np.asarray(ph)
        cm = c_m(ph.size, float(np.abs(ph).max()), float(np.linalg.norm(ph)), kappa)
    elif "x_norm" in spec_stats:
        cm = c_m(spec_stats["n"], spec_stats["x_inf"], spec_stats["x_norm"], kappa)
    else:
        cm = -20 * math.log10(kappa)  # flat-image assumption: the phantom term is 0 dB
    ceiling = _cap(snr_db + cm) if snr_db > -math.inf else -math.inf
    tgt = target_psnr(target)
    margin = ceiling - tgt
    passed = bool(margin >= 0)
    hint = "" if passed else "increase source power, integration time, or detector QE"
    details = {"snr": snr, "snr_db": snr_db, "C_M": cm, "kappa": kappa, "n_photon": n_photon,
               "defaulted_detector_fields": defaulted, "low_confidence": bool(defaulted)}
    details.update({k: v for k, v in spec_stats.items() if k in ("flags", "spectral_method")})
    return GateVerdict("G2", passed, ceiling, margin, hint, details)


# --------------------------------------------------------------------------
# Gate 3

def delta_psnr_total(sensitivities, tolerances):
    terms = [(float(s) * float(t)) ** 2 for s, t in zip(sensitivities, tolerances)]
    return math.sqrt(sum(terms)), terms


def gate3_mismatch(cal, gate2: GateVerdict, target: TargetSpec, sens_source="declared",
                   estimator=None) -> GateVerdict:
    """PSNR_deploy = G2 ceiling - sqrt(sum (s_k tol_k)^2).

    ``estimator(param_name) -> s_k`` fills missing sensitivities when given.
    """
    sens, tols, names, sources = [], [], [], []
    for c in cal:
        s = c.sensitivity_db_per_unit
        src = "declared"
        if s is None:
            if estimator is None:
                raise MissingSensitivity(f"no sensitivity for {c.param_name!r}")
            s = float(estimator(c.param_name))
            src = "estimated"
        sens.append(abs(float(s)))
        tols.append(float(c.tolerance))
        names.append(c.param_name)
        sources.append(src)
    total, terms = delta_psnr_total(sens, tols)
    deploy = gate2.ceiling_or_deploy_psnr_db - total
    tgt = target_psnr(target)
    margin = deploy - tgt
    passed = bool(margin >= 0)
    dominant = names[int(np.argmax(terms))] if terms and max(terms) > 0 else None
    hint = ""
    if not passed:
        hint = (f"tighten calibration tolerance on the dominant parameter {dominant}"
                if dominant else "raise the Gate-2 ceiling")
    details = {"delta_psnr_total": total, "dominant": dominant,
               "terms": {n: math.sqrt(t) for n, t in zip(names, terms)},
               "sensitivity_source": sources if sources else sens_source}
    return GateVerdict("G3", passed, deploy, margin, hint, details)


# --------------------------------------------------------------------------
# Stage 3: feasibility and cost (static stub table)

# (low, high) realizable ranges and nominal cost for catalogue parts
RANGES = {
    ("source", "n_photon"): (1.0, 1e12),
    ("source", "power_w"): (0.0, 100.0),
    ("detector", "qe"): (0.0, 1.0),
    ("detector", "read_noise_e"): (0.0, 100.0),
    ("detector", "dark_current"): (0.0, 1e4),
    ("detector", "exposure_s"): (0.0, 3600.0),
    ("optics", "pixel_pitch_um"): (0.5, 100.0),
}
CATALOGUE = {"detector": 2500.0, "source": 1500.0, "lens": 300.0, "objective": 900.0,
             "filter": 150.0, "prism": 400.0, "grating": 600.0, "beamsplitter": 200.0}
CUSTOM = {"diffuser": 1800.0, "mask": 2500.0, "coded_aperture": 2500.0, "metasurface": 9000.0,
          "lenslet_array": 3000.0, "multilens": 3000.0}


@dataclass
class CostReport:
    items: list  # (element, cost, provenance, note)
    total: float
    feasible: bool
    infeasible_reasons: list = field(default_factory=list)

    def to_json(self):
        return {"items": [{"element": e, "cost": c, "provenance": p, "note": n}
                          for e, c, p, n in self.items],
                "total": self.total, "feasible": self.feasible,
                "infeasible_reasons": list(self.infeasible_reasons)}


def feasibility_cost(se: SystemElements) -> CostReport:
    items, reasons = [], []
    for (block, key), (lo, hi) in RANGES.items():
        val = getattr(se, block, {}).get(key)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            continue
        ok = (lo < val <= hi) if key in ("qe", "exposure_s") else (lo <= val <= hi)
        if not ok:
            reasons.append(f"{block}.{key}={val} outside realizable range [{lo}, {hi}]")
    det, defaulted = se.detector_params()
    items.append(("detector", CATALOGUE["detector"], "estimated",
                  "defaulted fields: " + ",".join(defaulted) if defaulted else ""))
    if se.source:
        items.append(("source", CATALOGUE["source"], "estimated", ""))
    for key, val in sorted(se.optics.items()):
        name = str(val) if isinstance(val, str) else key
        base = name.split("(")[0].strip().lower()
        if base in CUSTOM or key.lower() in CUSTOM:
            items.append((f"optics.{key}", CUSTOM.get(base, CUSTOM.get(key.lower())), "unknown",
                          "custom fabrication; lead time 4-8 weeks"))
        elif base in CATALOGUE or key.lower() in CATALOGUE:
            items.append((f"optics.{key}", CATALOGUE.get(base, CATALOGUE.get(key.lower())),
                          "quoted", "catalogue part"))
        elif isinstance(val, str):
            items.append((f"optics.{key}", 0.0, "unknown", "not in stub table"))
    total = float(sum(c for _, c, _, _ in items))
    return CostReport(items, total, not reasons, reasons)


# --------------------------------------------------------------------------
# Judge

@dataclass
class Certificate:
    compile_report: CompileReport
    gates: list
    cost: CostReport | None
    feasible: bool
    overall: bool
    failure_stage: str | None = None
    forced: bool = False
    provenance: dict = field(default_factory=dict)

    def gate(self, gid):
        return next((v for v in self.gates if v.gate == gid), None)

    def to_json(self):
        return {
            "checks": [c.to_json() for c in self.compile_report.checks],
            "compile": {k: v for k, v in self.compile_report.to_json().items() if k != "checks"},
            "gates": [v.to_json() for v in self.gates],
            "cost": self.cost.to_json() if self.cost else None,
            "feasible": self.feasible,
            "overall": self.overall,
            "failure_stage": self.failure_stage,
            "forced": self.forced,
            "provenance": _jsonify(self.provenance),
        }


def spec_statistics(g: OperatorGraph, doc: SpecDocument, seed=0, phantom=None):
    n_photon, flags = photon_budget(doc.system_elements, doc.noise)
    est = spectral_estimate(g, "auto", seed)
    stats = {"n_photon": n_photon, "kappa": est.condition_number, "flags": flags,
             "spectral_method": est.method}
    if phantom is not None:
        stats["phantom"] = phantom
    return stats, est


def judge(doc: SpecDocument, reg, seed=0, force=False, reference=None, phantom=None,
          estimator=None) -> Certificate:
    """Stage 1 compile, Stage 2 gates G1->G2->G3, Stage 3 feasibility.

    Stages run only if the previous stage passed unless ``force`` is set
    (diagnostics; flagged in the certificate).
    """
    rep = compile_spec(doc, reg, seed, reference)
    prov = {"seed": seed}
    if not rep.overall and not force:
        return Certificate(rep, [], None, False, False, "compile", provenance=prov)
    g = rep.graph
    gates = []
    stage_fail = None if rep.overall else "compile"
    g1 = gate1_recoverability(g, doc.object, doc.target, phantom, reg, "auto", seed)
    gates.append(g1)
    if g1.passed or force:
        stats, est = spec_statistics(g, doc, seed, phantom)
        prov["spectral"] = est.to_json()
        g2 = gate2_carrier_budget(doc.system_elements, doc.target, stats)
        gates.append(g2)
        if g2.passed or force:
            if estimator is None and any(c.sensitivity_db_per_unit is None
                                         for c in doc.system_elements.calibration):
                from .protocol import sensitivity
                tols = {c.param_name: c.tolerance for c in doc.system_elements.calibration}

                def estimator(name):
                    # mismatch slope measured at the declared tolerance
                    return sensitivity(doc, name, seed, reg=reg, step=tols[name] or None)
            g3 = gate3_mismatch(doc.system_elements.calibration, g2, doc.target,
                                estimator=estimator)
            gates.append(g3)
    gates_ok = len(gates) == 3 and all(v.passed for v in gates)
    if stage_fail is None and not gates_ok:
        stage_fail = next((v.gate for v in gates if not v.passed), "G?")
    cost = None
    feasible = False
    if gates_ok or force:
        cost = feasibility_cost(doc.system_elements)
        feasible = cost.feasible
        if stage_fail is None and not feasible:
            stage_fail = "feasibility"
    overall = rep.overall and gates_ok and feasible
    return Certificate(rep, gates, cost, feasible, overall, stage_fail, force, prov)
