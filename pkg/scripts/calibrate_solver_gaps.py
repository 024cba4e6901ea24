"""Calibrate the solver-gap constants used by predict_quality.

For each calibration modality (bundled toy size, at most 4096 unknowns) the
judge is run in diagnostic mode to get the gate ceilings, the selected solver
reconstructs a seed-0 simulation, and

    gap = min(G1 ceiling, G2 ceiling, 99) - measured PSNR.

Per-modality gaps are stored as-is; per-algorithm gaps are medians over the
modalities where Gate 2 is not the binding ceiling (the kappa term of the
carrier budget otherwise swamps the solver contribution).

    python3 scripts/calibrate_solver_gaps.py [--dry-run]
"""
import argparse
import json
import statistics
from pathlib import Path

from fpbc.graph import DENSE_LIMIT, build_graph, downscale_doc
from fpbc.protocol import ProtocolConfig, simulate
from fpbc.protocol.scenarios import solver_config
from fpbc.recon import psnr, reconstruct, select_algorithm
from fpbc.registry import load_registry
from fpbc.triad import judge

OUT = Path(__file__).resolve().parents[1] / "src" / "fpbc" / "data" / "solver_gaps.json"
MODALITIES = ("ct", "mri", "cassi", "cacti", "spc", "lensless", "lensless_3d", "sim", "sted",
              "tem", "fluorescence", "pet")


def calibrate(modality, reg, seed=0):
    doc = downscale_doc(reg.get(modality).to_doc(target=30.0), DENSE_LIMIT)
    cert = judge(doc, reg, seed, force=True)
    c = {v.gate: v.ceiling_or_deploy_psnr_db for v in cert.gates}
    base = min(c.get("G1", 99.0), c.get("G2", 99.0), 99.0)
    alg = select_algorithm(doc.forward_model, doc.noise)
    cfg = solver_config(doc, ProtocolConfig(algorithm=alg), max_iters=200, seed=seed)
    sim = simulate(doc, seed, reg=reg)
    g = build_graph(doc, reg, enforce_bounds=False)
    measured = psnr(reconstruct(g, sim.y, cfg).x_hat, sim.x_star)
    return {"algorithm": alg, "run_algorithm": cfg.algorithm, "g1": c.get("G1"), "g2": c.get("G2"),
            "base": base, "measured": measured, "gap": base - measured,
            "g2_binding": c.get("G2", 99.0) < c.get("G1", 99.0)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()
    reg = load_registry()
    res = {}
    for m in MODALITIES:
        r = calibrate(m, reg)
        res[m] = r
        print(f"{m:14s} {r['run_algorithm']:16s} G1={r['g1']:7.2f} G2={r['g2']:8.2f} "
              f"measured={r['measured']:6.2f} gap={r['gap']:8.2f}", flush=True)
    by_alg = {}
    for r in res.values():
        if not r["g2_binding"]:
            by_alg.setdefault(r["run_algorithm"], []).append(r["gap"])
    algs = ("fista_tv", "gap_tv", "admm_tv", "richardson_lucy", "wiener")
    by_algorithm = {a: round(statistics.median(by_alg[a]), 4) if a in by_alg else None for a in algs}
    known = [v for v in by_algorithm.values() if v is not None]
    default = round(statistics.median(known), 4) if known else 0.0
    by_algorithm = {a: (v if v is not None else default) for a, v in by_algorithm.items()}
    out = {"by_algorithm": by_algorithm,
           "by_modality": {m: round(r["gap"], 4) for m, r in sorted(res.items())},
           "default": default, "provenance": "derived: scripts/calibrate_solver_gaps.py, seed 0"}
    if not args.dry_run:
        OUT.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        print(f"updated {OUT}")


if __name__ == "__main__":
    main()
