"""Fill registry gamma_min values from the Gate-1 SVD oracle.

Each entry is built at its bundled size (shrunk to at most 4096 unknowns) and
the oracle ceiling c at compression gamma is inverted through the fast-path
model ceiling = 30 + 10 log10((1 - gamma_min) / (1 - gamma)):

    gamma_min = 1 - (1 - gamma) * 10 ** ((c - 30) / 10)

clipped to [0.01, 1]. Full-rank entries (gamma >= 1) are evaluated at
gamma = 1 - 1e-3.

    python3 scripts/derive_gamma_min.py [--dry-run]
"""
import argparse
import json
import math
from pathlib import Path

from fpbc.graph import DENSE_LIMIT, build_graph, downscale_doc
from fpbc.registry import load_registry
from fpbc.triad import GAMMA_REF_DB, gate1_oracle

OUT = Path(__file__).resolve().parents[1] / "src" / "fpbc" / "data" / "registry.json"


def derive(entry, seed=0):
    doc = downscale_doc(entry.to_doc(), DENSE_LIMIT)
    g = build_graph(doc, None, enforce_bounds=False)
    gamma = g.compression_ratio()
    ceiling, _, rank = gate1_oracle(g, seed)
    gam = min(gamma, 1 - 1e-3)
    gmin = 1 - (1 - gam) * 10 ** ((ceiling - GAMMA_REF_DB) / 10)
    return min(1.0, max(0.01, gmin)), gamma, ceiling, rank, g.object_dims


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()
    reg = load_registry(OUT)
    raw = json.loads(OUT.read_text(encoding="utf-8"))
    for rec in raw:
        gmin, gamma, c, r, dims = derive(reg.get(rec["modality"]))
        rec["gamma_min"] = round(gmin, 6)
        rec["gamma_min_provenance"] = "derived"
        print(f"{rec['modality']:18s} dims={dims} gamma={gamma:.3f} ceiling={c:6.2f} dB "
              f"rank={r} gamma_min={gmin:.4f}", flush=True)
        assert math.isfinite(gmin)
    if not args.dry_run:
        OUT.write_text(json.dumps(raw, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
        print(f"updated {OUT}")


if __name__ == "__main__":
    main()
