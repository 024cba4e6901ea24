"""Design studies: maskless control group, depth-encoder comparison, compression sweep.

Every study is a list of independent cells. Each cell gets its own seed spawned
from the master seed, so a table is reproducible byte-for-byte from
(config, seed) regardless of the worker count.

The composite multi-dimensional measurement follows

    y = sum_{planes} shift_{W}( M * conv(x_plane, PSF(z)) ) + n

i.e. chains of the form Phi_z -> [M] -> [W_lambda] -> [W_t] -> Sigma -> D.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..compiler import compile_graph
from ..errors import AlgorithmIncompatible, Diverged
from ..graph import DENSE_LIMIT, graph_from_chain, spectral_estimate
from ..phantoms import make_phantom
from ..primitives import ENCODERS, NoiseModel, detect
from ..primitives.psf import generate_depth_psfs, psf_cross_correlation
from ..recon import SolverConfig, psnr, reconstruct
from ..registry import load_registry
from ..specdoc import ObjectSpec, TargetSpec
from ..triad import gate1_recoverability

KAPPA_FLAG = 1e6
# (algorithm, lambda) pairs tried per cell; the best PSNR is reported
SOLVER_GRID = (("fista_tv", 3e-5), ("fista_tv", 1e-4), ("fista_tv", 3e-4), ("fista_tv", 1e-3),
               ("gap_tv", 3e-2), ("admm_tv", 1e-4))
FAST_SOLVER_GRID = (("fista_tv", 1e-4), ("fista_tv", 3e-4))


@dataclass
class StudyTable:
    name: str
    columns: list
    rows: list
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @staticmethod
    def _fmt(v):
        if isinstance(v, bool) or v is None:
            return str(v)
        if isinstance(v, (float, np.floating)):
            v = float(v)
            if not math.isfinite(v):
                return str(v)
            return f"{v:.6g}" if abs(v) >= 1e4 or (v != 0 and abs(v) < 1e-3) else f"{v:.4f}"
        return str(v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([self._fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [[str(c) for c in self.columns]]
        cells += [[self._fmt(r.get(c)) for c in self.columns] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        lines = ["  ".join(s.ljust(wd) for s, wd in zip(row, widths)) for row in cells]
        lines += [f"warning: {m}" for m in self.warnings]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return {"study": self.name, "columns": list(self.columns), "rows": self.rows,
                "warnings": list(self.warnings), "meta": self.meta}

    def column(self, name):
        return [r[name] for r in self.rows]


def cell_seeds(master: int, n: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def run_cells(fn, cells, workers=1):
    """Map ``fn`` over ``cells`` (order preserved); a process pool when workers > 1."""
    if workers is None or workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
        return list(ex.map(fn, cells))


def best_psnr(g, y, x_star, grid=SOLVER_GRID, max_iters=300):
    """Best PSNR over the (algorithm, lambda) grid; skips inapplicable solvers."""
    best = (-math.inf, None, None)
    for alg, lam in grid:
        try:
            r = reconstruct(g, y, SolverConfig(alg, lam=lam, max_iters=max_iters))
        except (AlgorithmIncompatible, Diverged):
            continue
        p = psnr(r.x_hat, x_star)
        if p > best[0]:
            best = (p, alg, lam)
    return best


def _measure(g, x, noise_sigma, seed):
    y = g.forward(x)
    return detect(y, NoiseModel("gaussian", sigma=noise_sigma, seed=seed))


# --------------------------------------------------------------------------
# chain construction

W_NODES = {
    "W_lambda": "Disperse(W_lambda, shift={s}, axis={ax}, shift_axis=1)",
    "W_t": "Disperse(W_t, shift={s}, axis={ax}, shift_axis=0)",
}


def design_chain(encoder, mask=False, dispersions=(), depth_axis=2, disp_axes=None, shift=1.0,
                 mask_seed=0, psf_seed=0):
    """Phi_z -> [M] -> [W...] -> Sigma -> D as chain text."""
    parts = [f"Encode(Phi_z, psf={encoder}(z), axis={depth_axis}, seed={psf_seed})"]
    if mask:
        parts.append(f"Code(M, mask=random, per_plane=true, seed={mask_seed})")
    disp_axes = disp_axes or [depth_axis] * len(dispersions)
    for d, ax in zip(dispersions, disp_axes):
        parts.append(W_NODES[d].format(s=shift, ax=ax))
    parts += ["Accumulate(Sigma)", "Detect(D)"]
    return " -> ".join(parts)


# --------------------------------------------------------------------------
# maskless control group

@dataclass
class MasklessConfig:
    dims: tuple = (16, 16, 4)
    encoders: tuple = ENCODERS
    dispersions: tuple = (("W_lambda",), ("W_t",), ("W_lambda", "W_t"))
    noise_sigma: float = 0.01
    phantom: str = "piecewise_3d"
    target_psnr: float = 15.0
    max_iters: int = 300
    solver_grid: tuple = SOLVER_GRID


def _maskless_cell(args):
    cfg, enc, disp, seed = args
    reg = load_registry()
    s_obj, s_noise, s_mask = cell_seeds(seed, 3)
    x = make_phantom(cfg.phantom, cfg.dims, s_obj)
    row = {"encoder": enc, "dispersion": "+".join(disp)}
    for tag, mask in (("maskless", False), ("masked", True)):
        chain = design_chain(enc, mask, disp, mask_seed=s_mask)
        g = graph_from_chain(chain, cfg.dims)
        rep = compile_graph(g, reg)
        c15 = all(rep.check(c).passed is not False for c in ("C1", "C3", "C4", "C5"))
        est = spectral_estimate(g, "dense_svd" if g.n <= DENSE_LIMIT else "auto")
        g1 = gate1_recoverability(g, ObjectSpec(tuple(cfg.dims)), TargetSpec("psnr_db", cfg.target_psnr))
        y = _measure(g, x, cfg.noise_sigma, s_noise)
        p, alg, lam = best_psnr(g, y, x, cfg.solver_grid, cfg.max_iters)
        row.update({f"{tag}_compiles": bool(rep.overall and c15), f"{tag}_kappa": est.condition_number,
                    f"{tag}_gate1_pass": bool(g1.passed),
                    f"{tag}_gate1_ceiling_db": g1.ceiling_or_deploy_psnr_db,
                    f"{tag}_psnr_db": p, f"{tag}_solver": f"{alg}@{lam:g}" if alg else "none"})
        if tag == "maskless":
            row["chain"] = chain.split(", seed")[0] + " ..."
            row["maskless_flagged"] = bool((not g1.passed) or est.condition_number > KAPPA_FLAG)
    row["delta_psnr_db"] = row["masked_psnr_db"] - row["maskless_psnr_db"]
    row["kappa_reduced"] = bool(row["masked_kappa"] < row["maskless_kappa"])
    return row


MASKLESS_COLUMNS = ["encoder", "dispersion", "maskless_compiles", "maskless_kappa", "maskless_gate1_pass",
                    "maskless_gate1_ceiling_db", "maskless_flagged", "maskless_psnr_db", "maskless_solver",
                    "masked_compiles", "masked_kappa", "masked_psnr_db", "masked_solver",
                    "delta_psnr_db", "kappa_reduced"]


def maskless_control(cfg: MasklessConfig | None = None, seed=0, workers=1) -> StudyTable:
    """Maskless Phi_z + dispersion designs against the same designs with a coded mask."""
    cfg = cfg or MasklessConfig()
    combos = [(e, d) for e in cfg.encoders for d in cfg.dispersions]
    seeds = cell_seeds(seed, len(combos))
    rows = run_cells(_maskless_cell, [(cfg, e, d, s) for (e, d), s in zip(combos, seeds)], workers)
    warn = []
    for r in rows:
        tag = f"{r['encoder']}/{r['dispersion']}"
        if not r["maskless_flagged"]:
            warn.append(f"{tag}: maskless design neither fails Gate 1 nor has kappa > {KAPPA_FLAG:g}")
        if r["delta_psnr_db"] < 5.0:
            warn.append(f"{tag}: mask gain {r['delta_psnr_db']:.2f} dB < 5 dB")
    return StudyTable("maskless", MASKLESS_COLUMNS, rows, warn,
                      {"config": _cfg_json(cfg), "seed": seed})


# --------------------------------------------------------------------------
# encoder comparison

COMBOS = {
    "3d_only": (False, ()),
    "mask": (True, ()),
    "mask_wl": (True, ("W_lambda",)),
    "mask_wt": (True, ("W_t",)),
    "mask_wl_wt": (True, ("W_lambda", "W_t")),
}


@dataclass
class EncoderStudyConfig:
    size: tuple = (64, 64)
    n_depths: int = 8
    n_lambda: int = 4
    n_t: int = 4
    encoders: tuple = ENCODERS
    combos: tuple = tuple(COMBOS)
    noise_sigma: float = 0.01
    phantom: str = "piecewise_3d"
    max_iters: int = 200
    solver_grid: tuple = FAST_SOLVER_GRID
    psf_seed: int = 0


def combo_dims(cfg: EncoderStudyConfig, combo):
    _, disp = COMBOS[combo]
    dims = list(cfg.size) + [cfg.n_depths]
    axes = []
    for d in disp:
        dims.append(cfg.n_lambda if d == "W_lambda" else cfg.n_t)
        axes.append(len(dims) - 1)
    return tuple(dims), axes


def compression_label(dims):
    return f"{math.prod(dims[2:])}:1"


def _encoder_cell(args):
    cfg, enc, combo, seed = args
    s_obj, s_noise, s_mask = cell_seeds(seed, 3)
    mask, disp = COMBOS[combo]
    dims, axes = combo_dims(cfg, combo)
    chain = design_chain(enc, mask, disp, disp_axes=axes, mask_seed=s_mask, psf_seed=cfg.psf_seed)
    g = graph_from_chain(chain, dims)
    x = make_phantom(cfg.phantom, dims, s_obj)
    y = _measure(g, x, cfg.noise_sigma, s_noise)
    p, alg, lam = best_psnr(g, y, x, cfg.solver_grid, cfg.max_iters)
    return {"encoder": enc, "combo": combo, "compression": compression_label(dims), "psnr_db": p,
            "solver": f"{alg}@{lam:g}" if alg else "none"}


def encoder_correlations(cfg: EncoderStudyConfig):
    return {e: psf_cross_correlation(generate_depth_psfs(e, cfg.n_depths, seed=cfg.psf_seed,
                                                         size=tuple(cfg.size)))
            for e in cfg.encoders}


def encoder_study(cfg: EncoderStudyConfig | None = None, seed=0, workers=1) -> StudyTable:
    """3 encoders x modulation combos; one row per encoder, one PSNR column per combo."""
    cfg = cfg or EncoderStudyConfig()
    cells = [(e, c) for e in cfg.encoders for c in cfg.combos]
    seeds = cell_seeds(seed, len(cfg.combos))
    # a combo shares its seed across encoders so every encoder sees the same object
    args = [(cfg, e, c, seeds[cfg.combos.index(c)]) for e, c in cells]
    out = run_cells(_encoder_cell, args, workers)
    corr = encoder_correlations(cfg)
    cols = ["encoder"]
    for c in cfg.combos:
        cols.append(f"{c} ({compression_label(combo_dims(cfg, c)[0])})")
    cols.append("psf_cross_correlation")
    rows = []
    for e in cfg.encoders:
        r = {"encoder": e, "psf_cross_correlation": corr[e]}
        for c, col in zip(cfg.combos, cols[1:-1]):
            r[col] = next(o["psnr_db"] for o in out if o["encoder"] == e and o["combo"] == c)
        rows.append(r)
    warn = []
    order = sorted(corr, key=corr.get)
    if order != ["multilens", "diffuser", "metasurface"] and set(order) == set(ENCODERS):
        warn.append(f"correlation ordering {order}")
    return StudyTable("encoder", cols, rows, warn,
                      {"config": _cfg_json(cfg), "seed": seed,
                       "solvers": {f"{o['encoder']}/{o['combo']}": o["solver"] for o in out}})


# --------------------------------------------------------------------------
# compression sweep

@dataclass
class CompressionConfig:
    size: tuple = (32, 32)
    levels: tuple = (1, 2, 4, 8)  # planes folded onto one detector frame
    encoder: str = "diffuser"
    noise_sigma: float = 0.01
    phantom: str = "piecewise_3d"
    max_iters: int = 200
    solver_grid: tuple = FAST_SOLVER_GRID
    collapse_margin_db: float = 3.0


def noise_floor_psnr(x):
    """PSNR of the best constant estimate (the object mean): what zero information achieves."""
    return psnr(np.full_like(x, x.mean()), x)


def _compression_cell(args):
    cfg, level, mask, seed = args
    s_obj, s_noise, s_mask = cell_seeds(seed, 3)
    dims = tuple(cfg.size) + ((level,) if level > 1 else ())
    if level == 1:
        # nothing to multiplex at 1:1: the masked and maskless designs coincide
        chain = "Encode(C, psf=caustic) -> Detect(D)"
    else:
        chain = design_chain(cfg.encoder, mask, (), mask_seed=s_mask)
    g = graph_from_chain(chain, dims)
    x = make_phantom(cfg.phantom, dims, s_obj)
    y = _measure(g, x, cfg.noise_sigma, s_noise)
    p, alg, lam = best_psnr(g, y, x, cfg.solver_grid, cfg.max_iters)
    return {"level": f"{level}:1", "masked": mask, "psnr_db": p, "floor_db": noise_floor_psnr(x),
            "solver": f"{alg}@{lam:g}" if alg else "none"}


def compression_sweep(cfg: CompressionConfig | None = None, seed=0, workers=1) -> StudyTable:
    """PSNR against compression for a lensless depth-encoder family, masked and maskless.

    Level k folds k depth planes onto one frame (k:1). Level 1 is plain 2D lensless
    imaging, where masked and maskless are the same design.
    """
    cfg = cfg or CompressionConfig()
    seeds = cell_seeds(seed, len(cfg.levels))
    args = [(cfg, lv, m, s) for lv, s in zip(cfg.levels, seeds) for m in (False, True)]
    out = run_cells(_compression_cell, args, workers)
    rows, warn = [], []
    prev = None
    for lv in cfg.levels:
        a = next(o for o in out if o["level"] == f"{lv}:1" and not o["masked"])
        b = next(o for o in out if o["level"] == f"{lv}:1" and o["masked"])
        collapse = b["psnr_db"] < b["floor_db"] - cfg.collapse_margin_db
        r = {"level": f"{lv}:1", "maskless_psnr_db": a["psnr_db"], "masked_psnr_db": b["psnr_db"],
             "floor_db": b["floor_db"], "masked_ge_maskless": bool(b["psnr_db"] >= a["psnr_db"]),
             "collapse": bool(collapse)}
        rows.append(r)
        best = max(a["psnr_db"], b["psnr_db"])
        if prev is not None and best > prev:
            warn.append(f"non-monotone: {lv}:1 beats the previous level ({best:.2f} > {prev:.2f} dB)")
        if collapse:
            warn.append(f"{lv}:1 masked design collapsed below the floor")
        prev = best
    cols = ["level", "maskless_psnr_db", "masked_psnr_db", "floor_db", "masked_ge_maskless", "collapse"]
    return StudyTable("compression", cols, rows, warn, {"config": _cfg_json(cfg), "seed": seed})


def _cfg_json(cfg):
    def conv(v):
        if isinstance(v, (tuple, list)):
            return [conv(u) for u in v]
        return v
    return {k: conv(v) for k, v in asdict(cfg).items()}
