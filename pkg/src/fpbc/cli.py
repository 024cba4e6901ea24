"""Command-line entry point: ``fpbc <subcommand> SPEC [flags]``.

Exit codes: 0 success/pass, 1 internal error, 2 compile failure, 3 parse error,
4 gate failure, 5 infeasible.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .compiler import compile_spec
from .graph import build_graph
from .registry import load_registry
from .specdoc import load_spec
from .triad import _jsonify, judge

EXIT_OK, EXIT_INTERNAL, EXIT_COMPILE, EXIT_PARSE, EXIT_GATE, EXIT_INFEASIBLE = 0, 1, 2, 3, 4, 5
SUBCOMMANDS = ("compile", "judge", "simulate", "reconstruct", "budget", "recover", "study")
STUDIES = ("maskless", "encoder", "compression")


@dataclass
class CliConfig:
    subcommand: str
    spec_path: str | None = None
    registry_path: str | None = None
    seed: int = 0
    out: str | None = None
    format: str = "json"
    phantom: str | None = None
    algorithm: str | None = None
    perturb: dict = field(default_factory=dict)
    workers: int | None = None
    study: str | None = None
    measurement: str | None = None
    cal_method: str = "grid_search"
    force: bool = False
    max_iters: int | None = None


class UsageError(Exception):
    pass


SCHEMA_DIR = Path(__file__).parent / "data" / "schemas"


def output_schema(subcommand: str) -> dict:
    """Published JSON schema for a subcommand's machine output."""
    return json.loads((SCHEMA_DIR / f"{subcommand}.schema.json").read_text(encoding="utf-8"))


def _perturb_pairs(items):
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--perturb expects name=delta, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--perturb {it!r}: delta is not a number") from None
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="fpbc", description="Compile, judge and simulate imaging specs.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("target", nargs="?", help="spec path (or study name for 'study')")
    p.add_argument("--spec", help="spec path (alternative to the positional argument)")
    p.add_argument("--registry", help="registry JSON (default: $FPBC_REGISTRY or bundled)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--format", choices=("json", "csv", "text"), default=None)
    p.add_argument("--phantom", help="shepp_logan_2d | piecewise_2d | piecewise_3d | spectral_cube_toy")
    p.add_argument("--algorithm", help="reconstruction algorithm")
    p.add_argument("--perturb", action="append", default=[], metavar="NAME=DELTA")
    p.add_argument("--workers", type=int, default=None, help="study worker pool size")
    p.add_argument("--measurement", help="measurement .npy for 'reconstruct'")
    p.add_argument("--cal-method", choices=("grid_search", "gradient"), default="grid_search")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--force", action="store_true", help="judge: run every stage for diagnostics")
    return p


def parse_args(argv) -> CliConfig:
    ns = build_parser().parse_args(argv)
    cfg = CliConfig(ns.subcommand, registry_path=ns.registry, seed=ns.seed, out=ns.out,
                    phantom=ns.phantom, algorithm=ns.algorithm, workers=ns.workers,
                    measurement=ns.measurement, cal_method=ns.cal_method, force=ns.force,
                    max_iters=ns.max_iters)
    cfg.perturb = _perturb_pairs(ns.perturb)
    if ns.subcommand == "study":
        cfg.study = ns.target
        if cfg.study not in STUDIES:
            raise UsageError(f"study must be one of {', '.join(STUDIES)}")
        cfg.spec_path = ns.spec
        cfg.format = ns.format or "csv"
    else:
        cfg.spec_path = ns.spec or ns.target
        if not cfg.spec_path:
            raise UsageError(f"{ns.subcommand} needs a spec path")
        cfg.format = ns.format or "json"
    return cfg


# --------------------------------------------------------------------------
# output

def dumps(obj) -> str:
    return json.dumps(_jsonify(obj), sort_keys=True, indent=2) + "\n"


def _text(obj, indent=0) -> str:
    pad = "  " * indent
    lines = []
    for k, v in (obj.items() if isinstance(obj, dict) else enumerate(obj)):
        if isinstance(v, (dict, list)) and v:
            lines.append(f"{pad}{k}:")
            lines.append(_text(v, indent + 1))
        else:
            lines.append(f"{pad}{k}: {v}")
    return "\n".join(lines)


def emit(payload: dict, cfg: CliConfig, name: str):
    payload = _jsonify(payload)
    text = dumps(payload) if cfg.format != "text" else _text(payload) + "\n"
    if cfg.out is None:
        sys.stdout.write(text)
        return
    out = Path(cfg.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{name}.{'txt' if cfg.format == 'text' else 'json'}"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def _sha(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def _save_arrays(cfg: CliConfig, arrays: dict):
    if cfg.out is None:
        return
    d = Path(cfg.out)
    if d.suffix:
        d = d.parent
    d.mkdir(parents=True, exist_ok=True)
    for k, v in arrays.items():
        np.save(d / f"{k}.npy", v, allow_pickle=False)


# --------------------------------------------------------------------------
# subcommands

def _doc_reg(cfg):
    reg = load_registry(cfg.registry_path)
    doc = load_spec(cfg.spec_path) if cfg.spec_path else None
    return doc, reg


def cmd_compile(cfg):
    doc, reg = _doc_reg(cfg)
    rep = compile_spec(doc, reg, cfg.seed)
    emit({"command": "compile", "modality": doc.modality, "seed": cfg.seed, "report": rep.to_json()},
         cfg, "compile")
    if not rep.overall:
        sys.stderr.write(f"compile failed: {', '.join(rep.failed())}\n")
        return EXIT_COMPILE
    return EXIT_OK


def cmd_judge(cfg):
    doc, reg = _doc_reg(cfg)
    cert = judge(doc, reg, cfg.seed, force=cfg.force)
    emit({"command": "judge", "modality": doc.modality, "certificate": cert.to_json()}, cfg, "judge")
    if cert.overall:
        return EXIT_OK
    stage = cert.failure_stage or "?"
    sys.stderr.write(f"judge: failed at {stage}\n")
    for v in cert.gates:
        if not v.passed:
            sys.stderr.write(f"  {v.gate}: margin {v.margin_db:.2f} dB; {v.action_hint}\n")
    if stage == "compile":
        return EXIT_COMPILE
    if stage == "feasibility":
        return EXIT_INFEASIBLE
    return EXIT_GATE


def _protocol_cfg(cfg):
    from .protocol import ProtocolConfig
    kw = {"algorithm": cfg.algorithm or "fista_tv", "phantom": cfg.phantom}
    if cfg.max_iters:
        kw["max_iters"] = cfg.max_iters
    return ProtocolConfig(**kw)


def cmd_simulate(cfg):
    from .protocol import simulate
    doc, reg = _doc_reg(cfg)
    sim = simulate(doc, cfg.seed, cfg.phantom, reg=reg)
    _save_arrays(cfg, {"x_star": sim.x_star, "y": sim.y, "y_clean": sim.y_clean})
    emit({"command": "simulate", "modality": doc.modality, "seed": cfg.seed,
          "phantom": cfg.phantom or "default",
          "arrays": {k: {"shape": list(np.shape(a)), "dtype": str(np.asarray(a).dtype), "sha256": _sha(a)}
                     for k, a in (("x_star", sim.x_star), ("y", sim.y), ("y_clean", sim.y_clean))}},
         cfg, "simulate")
    return EXIT_OK


def cmd_reconstruct(cfg):
    from .protocol import simulate
    from .protocol.scenarios import solver_config
    from .recon import reconstruct
    doc, reg = _doc_reg(cfg)
    g = build_graph(doc, reg, enforce_bounds=False)
    x_star = None
    if cfg.measurement:
        y = np.load(cfg.measurement, allow_pickle=False)
    else:
        sim = simulate(doc, cfg.seed, cfg.phantom, reg=reg)
        y, x_star = sim.y, sim.x_star
    pcfg = _protocol_cfg(cfg)
    scfg = solver_config(doc, pcfg, seed=cfg.seed)
    if cfg.algorithm:
        from dataclasses import replace
        from .recon import DEFAULT_LAMBDA
        scfg = replace(scfg, algorithm=cfg.algorithm, lam=DEFAULT_LAMBDA.get(cfg.algorithm, scfg.lam))
    res = reconstruct(g, y, scfg, x_star=x_star)
    _save_arrays(cfg, {"x_hat": res.x_hat})
    out = res.to_json()
    out["x_hat_sha256"] = _sha(res.x_hat)
    emit({"command": "reconstruct", "modality": doc.modality, "seed": cfg.seed, "result": out},
         cfg, "reconstruct")
    return EXIT_OK


def cmd_recover(cfg):
    from .protocol import run_four_scenarios
    doc, reg = _doc_reg(cfg)
    rep = run_four_scenarios(doc, cfg.perturb, cfg.cal_method, cfg.seed, reg, _protocol_cfg(cfg))
    emit({"command": "recover", "modality": doc.modality, "seed": cfg.seed, "report": rep.to_json()},
         cfg, "recover")
    return EXIT_OK


def cmd_budget(cfg):
    from dataclasses import replace
    from .protocol import error_budget, run_four_scenarios, triad_decomposition
    doc, reg = _doc_reg(cfg)
    rep = compile_spec(doc, reg, cfg.seed)
    if not rep.overall:
        sys.stderr.write(f"compile failed: {', '.join(rep.failed())}\n")
        return EXIT_COMPILE
    runs = run_four_scenarios(doc, cfg.perturb, cfg.cal_method, cfg.seed, reg,
                              replace(_protocol_cfg(cfg), run_iv=False))
    b = error_budget(doc, rep, cfg.perturb, runs, seed=cfg.seed)
    t = triad_decomposition(runs)
    emit({"command": "budget", "modality": doc.modality, "seed": cfg.seed, "budget": b.to_json(),
          "triad": t.to_json()}, cfg, "budget")
    return EXIT_OK


def cmd_study(cfg):
    from .protocol import studies
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    fn = {"maskless": studies.maskless_control, "encoder": studies.encoder_study,
          "compression": studies.compression_sweep}[cfg.study]
    table = fn(seed=cfg.seed, workers=workers)
    if cfg.format == "csv":
        text = table.to_csv()
    elif cfg.format == "text":
        text = table.to_text()
    else:
        text = dumps(table.to_json())
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        out = Path(cfg.out)
        if out.suffix == "":
            out.mkdir(parents=True, exist_ok=True)
            out = out / f"study_{cfg.study}.{cfg.format if cfg.format != 'text' else 'txt'}"
        out.write_text(text, encoding="utf-8")
    for msg in table.warnings:
        sys.stderr.write(f"warning: {msg}\n")
    return EXIT_OK


COMMANDS = {"compile": cmd_compile, "judge": cmd_judge, "simulate": cmd_simulate,
            "reconstruct": cmd_reconstruct, "budget": cmd_budget, "recover": cmd_recover,
            "study": cmd_study}


def run_cli(argv=None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as e:  # argparse usage errors
        return EXIT_PARSE if e.code else EXIT_OK
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return EXIT_PARSE
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except errors.SpecParseError as e:
        sys.stderr.write(f"parse error: {e}\n")
        return EXIT_PARSE
    except (errors.UnknownModality, errors.FileUnreadable, errors.MalformedEntry) as e:
        sys.stderr.write(f"registry error: {e}\n")
        return EXIT_PARSE
    except FileNotFoundError as e:
        sys.stderr.write(f"file not found: {e.filename}\n")
        return EXIT_PARSE
    except (errors.GraphError, errors.PrimitiveError) as e:
        sys.stderr.write(f"compile error: {e}\n")
        return EXIT_COMPILE
    except errors.NonNumericParam as e:
        sys.stderr.write(f"bad perturbation: {e}\n")
        return EXIT_PARSE
    except Exception as e:  # noqa: BLE001
        sys.stderr.write(f"internal error: {type(e).__name__}: {e}\n")
        return EXIT_INTERNAL


def main():
    sys.exit(run_cli(sys.argv[1:]))
