"""Shared builders for the test suite (defect fixtures, small docs)."""
import dataclasses

from fpbc.compiler import compile_graph
from fpbc.graph import build_graph
from fpbc.primitives import LAMBDA_FAMILIES, make_primitive
from fpbc.registry import load_registry
from fpbc.specdoc import parse_chain

MASK = "Modulate(M, mask=random, density=0.5)"
TAIL = "Disperse(W, shift=1.0) -> Accumulate(Sigma) -> Detect(D)"
CHECK_IDS = ("C1", "C2", "C3", "C4", "C5", "C6")

# (kind, params, ndim, complex input); covers every kind and the main variants
CASES = [
    ("P", {"distance": 5.0, "wavelength": 0.5}, 2, True),
    ("M", {"mask": "random", "density": 0.5}, 2, False),
    ("M", {"mask": "random", "per_plane": True}, 3, False),
    ("M", {"mask": "sinusoid", "period": 4.0}, 2, False),
    ("M", {"mask": "coil"}, 2, True),
    ("Pi", {"n_angles": 12}, 2, False),
    ("F", {}, 2, True),
    ("C", {"psf": "gaussian"}, 2, False),
    ("C", {"psf": "caustic"}, 2, False),
    ("C", {"psf": "diffuser(z)"}, 3, False),
    ("C", {"psf": "multilens(z)"}, 3, False),
    ("Sigma", {}, 3, False),
    ("D", {}, 2, False),
    ("D", {"mode": "intensity"}, 2, False),
    ("S", {"pattern": "lines", "acceleration": 2}, 2, False),
    ("S", {"pattern": "random", "fraction": 0.3}, 2, False),
    ("W", {"shift": 1.0}, 3, False),
    ("W", {"shift": 0.5, "shift_axis": 0}, 3, False),
    ("R", {"length": 1.5}, 2, False),
] + [("Lambda", {"family": f}, 2, False) for f in LAMBDA_FAMILIES]


def max_tier(kind):
    return make_primitive(kind, {"n_angles": 4, "family": "polynomial"}).max_tier


def small_cassi(reg=None, dims=(16, 16, 4)):
    reg = reg or load_registry()
    doc = reg.get("cassi").to_doc()
    return dataclasses.replace(doc, object=dataclasses.replace(doc.object, dims=dims))


def with_chain(doc, chain):
    return dataclasses.replace(doc, forward_model=parse_chain(chain))


def wide_chain(n_masks):
    """``n_masks`` parallel masks merged by W: n_masks + 3 nodes at depth 4."""
    return " + ".join([MASK] * n_masks) + f" -> {TAIL}"


def register(reg, doc, name):
    """Registry copy that also knows ``doc``'s chain under ``name``."""
    e = dataclasses.replace(reg.get("cassi"), modality=name, aliases=(), canonical_chain=doc.forward_model)
    return reg.with_entries([e])


def pattern(report):
    return {c.id: c.passed for c in report.checks}


def defect_fixtures(reg=None):
    """name -> (graph, registry, reference) with exactly one structural defect each."""
    reg = reg or load_registry()
    base = small_cassi(reg)

    def build(doc):
        return build_graph(doc, reg, enforce_bounds=False)

    out = {}
    g = build(base)
    g.edges.append((g.nodes[-1].id, g.nodes[0].id))
    out["C1"] = (g, reg, build(base))

    d2 = with_chain(base, f"{MASK} -> {MASK} -> {TAIL}")
    out["C2"] = (build(d2), reg, build(d2))

    d3 = with_chain(base, wide_chain(18))  # 21 nodes, depth 4
    out["C3"] = (build(d3), register(reg, d3, "deep_toy"), build(d3))

    d4 = with_chain(base, f"{MASK} -> Disperse(W, shift=1.0) -> Accumulate(Sigma) -> "
                          "Nonlinear(Lambda, family=polynomial, c1=1.0, c2=0.1, c3=0.01) -> Detect(D)")
    out["C4"] = (build(d4), register(reg, d4, "cubic_toy"), build(d4))

    g5 = build(base)
    g5.nodes[0].primitive.adjoint_scale = 1 / 1.01
    out["C5"] = (g5, reg, build(base))

    shifted = with_chain(base, f"Modulate(M, mask=random, density=0.5, mask_shift=1.0) -> {TAIL}")
    out["C6"] = (build(base), reg, build(shifted))
    return out


def run_defect(fixture, seed=0):
    g, reg, ref = fixture
    return compile_graph(g, reg, seed, reference=ref)
