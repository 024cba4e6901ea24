"""Addressing and perturbing numeric parameters of a spec document.

A parameter name is one of

* ``noise.<field>``                     a field of the noise model,
* ``<node name>.<key>``                 a param of one named chain node,
* ``<key>``                             every chain node that uses ``key`` (own
                                        param, geometry-fed key, or a known
                                        default), else a geometry entry.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

from ..errors import NonNumericParam
from ..graph import GEOMETRY_KEYS, build_graph
from ..specdoc import SpecDocument

# numeric defaults the primitives fall back on when a key is absent
KIND_DEFAULTS = {
    "M": {"mask_shift": 0.0, "amplitude": 1.0, "period": 4.0, "phase": 0.0},
    "Pi": {"angle_offset": 0.0, "angle_range": 180.0},
    "W": {"shift": 1.0},
    "C": {"sigma": 1.5, "feature_scale": 2.5, "phase_std": 6.0, "aperture": 0.5},
    "P": {"distance": 10.0, "wavelength": 0.5, "pitch": 1.0},
    "D": {"gain": 1.0},
    "R": {"length": 1.0},
}


@dataclass(frozen=True)
class ParamRef:
    where: str  # node | geometry | noise
    key: str
    nodes: tuple = ()


def _numeric(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def resolve(doc: SpecDocument, name: str) -> ParamRef:
    if name.startswith("noise."):
        key = name.split(".", 1)[1]
        if doc.noise is None or not hasattr(doc.noise, key):
            raise NonNumericParam(f"{name}: noise has no field {key!r}")
        return ParamRef("noise", key)
    nodes = doc.forward_model.nodes
    if "." in name:
        nname, key = name.split(".", 1)
        idx = tuple(i for i, nd in enumerate(nodes) if nd.name == nname)
        if not idx:
            raise NonNumericParam(f"{name}: no chain node named {nname!r}")
        return ParamRef("node", key, idx)
    idx = tuple(i for i, nd in enumerate(nodes) if name in nd.params)
    if not idx:
        geo = doc.geometry or {}
        idx = tuple(i for i, nd in enumerate(nodes)
                    if name in GEOMETRY_KEYS.get(nd.kind, ()) and name in geo)
    if not idx:
        idx = tuple(i for i, nd in enumerate(nodes) if name in KIND_DEFAULTS.get(nd.kind, {}))
    if idx:
        return ParamRef("node", name, idx)
    if doc.geometry and name in doc.geometry:
        return ParamRef("geometry", name)
    raise NonNumericParam(f"{name!r} is not a parameter of this design")


def get_param(doc: SpecDocument, name: str) -> float:
    ref = resolve(doc, name)
    if ref.where == "noise":
        v = getattr(doc.noise, ref.key)
    elif ref.where == "geometry":
        v = doc.geometry[ref.key]
    else:
        g = build_graph(doc, None, enforce_bounds=False)
        nd = g.nodes[ref.nodes[0]]
        v = nd.primitive.params.get(ref.key, KIND_DEFAULTS.get(nd.kind, {}).get(ref.key))
    if not _numeric(v):
        raise NonNumericParam(f"{name} = {v!r} is not numeric")
    return float(v)


def set_param(doc: SpecDocument, name: str, value: float) -> SpecDocument:
    """Copy of ``doc`` with ``name`` set to ``value``.

    Dispersion nodes get their output extent frozen at the nominal value so
    that perturbing the shift never changes the measurement shape.
    """
    ref = resolve(doc, name)
    out = copy.deepcopy(doc)
    if ref.where == "noise":
        setattr(out.noise, ref.key, float(value))
        return out
    if ref.where == "geometry":
        out.geometry = dict(out.geometry)
        out.geometry[ref.key] = float(value)
        return out
    g = build_graph(doc, None, enforce_bounds=False)
    for i in ref.nodes:
        nd = out.forward_model.nodes[i]
        prim = g.nodes[i].primitive
        if nd.kind == "W" and "extent" not in nd.params:
            nd.params["extent"] = prim.extent(prim._bins(g.nodes[i].in_shape))
        nd.params[ref.key] = float(value)
    return out


def apply_perturbation(doc: SpecDocument, perturbation: dict) -> SpecDocument:
    """Add ``delta`` to every named parameter."""
    out = doc
    for name, delta in sorted(perturbation.items()):
        out = set_param(out, name, get_param(out, name) + float(delta))
    return out


def set_params(doc: SpecDocument, values: dict) -> SpecDocument:
    out = doc
    for name, v in sorted(values.items()):
        out = set_param(out, name, v)
    return out
