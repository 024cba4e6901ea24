"""Modality registry: canonical chains, compression thresholds and default system elements."""
from __future__ import annotations

import difflib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import FileUnreadable, MalformedEntry, SpecParseError, UnknownModality
from .specdoc import (
    CARRIER_ALIASES,
    CARRIERS,
    CalibrationEntry,
    ChainExpr,
    NoiseSpec,
    ObjectSpec,
    SpecDocument,
    SystemElements,
    TargetSpec,
    format_chain,
    parse_chain,
)

DOMINANT_EPS = ("param", "unmod")
MIN_ENTRIES = 39


@dataclass
class RegistryEntry:
    modality: str
    carrier: str
    tier_range: tuple
    canonical_chain: ChainExpr
    gamma_min: float
    dominant_eps: str
    defaults: SystemElements
    display_name: str = ""
    aliases: tuple = ()
    object: ObjectSpec | None = None
    geometry: dict = field(default_factory=dict)
    noise: NoiseSpec | None = None
    gamma_min_provenance: str = "derived"
    sigma_d_merge: bool = False
    status: str = ""

    def names(self):
        return (self.modality,) + tuple(self.aliases)

    def to_doc(self, target=30.0) -> SpecDocument:
        """A complete spec document for this entry at its bundled toy size."""
        import copy
        return SpecDocument(
            modality=self.modality, carrier=self.carrier, geometry=dict(self.geometry),
            object=copy.deepcopy(self.object) or ObjectSpec((32, 32)),
            forward_model=copy.deepcopy(self.canonical_chain),
            noise=copy.deepcopy(self.noise) or NoiseSpec("gaussian", sigma=0.01),
            target=TargetSpec("psnr_db", float(target)),
            system_elements=copy.deepcopy(self.defaults))


@dataclass
class MatchResult:
    kind: str  # exact | equivalent | none
    matched_entry: RegistryEntry | None
    note: str = ""

    @property
    def matched(self):
        return self.kind in ("exact", "equivalent")

    def to_json(self):
        return {"kind": self.kind,
                "matched_entry": self.matched_entry.modality if self.matched_entry else None,
                "note": self.note}


class Registry:
    """Immutable after load."""

    def __init__(self, entries, source=None):
        self._entries = tuple(entries)
        self.source = source
        self._by_name = {}
        for e in self._entries:
            for nm in e.names():
                self._by_name.setdefault(nm.casefold(), e)

    @property
    def entries(self):
        return self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def get(self, name):
        if not isinstance(name, str):
            return None
        return self._by_name.get(name.casefold())

    def with_entries(self, extra):
        return Registry(list(self._entries) + list(extra), self.source)


# --------------------------------------------------------------------------
# file I/O

def default_registry_path() -> Path:
    env = os.environ.get("FPBC_REGISTRY")
    if env:
        return Path(env)
    return Path(str(resources.files("fpbc") / "data" / "registry.json"))


def _parse_entry(i, raw) -> RegistryEntry:
    if not isinstance(raw, dict):
        raise MalformedEntry(i, "entry is not an object")
    for key in ("modality", "carrier", "tier", "chain", "gamma_min", "dominant_eps"):
        if key not in raw:
            raise MalformedEntry(i, f"missing key {key!r}")
    carrier = CARRIER_ALIASES.get(str(raw["carrier"]).lower(), str(raw["carrier"]).lower())
    if carrier not in CARRIERS:
        raise MalformedEntry(i, f"unknown carrier {raw['carrier']!r}")
    tier = raw["tier"]
    if isinstance(tier, int):
        tier = [tier, tier]
    if (not isinstance(tier, list) or len(tier) != 2
            or not all(isinstance(t, int) and 0 <= t <= 3 for t in tier) or tier[0] > tier[1]):
        raise MalformedEntry(i, f"bad tier range {raw['tier']!r}")
    try:
        chain = parse_chain(raw["chain"])
    except (SpecParseError, TypeError) as e:
        raise MalformedEntry(i, f"chain does not parse: {e}") from e
    if chain.nodes[-1].kind != "D":
        raise MalformedEntry(i, "canonical chain must end in D")
    gm = raw["gamma_min"]
    if isinstance(gm, bool) or not isinstance(gm, (int, float)) or not 0 < gm <= 1:
        raise MalformedEntry(i, f"gamma_min must lie in (0, 1], got {gm!r}")
    if raw["dominant_eps"] not in DOMINANT_EPS:
        raise MalformedEntry(i, f"dominant_eps must be one of {DOMINANT_EPS}")
    d = raw.get("defaults") or {}
    cal = [CalibrationEntry(c["param_name"], float(c["tolerance"]), c.get("sensitivity_db_per_unit"))
           for c in d.get("calibration", [])]
    defaults = SystemElements(source=dict(d.get("source", {})), optics=dict(d.get("optics", {})),
                              detector=dict(d.get("detector", {})), calibration=cal)
    obj = None
    if "object" in raw:
        o = raw["object"]
        obj = ObjectSpec(tuple(o["dims"]), o.get("value_domain", "real_nonneg"),
                         tuple(o.get("constraints", ())))
    noise = None
    if "noise" in raw:
        n = raw["noise"]
        noise = NoiseSpec(n["kind"], n.get("sigma"), n.get("i0"), n.get("snr_db"))
    return RegistryEntry(
        modality=str(raw["modality"]), carrier=carrier, tier_range=tuple(tier),
        canonical_chain=chain, gamma_min=float(gm), dominant_eps=raw["dominant_eps"],
        defaults=defaults, display_name=raw.get("display_name", raw["modality"]),
        aliases=tuple(raw.get("aliases", ())), object=obj, geometry=dict(raw.get("geometry", {})),
        noise=noise, gamma_min_provenance=raw.get("gamma_min_provenance", "derived"),
        sigma_d_merge=bool(raw.get("sigma_d_merge", False)), status=raw.get("status", ""))


def load_registry(path=None) -> Registry:
    path = Path(path) if path is not None else default_registry_path()
    try:
        text = path.read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileUnreadable(f"{path}: {e}") from e
    if not isinstance(data, list):
        raise MalformedEntry(-1, "top level must be an array")
    return Registry([_parse_entry(i, raw) for i, raw in enumerate(data)], source=str(path))


def entry_to_json(e: RegistryEntry) -> dict:
    out = {
        "modality": e.modality, "display_name": e.display_name, "aliases": list(e.aliases),
        "carrier": e.carrier, "tier": list(e.tier_range), "status": e.status,
        "chain": format_chain(e.canonical_chain), "gamma_min": e.gamma_min,
        "gamma_min_provenance": e.gamma_min_provenance, "dominant_eps": e.dominant_eps,
        "sigma_d_merge": e.sigma_d_merge,
        "defaults": {"source": e.defaults.source, "optics": e.defaults.optics,
                     "detector": e.defaults.detector,
                     "calibration": [{"param_name": c.param_name, "tolerance": c.tolerance,
                                      **({"sensitivity_db_per_unit": c.sensitivity_db_per_unit}
                                         if c.sensitivity_db_per_unit is not None else {})}
                                     for c in e.defaults.calibration]},
        "geometry": e.geometry,
    }
    if e.object is not None:
        out["object"] = {"dims": list(e.object.dims), "value_domain": e.object.value_domain,
                         "constraints": list(e.object.constraints)}
    if e.noise is not None:
        out["noise"] = {k: v for k, v in vars(e.noise).items() if v is not None}
    return out


# --------------------------------------------------------------------------
# queries

def _sig(chain: ChainExpr):
    """Kind signature per stage; depth-PSF convolution counts as its own symbol."""
    out = []
    for st in chain.stages:
        out.append(tuple(sorted("Phi_z" if (n.kind == "C" and n.variant == "z") else n.kind
                                for n in st)))
    return tuple(out)


def _merge_sigma_d(sig):
    if len(sig) >= 2 and sig[-1] == ("D",) and sig[-2] == ("Sigma",):
        return sig[:-2] + (("D",),)
    return sig


def _fmt_sig(sig):
    return "→".join("+".join(st) for st in sig)


def match_chain(chain: ChainExpr, reg: Registry, modality=None) -> MatchResult:
    """exact: equal kind sequences; equivalent: equal after folding a trailing Σ→D into D."""
    sig = _sig(chain)
    preferred = reg.get(modality) if modality else None
    order = ([preferred] if preferred else []) + [e for e in reg if e is not preferred]
    for e in order:
        if _sig(e.canonical_chain) == sig:
            return MatchResult("exact", e, f"matches {e.modality}: {_fmt_sig(sig)}")
    folded = _merge_sigma_d(sig)
    for e in order:
        esig = _sig(e.canonical_chain)
        if _merge_sigma_d(esig) == folded:
            return MatchResult("equivalent", e,
                               f"{_fmt_sig(sig)} ≡ {_fmt_sig(esig)} via Σ–D merge ({e.modality})")
    return MatchResult("none", None, f"{_fmt_sig(sig)} not in registry (new design)")


def lookup_modality(name: str, reg: Registry) -> RegistryEntry:
    e = reg.get(name)
    if e is not None:
        return e
    names = sorted({nm for ent in reg for nm in ent.names()})
    close = difflib.get_close_matches(name, names, n=1, cutoff=0.0)
    raise UnknownModality(name, close[0] if close else None)
