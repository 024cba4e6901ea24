"""The 8-field design document format (*.spec.md files): parse, validate, serialize.

Grammar (one ``key: value`` per line, ``#`` comment lines, blank lines ignored)::

    modality: computed_tomography
    carrier: xray
    geometry: parallel_beam, n_angles=128
    object: 128x128 real_nonneg
    forward_model: Radon(Pi) -> Detect(D, mode=intensity)
    noise: poisson, i0=10000.0
    target: psnr_db >= 30.0
    system_elements:
      source: n_photon=10000.0
      detector: qe=0.8, read_noise_e=5
      calibration: angle_offset=0.1@2.0

Chains are ``Name(Sym[, k=v]*)`` nodes joined by ``->``; parallel branches that
merge into the next node are joined by ``+``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    ChainParseError,
    DuplicateField,
    FieldSyntaxError,
    MissingField,
    SpecParseError,
    UnknownCarrier,
)

FIELDS = ("modality", "carrier", "geometry", "object", "forward_model", "noise",
          "target", "system_elements")
CARRIERS = ("photon", "xray", "electron", "acoustic", "spin", "particle")
CARRIER_ALIASES = {"x-ray": "xray", "x_ray": "xray", "photons": "photon", "optical": "photon",
                   "ultrasound": "acoustic", "spin/particle": "spin"}
VALUE_DOMAINS = ("real_nonneg", "real", "complex")
DOMAIN_ALIASES = {"non-negative": "real_nonneg", "nonneg": "real_nonneg", "nonnegative": "real_nonneg"}
NOISE_KINDS = ("gaussian", "poisson", "poisson_gaussian")
METRICS = ("psnr_db", "ssim")
KINDS = ("P", "M", "Pi", "F", "C", "Sigma", "D", "S", "W", "R", "Lambda")
DEFAULT_TIER = 1

# symbol text -> (kind, variant)
SYMBOLS = {
    "P": ("P", None), "M": ("M", None), "Pi": ("Pi", None), "Π": ("Pi", None),
    "F": ("F", None), "C": ("C", None), "Sigma": ("Sigma", None), "Σ": ("Sigma", None),
    "D": ("D", None), "S": ("S", None), "W": ("W", None), "R": ("R", None),
    "Lambda": ("Lambda", None), "Λ": ("Lambda", None),
    "W_lambda": ("W", "lambda"), "W_λ": ("W", "lambda"), "W_t": ("W", "t"),
    "Phi_z": ("C", "z"), "Φ_z": ("C", "z"), "C_z": ("C", "z"),
}

DETECTOR_DEFAULTS = {"qe": 1.0, "read_noise_e": 0.0, "dark_current": 0.0, "exposure_s": 1.0}


# --------------------------------------------------------------------------
# document types

@dataclass
class ObjectSpec:
    dims: tuple
    value_domain: str = "real_nonneg"
    constraints: tuple = ()

    @property
    def n(self) -> int:
        return int(math.prod(self.dims))


@dataclass
class ChainNode:
    name: str
    symbol: str
    params: dict = field(default_factory=dict)
    tier: int | None = None

    @property
    def kind(self) -> str:
        return SYMBOLS[self.symbol][0]

    @property
    def variant(self) -> str | None:
        v = SYMBOLS[self.symbol][1]
        if v is None and self.kind == "C" and is_depth_psf(self.params.get("psf")):
            return "z"
        return v

    @property
    def effective_tier(self) -> int:
        return DEFAULT_TIER if self.tier is None else self.tier


def is_depth_psf(value) -> bool:
    return isinstance(value, str) and value.replace(" ", "").endswith("(z)")


@dataclass
class ChainExpr:
    stages: tuple  # tuple of tuples of ChainNode; a stage with >1 node is a parallel branch

    @property
    def nodes(self) -> list:
        return [n for st in self.stages for n in st]

    def kinds(self) -> list:
        return [n.kind for n in self.nodes]


@dataclass
class NoiseSpec:
    kind: str
    sigma: float | None = None
    i0: float | None = None
    snr_db: float | None = None


@dataclass
class TargetSpec:
    metric: str
    threshold: float


@dataclass
class CalibrationEntry:
    param_name: str
    tolerance: float
    sensitivity_db_per_unit: float | None = None


@dataclass
class SystemElements:
    source: dict = field(default_factory=dict)
    optics: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    calibration: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def detector_params(self):
        """Gate-2 detector quantities with defaults injected; returns (values, defaulted keys)."""
        vals, defaulted = {}, []
        for k, v in DETECTOR_DEFAULTS.items():
            got = self.detector.get(k)
            if isinstance(got, (int, float)) and not isinstance(got, bool):
                vals[k] = float(got)
            else:
                vals[k] = v
                defaulted.append(k)
        return vals, defaulted


@dataclass
class SpecDocument:
    modality: str | None
    carrier: str | None
    geometry: dict | None
    object: ObjectSpec | None
    forward_model: ChainExpr | None
    noise: NoiseSpec | None
    target: TargetSpec | None
    system_elements: SystemElements | None
    extra_fields: dict = field(default_factory=dict)


@dataclass
class SchemaIssue:
    field: str
    rule: str
    observed: Any

    def __str__(self):
        return f"{self.field}: {self.rule} (observed {self.observed!r})"


# --------------------------------------------------------------------------
# scalar values and key-value lists

_INT_RE = re.compile(r"^[+-]?\d+$")
_OPEN = {"(": ")", "[": "]"}


def parse_value(text: str):
    s = text.strip()
    if len(s) >= 2 and s[0] == '"' and s[-1] == '"':
        return s[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    low = s.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if _INT_RE.match(s):
        return int(s)
    if s.startswith("[") and s.endswith("]"):
        inner = s[1:-1].strip()
        return [parse_value(t) for t in split_top(inner, ",")] if inner else []
    try:
        v = float(s)
    except ValueError:
        return s
    if math.isnan(v):
        return s
    return v


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(t) for t in v) + "]"
    s = str(v)
    if _needs_quotes(s):
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return s


def _needs_quotes(s: str) -> bool:
    if s != s.strip() or s == "" or "\n" in s:
        return True
    if not isinstance(parse_value(s), str) or parse_value(s) != s:
        return True
    if any(c in s for c in ',="#@'):
        return True
    depth = 0
    for c in s:
        if c in "([":
            depth += 1
        elif c in ")]":
            depth -= 1
            if depth < 0:
                return True
    return depth != 0 or "->" in s or "+" in s


def split_top(text: str, sep: str) -> list:
    """Split on ``sep`` outside brackets, parentheses and double quotes."""
    out, buf, stack, quoted = [], [], [], False
    i = 0
    while i < len(text):
        c = text[i]
        if quoted:
            buf.append(c)
            if c == "\\" and i + 1 < len(text):
                buf.append(text[i + 1])
                i += 1
            elif c == '"':
                quoted = False
        elif c == '"':
            quoted = True
            buf.append(c)
        elif c in _OPEN:
            stack.append(_OPEN[c])
            buf.append(c)
        elif stack and c == stack[-1]:
            stack.pop()
            buf.append(c)
        elif not stack and text.startswith(sep, i):
            out.append("".join(buf))
            buf = []
            i += len(sep)
            continue
        else:
            buf.append(c)
        i += 1
    out.append("".join(buf))
    return out


def parse_kv_list(text: str, fieldname: str = "value") -> dict:
    out: dict = {}
    for item in split_top(text, ","):
        item = item.strip()
        if not item:
            continue
        parts = split_top(item, "=")
        if len(parts) == 1:
            key, val = item, True
        else:
            key, val = parts[0].strip(), parse_value("=".join(parts[1:]))
        if not key:
            raise FieldSyntaxError(fieldname, f"empty key in {item!r}")
        if key in out:
            raise FieldSyntaxError(fieldname, f"repeated key {key!r}")
        out[key] = val
    return out


def format_kv_list(d: dict) -> str:
    parts = []
    for k, v in d.items():
        if v is True and not _needs_quotes(k):
            parts.append(k)
        else:
            parts.append(f"{k}={format_value(v)}")
    return ", ".join(parts)


# --------------------------------------------------------------------------
# chains

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_SYM = re.compile(r"[^\s(),=+\->]+")


def parse_chain(text: str) -> ChainExpr:
    pos = 0
    n = len(text)

    def skip_ws(p):
        while p < n and text[p].isspace():
            p += 1
        return p

    def node(p):
        p = skip_ws(p)
        m = _IDENT.match(text, p)
        if not m:
            raise ChainParseError(p, "expected primitive name")
        name = m.group(0)
        p = skip_ws(m.end())
        if p >= n or text[p] != "(":
            raise ChainParseError(p, "expected '('")
        p = skip_ws(p + 1)
        m = _SYM.match(text, p)
        if not m:
            raise ChainParseError(p, "expected primitive symbol")
        sym = m.group(0)
        if sym not in SYMBOLS:
            raise ChainParseError(p, f"unknown primitive symbol {sym!r}")
        p = skip_ws(m.end())
        # params up to the matching ')'
        depth, q, quoted = 0, p, False
        while q < n:
            c = text[q]
            if quoted:
                if c == "\\":
                    q += 1
                elif c == '"':
                    quoted = False
            elif c == '"':
                quoted = True
            elif c in "([":
                depth += 1
            elif c in ")]":
                if depth == 0:
                    break
                depth -= 1
            q += 1
        if q >= n:
            raise ChainParseError(q, "unterminated '('")
        body = text[p:q]
        params: dict = {}
        tier = None
        if body.strip():
            if not body.lstrip().startswith(","):
                raise ChainParseError(p, "expected ',' before parameters")
            items = split_top(body.lstrip()[1:], ",")
            off = p + body.index(",") + 1
            for item in items:
                if "=" not in item:
                    raise ChainParseError(off, f"parameter {item.strip()!r} is not k=v")
                k, v = item.split("=", 1)
                k = k.strip()
                if not _IDENT.fullmatch(k):
                    raise ChainParseError(off, f"bad parameter name {k!r}")
                if not v.strip():
                    raise ChainParseError(off, f"empty value for {k!r}")
                if k in params or (k == "tier" and tier is not None):
                    raise ChainParseError(off, f"repeated parameter {k!r}")
                val = parse_value(v)
                if k == "tier":
                    if not isinstance(val, int) or isinstance(val, bool):
                        raise ChainParseError(off, "tier must be an integer")
                    tier = val
                else:
                    params[k] = val
                off += len(item) + 1
        return ChainNode(name=name, symbol=sym, params=params, tier=tier), q + 1

    stages = []
    pos = skip_ws(pos)
    if pos >= n:
        raise ChainParseError(0, "empty chain")
    while True:
        stage = []
        while True:
            nd, pos = node(pos)
            stage.append(nd)
            pos = skip_ws(pos)
            if pos < n and text[pos] == "+":
                pos += 1
                continue
            break
        stages.append(tuple(stage))
        if pos >= n:
            break
        if text.startswith("->", pos) or text.startswith("→", pos):
            pos += 2 if text.startswith("->", pos) else 1
            continue
        raise ChainParseError(pos, "expected '->' between nodes")
    return ChainExpr(stages=tuple(stages))


def format_chain(chain: ChainExpr) -> str:
    def fmt(nd: ChainNode):
        items = [nd.symbol]
        items += [f"{k}={format_value(v)}" for k, v in nd.params.items()]
        if nd.tier is not None:
            items.append(f"tier={nd.tier}")
        return f"{nd.name}({', '.join(items)})"
    return " -> ".join(" + ".join(fmt(nd) for nd in st) for st in chain.stages)


# --------------------------------------------------------------------------
# field sub-grammars

def _parse_carrier(v: str) -> str:
    c = v.strip().lower()
    c = CARRIER_ALIASES.get(c, c)
    if c not in CARRIERS:
        raise UnknownCarrier(v.strip())
    return c


def _parse_object(v: str) -> ObjectSpec:
    toks = v.replace(",", " ").split()
    if not toks:
        raise FieldSyntaxError("object", "empty object field")
    try:
        dims = tuple(int(t) for t in re.split(r"[x×]", toks[0]))
    except ValueError:
        raise FieldSyntaxError("object", f"bad dims {toks[0]!r}") from None
    domain = "real_nonneg"
    rest = toks[1:]
    if rest:
        d = DOMAIN_ALIASES.get(rest[0].lower(), rest[0].lower())
        if d in VALUE_DOMAINS:
            domain = d
            rest = rest[1:]
    return ObjectSpec(dims=dims, value_domain=domain, constraints=tuple(rest))


def _format_object(o: ObjectSpec) -> str:
    s = "x".join(str(d) for d in o.dims) + " " + o.value_domain
    if o.constraints:
        s += " " + " ".join(o.constraints)
    return s


def _num(field, key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FieldSyntaxError(field, f"{key} must be numeric, got {v!r}")
    return float(v)


def _parse_noise(v: str) -> NoiseSpec:
    items = parse_kv_list(v, "noise")
    kinds = [k for k, val in items.items() if val is True]
    if len(kinds) != 1:
        raise FieldSyntaxError("noise", "expected exactly one noise kind")
    kind = kinds[0].lower()
    ns = NoiseSpec(kind=kind)
    for k, val in items.items():
        if val is True:
            continue
        if k not in ("sigma", "i0", "snr_db"):
            raise FieldSyntaxError("noise", f"unknown noise key {k!r}")
        setattr(ns, k, _num("noise", k, val))
    return ns


def _format_noise(ns: NoiseSpec) -> str:
    parts = [ns.kind]
    for k in ("i0", "sigma", "snr_db"):
        val = getattr(ns, k)
        if val is not None:
            parts.append(f"{k}={format_value(float(val))}")
    return ", ".join(parts)


_TARGET_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(>=|≥)\s*(\S+)\s*$")


def _parse_target(v: str) -> TargetSpec:
    m = _TARGET_RE.match(v)
    if not m:
        raise FieldSyntaxError("target", "expected '<metric> >= <threshold>'")
    metric = m.group(1).lower()
    if metric == "psnr":
        metric = "psnr_db"
    try:
        thr = float(m.group(3))
    except ValueError:
        raise FieldSyntaxError("target", f"bad threshold {m.group(3)!r}") from None
    return TargetSpec(metric=metric, threshold=thr)


def _parse_calibration(v: str) -> list:
    out = []
    for item in split_top(v, ","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise FieldSyntaxError("calibration", f"expected name=tolerance[@sensitivity], got {item!r}")
        name, rhs = item.split("=", 1)
        tol_s, _, sens_s = rhs.partition("@")
        try:
            tol = float(tol_s)
            sens = float(sens_s) if sens_s.strip() else None
        except ValueError:
            raise FieldSyntaxError("calibration", f"bad number in {item!r}") from None
        out.append(CalibrationEntry(name.strip(), tol, sens))
    return out


def _format_calibration(entries) -> str:
    parts = []
    for e in entries:
        s = f"{e.param_name}={format_value(float(e.tolerance))}"
        if e.sensitivity_db_per_unit is not None:
            s += f"@{format_value(float(e.sensitivity_db_per_unit))}"
        parts.append(s)
    return ", ".join(parts)


# --------------------------------------------------------------------------
# parse / serialize

def parse_spec(text: str) -> SpecDocument:
    """Parse design document text. Raises a SpecParseError subclass on any malformed input."""
    try:
        return _parse(text)
    except SpecParseError:
        raise
    except (ValueError, TypeError, KeyError, IndexError, AttributeError, RecursionError) as exc:
        raise FieldSyntaxError("document", f"unparseable input ({exc.__class__.__name__})") from exc


def _parse(text: str) -> SpecDocument:
    raw: dict = {}
    extra: dict = {}
    sub: dict = {}
    in_block = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line[0] in " \t":
            if not in_block:
                raise FieldSyntaxError("document", f"unexpected indented line {lineno}")
            if not line.startswith("  ") or ":" not in line:
                raise FieldSyntaxError("system_elements", f"bad block line {lineno}")
            k, v = line.strip().split(":", 1)
            k = k.strip()
            if k in sub:
                raise DuplicateField(f"system_elements.{k}", lineno)
            sub[k] = v.strip()
            continue
        in_block = False
        if ":" not in line:
            raise FieldSyntaxError("document", f"line {lineno} is not 'key: value'")
        k, v = line.split(":", 1)
        k = k.strip()
        if not k:
            raise FieldSyntaxError("document", f"empty key on line {lineno}")
        if k in raw or k in extra:
            raise DuplicateField(k, lineno)
        if k == "system_elements":
            if v.strip():
                raise FieldSyntaxError("system_elements", "block header takes no inline value")
            in_block = True
            raw[k] = None
        elif k in FIELDS:
            raw[k] = v.strip()
        else:
            extra[k] = v.strip()
    for name in FIELDS:
        if name not in raw:
            raise MissingField(name)

    modality = raw["modality"]
    if not modality:
        raise FieldSyntaxError("modality", "empty modality")
    se = SystemElements()
    for k, v in sub.items():
        if k == "calibration":
            se.calibration = _parse_calibration(v)
        elif k in ("source", "optics", "detector"):
            setattr(se, k, parse_kv_list(v, f"system_elements.{k}"))
        else:
            se.extra[k] = parse_kv_list(v, f"system_elements.{k}")
    return SpecDocument(
        modality=modality,
        carrier=_parse_carrier(raw["carrier"]),
        geometry=parse_kv_list(raw["geometry"], "geometry"),
        object=_parse_object(raw["object"]),
        forward_model=parse_chain(raw["forward_model"]),
        noise=_parse_noise(raw["noise"]),
        target=_parse_target(raw["target"]),
        system_elements=se,
        extra_fields=extra,
    )


def serialize_spec(doc: SpecDocument) -> str:
    lines = [
        f"modality: {doc.modality}",
        f"carrier: {doc.carrier}",
        f"geometry: {format_kv_list(doc.geometry or {})}".rstrip(),
        f"object: {_format_object(doc.object)}",
        f"forward_model: {format_chain(doc.forward_model)}",
        f"noise: {_format_noise(doc.noise)}",
        f"target: {doc.target.metric} >= {format_value(float(doc.target.threshold))}",
        "system_elements:",
    ]
    se = doc.system_elements or SystemElements()
    for k in ("source", "optics", "detector"):
        d = getattr(se, k)
        if d:
            lines.append(f"  {k}: {format_kv_list(d)}")
    if se.calibration:
        lines.append(f"  calibration: {_format_calibration(se.calibration)}")
    for k, d in se.extra.items():
        lines.append(f"  {k}: {format_kv_list(d)}".rstrip())
    for k, v in doc.extra_fields.items():
        lines.append(f"{k}: {v}".rstrip())
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# validation

def validate_schema(doc: SpecDocument) -> list:
    issues = []

    def bad(f, rule, obs):
        issues.append(SchemaIssue(f, rule, obs))

    present = [f for f in FIELDS if getattr(doc, f) is not None]
    n_fields = len(present) + len(doc.extra_fields)
    if len(present) != len(FIELDS) or doc.extra_fields:
        missing = [f for f in FIELDS if getattr(doc, f) is None]
        bad("document", "exactly 8 top-level fields", {"count": n_fields, "missing": missing,
                                                       "unknown": sorted(doc.extra_fields)})
    if doc.modality is not None and not str(doc.modality).strip():
        bad("modality", "non-empty identifier", doc.modality)
    if doc.carrier is not None and doc.carrier not in CARRIERS:
        bad("carrier", f"one of {CARRIERS}", doc.carrier)
    if doc.object is not None:
        o = doc.object
        if not 1 <= len(o.dims) <= 5:
            bad("object.dims", "between 1 and 5 dimensions", list(o.dims))
        if any((not isinstance(d, int)) or d < 1 for d in o.dims):
            bad("object.dims", "positive integers", list(o.dims))
        if o.value_domain not in VALUE_DOMAINS:
            bad("object.value_domain", f"one of {VALUE_DOMAINS}", o.value_domain)
    if doc.forward_model is not None:
        ch = doc.forward_model
        if not ch.stages or not ch.nodes:
            bad("forward_model", "non-empty chain", "")
        else:
            last = ch.stages[-1]
            if len(last) != 1 or last[0].kind != "D":
                bad("forward_model", "must end in Detect", "+".join(n.kind for n in last))
            for i, st in enumerate(ch.stages):
                if len(st) > 1 and (i + 1 >= len(ch.stages) or len(ch.stages[i + 1]) != 1
                                    or ch.stages[i + 1][0].kind != "Sigma"):
                    bad("forward_model", "parallel branches must merge into a single Sigma", i)
            for nd in ch.nodes:
                if nd.tier is not None and not 0 <= nd.tier <= 3:
                    bad(f"forward_model.{nd.name}.tier", "integer in 0..3", nd.tier)
    if doc.noise is not None:
        ns = doc.noise
        if ns.kind not in NOISE_KINDS:
            bad("noise.kind", f"one of {NOISE_KINDS}", ns.kind)
        if "poisson" in ns.kind and not (ns.i0 is not None and ns.i0 > 0):
            bad("noise.i0", "positive photon scale required with poisson", ns.i0)
        if ns.kind == "gaussian" and ns.sigma is None and ns.snr_db is None:
            bad("noise", "gaussian requires sigma or snr_db", None)
        if ns.sigma is not None and ns.sigma < 0:
            bad("noise.sigma", "sigma >= 0", ns.sigma)
    if doc.target is not None:
        t = doc.target
        if t.metric not in METRICS:
            bad("target.metric", f"one of {METRICS}", t.metric)
        elif t.metric == "psnr_db" and not 0 < t.threshold <= 100:
            bad("target.threshold", "psnr threshold in (0,100]", t.threshold)
        elif t.metric == "ssim" and not 0 < t.threshold <= 1:
            bad("target.threshold", "ssim threshold in (0,1]", t.threshold)
    if doc.system_elements is not None:
        det = doc.system_elements.detector
        rules = {
            "qe": (lambda v: 0 < v <= 1, "fraction in (0,1]"),
            "read_noise_e": (lambda v: v >= 0, "scalar >= 0"),
            "dark_current": (lambda v: v >= 0, "scalar >= 0"),
            "exposure_s": (lambda v: v > 0, "scalar > 0"),
        }
        for k, (ok, rule) in rules.items():
            if k in det:
                v = det[k]
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not ok(v):
                    bad(f"detector.{k}", rule, v)
        for e in doc.system_elements.calibration:
            if not e.tolerance >= 0:
                bad(f"calibration.{e.param_name}", "tolerance >= 0", e.tolerance)
    return issues


def load_spec(path) -> SpecDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())
