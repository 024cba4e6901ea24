"""Typed operator DAG built from a chain expression.

A graph owns one primitive per chain node, bound to its propagated input shape.
Parallel branches (``P + P -> Sigma``) feed a merge node whose input is the sum
of its parents' outputs.
"""
from __future__ import annotations

import copy
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BoundsExceeded,
    CycleDetected,
    GraphError,
    NotAChain,
    NotLinearizable,
    PrimitiveError,
    ShapePropagationError,
    TooLargeForDense,
)
from .primitives import make_primitive
from .specdoc import ChainExpr, ChainNode, ObjectSpec, SpecDocument, is_depth_psf

MAX_NODES = 20
MAX_DEPTH = 10
DENSE_LIMIT = 4096
PROXY_LIMIT = 1024
RANK_RTOL = 1e-10

# geometry keys copied into node params (when absent there) per primitive kind
GEOMETRY_KEYS = {
    "Pi": ("n_angles", "angle_range", "angle_offset"),
    "S": ("acceleration", "fraction", "pattern", "center"),
    "W": ("shift", "shift_axis", "extent"),
    "P": ("distance", "wavelength", "pitch"),
    "R": ("length",),
    "M": ("density", "mask_shift"),
}


@dataclass
class PrimitiveNode:
    id: str
    name: str
    primitive: object
    in_shape: tuple
    out_shape: tuple
    parents: tuple = ()

    @property
    def kind(self):
        return self.primitive.kind

    @property
    def symbol(self):
        return self.primitive.symbol


@dataclass
class OperatorGraph:
    nodes: list
    edges: list
    object_dims: tuple
    measurement_dims: tuple
    value_domain: str = "real_nonneg"
    doc: SpecDocument | None = None
    topo_order: list = field(default_factory=list)

    def __post_init__(self):
        if not self.topo_order:
            order, _ = kahn_order([n.id for n in self.nodes], self.edges)
            self.topo_order = order

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return int(math.prod(self.object_dims))

    @property
    def node_map(self):
        return {nd.id: nd for nd in self.nodes}

    @property
    def sink(self):
        children = {a for a, _ in self.edges}
        sinks = [nd for nd in self.nodes if nd.id not in children]
        return sinks[-1] if sinks else self.nodes[-1]

    def depth(self) -> int:
        """Longest source-to-sink path, counted in nodes."""
        order, residual = kahn_order([n.id for n in self.nodes], self.edges)
        if residual:
            return len(self.nodes) + 1
        parents = {n.id: [a for a, b in self.edges if b == n.id] for n in self.nodes}
        d = {}
        for nid in order:
            d[nid] = 1 + max((d[p] for p in parents[nid]), default=0)
        return max(d.values(), default=0)

    @property
    def is_linear(self) -> bool:
        return all(nd.primitive.is_linear for nd in self.nodes)

    def measurement_count(self) -> float:
        """Effective number of measurements m (entries kept by every S node)."""
        m = float(math.prod(self.measurement_dims))
        for nd in self.nodes:
            if nd.kind == "S":
                m *= nd.primitive.keep_fraction(nd.in_shape)
        return m

    def compression_ratio(self) -> float:
        return self.measurement_count() / self.n

    # ------------------------------------------------------------------
    def _check_order(self):
        if len(self.topo_order) != len(self.nodes):
            raise CycleDetected("graph has a cycle; no evaluation order exists")

    def _inputs(self, nd, vals, x):
        if not nd.parents:
            return x
        acc = vals[nd.parents[0]]
        for p in nd.parents[1:]:
            acc = acc + vals[p]
        return acc

    def activations(self, x):
        """Forward pass keeping every node's input; returns (inputs, outputs)."""
        self._check_order()
        nm = self.node_map
        ins, outs = {}, {}
        for nid in self.topo_order:
            nd = nm[nid]
            ins[nid] = self._inputs(nd, outs, x)
            outs[nid] = nd.primitive.forward(ins[nid])
        return ins, outs

    def forward(self, x):
        x = np.asarray(x)
        if tuple(x.shape) != tuple(self.object_dims):
            raise PrimitiveError(f"object has shape {x.shape}, graph expects {self.object_dims}")
        _, outs = self.activations(x)
        return outs[self.sink.id]

    def jvp(self, x0, v):
        """Directional derivative of the forward map at ``x0``."""
        self._check_order()
        nm = self.node_map
        ins, _ = self.activations(np.asarray(x0)) if not self.is_linear else ({}, {})
        outs = {}
        for nid in self.topo_order:
            nd = nm[nid]
            vin = self._inputs(nd, outs, v)
            if nd.primitive.is_linear:
                outs[nid] = nd.primitive.forward(vin)
            else:
                outs[nid] = nd.primitive.jvp(ins[nid], vin)
        return outs[self.sink.id]

    def adjoint(self, y, x0=None):
        """Reverse-order adjoint; nonlinear nodes use their Jacobian at ``x0``."""
        self._check_order()
        if not self.is_linear and x0 is None:
            raise NotLinearizable("graph has nonlinear nodes; pass a linearization point")
        nm = self.node_map
        ins = self.activations(np.asarray(x0))[0] if not self.is_linear else {}
        grads = {self.sink.id: np.asarray(y)}
        xgrad = None
        for nid in reversed(self.topo_order):
            nd = nm[nid]
            if nid not in grads:
                continue
            g_in = nd.primitive.adjoint(grads[nid], ins.get(nid))
            targets = nd.parents if nd.parents else (None,)
            for p in targets:
                if p is None:
                    xgrad = g_in if xgrad is None else xgrad + g_in
                else:
                    grads[p] = g_in if p not in grads else grads[p] + g_in
        if self.value_domain != "complex" and np.iscomplexobj(xgrad):
            xgrad = xgrad.real  # real objects: adjoint under the real inner product
        return xgrad

    def vjp(self, x0, r):
        """Jᵀr at x0 (for linear graphs simply Aᵀr)."""
        return self.adjoint(r, None if self.is_linear else x0)

    # ------------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "object_dims": list(self.object_dims),
            "measurement_dims": list(self.measurement_dims),
            "nodes": [
                {"id": nd.id, "name": nd.name, "kind": nd.kind, "symbol": nd.symbol,
                 "params": _jsonable(nd.primitive.params), "tier": nd.primitive.tier,
                 "in_dims": list(nd.in_shape), "out_dims": list(nd.out_shape)}
                for nd in self.nodes
            ],
            "edges": [[a, b] for a, b in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return {"array_shape": list(v.shape)}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def kahn_order(node_ids, edges):
    """Kahn's algorithm. Returns (order, residual ids that sit on or behind a cycle)."""
    indeg = {n: 0 for n in node_ids}
    succ = {n: [] for n in node_ids}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    q = deque(n for n in node_ids if indeg[n] == 0)
    order = []
    while q:
        n = q.popleft()
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                q.append(m)
    residual = [n for n in node_ids if n not in set(order)]
    return order, residual


# --------------------------------------------------------------------------
# building

def node_params(nd: ChainNode, doc: SpecDocument | None, reg_params: dict | None = None):
    """Effective params of a chain node: own params, then geometry, then registry defaults."""
    p = dict(reg_params or {})
    if doc is not None and doc.geometry:
        for k in GEOMETRY_KEYS.get(nd.kind, ()):
            if k in doc.geometry:
                p[k] = doc.geometry[k]
    p.update(nd.params)
    if nd.kind == "C" and nd.variant == "z" and not is_depth_psf(p.get("psf")):
        p["psf"] = "diffuser(z)"
    return p


def _registry_params(doc, reg):
    """Per-position default params from the matching registry entry, if any."""
    if reg is None or doc is None or doc.forward_model is None:
        return [None] * len(doc.forward_model.nodes if doc and doc.forward_model else [])
    entry = reg.get(doc.modality) if hasattr(reg, "get") else None
    nodes = doc.forward_model.nodes
    if entry is None or entry.canonical_chain.kinds() != [n.kind for n in nodes]:
        return [None] * len(nodes)
    return [dict(e.params) for e in entry.canonical_chain.nodes]


def build_graph(doc: SpecDocument, reg=None, enforce_bounds=True) -> OperatorGraph:
    """Instantiate primitives and propagate shapes from the object dims."""
    chain: ChainExpr = doc.forward_model
    dims = tuple(int(d) for d in doc.object.dims)
    if len(chain.nodes) == 0:
        raise GraphError("empty chain")
    regp = _registry_params(doc, reg)
    nodes, edges = [], []
    prev_ids: list = []
    prev_shape = dims
    k = 0
    for si, stage in enumerate(chain.stages):
        if len(prev_ids) > 1 and len(stage) > 1:
            raise GraphError(f"stage {si}: two consecutive parallel stages need a merge node")
        stage_ids, stage_shapes = [], []
        for nd in stage:
            nid = f"n{k}"
            params = node_params(nd, doc, regp[k] if k < len(regp) else None)
            if len(prev_ids) > 1:
                shapes = {nodes[int(p[1:])].out_shape for p in prev_ids}
                if len(shapes) != 1:
                    raise ShapePropagationError(nid, f"branch shapes differ: {sorted(shapes)}")
            try:
                prim = make_primitive(nd.kind, params, nd.effective_tier, nd.variant)
                prim.bind(prev_shape)
                out_shape = tuple(prim.out_shape(prev_shape))
            except PrimitiveError as e:
                raise ShapePropagationError(nid, str(e)) from e
            nodes.append(PrimitiveNode(nid, nd.name, prim, tuple(prev_shape), out_shape,
                                       tuple(prev_ids)))
            edges.extend((p, nid) for p in prev_ids)
            stage_ids.append(nid)
            stage_shapes.append(out_shape)
            k += 1
        prev_ids = stage_ids
        prev_shape = stage_shapes[0]
        if len(stage) > 1 and si == len(chain.stages) - 1:
            raise GraphError("a parallel stage must merge into a following node")
    g = OperatorGraph(nodes=nodes, edges=edges, object_dims=dims,
                      measurement_dims=tuple(prev_shape),
                      value_domain=doc.object.value_domain, doc=doc)
    if enforce_bounds:
        check_bounds(g)
    return g


def check_bounds(g: OperatorGraph):
    if len(g.nodes) > MAX_NODES:
        raise BoundsExceeded(f"{len(g.nodes)} nodes > {MAX_NODES}")
    d = g.depth()
    if d > MAX_DEPTH:
        raise BoundsExceeded(f"depth {d} > {MAX_DEPTH}")


def forward(g: OperatorGraph, x):
    return g.forward(x)


def adjoint_graph(g: OperatorGraph, y, x0=None):
    return g.adjoint(y, x0)


def canonical_chain(g: OperatorGraph, ascii=False) -> str:
    """Arrow-joined symbols, parallel branches joined by '+'."""
    if len(g.topo_order) != len(g.nodes):
        raise NotAChain("graph has a cycle")
    nm = g.node_map
    children = {}
    for a, b in g.edges:
        children.setdefault(a, []).append(b)
    for nid, ch in children.items():
        if len(ch) > 1:
            raise NotAChain(f"node {nid} fans out to {len(ch)} children")
    # group by depth level; each level is either one node or a parallel set
    level = {}
    for nid in g.topo_order:
        nd = nm[nid]
        level[nid] = 1 + max((level[p] for p in nd.parents), default=0)
    groups = {}
    for nid in g.topo_order:
        groups.setdefault(level[nid], []).append(nm[nid].symbol)
    arrow = "->" if ascii else "→"
    return arrow.join("+".join(groups[k]) for k in sorted(groups))


# --------------------------------------------------------------------------
# spectra

@dataclass
class SpectralEstimate:
    sigma_max: float
    sigma_min_restricted: float
    condition_number: float
    method: str
    rank: int | None = None
    proxy_dims: tuple | None = None
    linearized: bool = False

    def to_json(self):
        return {"sigma_max": self.sigma_max, "sigma_min_restricted": self.sigma_min_restricted,
                "condition_number": self.condition_number, "method": self.method,
                "rank": self.rank, "proxy_dims": list(self.proxy_dims) if self.proxy_dims else None,
                "linearized": self.linearized}


def linearization_point(g: OperatorGraph):
    return np.full(g.object_dims, 0.5)


def dense_matrix(g: OperatorGraph, x0=None):
    """Materialize the (linearized) operator column by column.

    Complex outputs are split into stacked real and imaginary rows so that the
    real inner product is preserved; complex objects get a second block of
    imaginary basis columns.
    """
    n = g.n
    if n > DENSE_LIMIT:
        raise TooLargeForDense(f"n = {n} > {DENSE_LIMIT}")
    lin = g.is_linear
    if not lin and x0 is None:
        x0 = linearization_point(g)
    bases = [1.0] + ([1j] if g.value_domain == "complex" else [])
    cols = []
    for b in bases:
        for i in range(n):
            e = np.zeros(n, dtype=complex if b == 1j else float)
            e[i] = b
            e = e.reshape(g.object_dims)
            col = g.forward(e) if lin else g.jvp(x0, e)
            cols.append(np.asarray(col).ravel())
    A = np.stack(cols, axis=1)
    if np.iscomplexobj(A):
        A = np.vstack([A.real, A.imag])
    return A


def _power_sigma_max(g, iters=50, rtol=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    x0 = None if g.is_linear else linearization_point(g)
    v = rng.standard_normal(g.object_dims)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        Av = g.forward(v) if x0 is None else g.jvp(x0, v)
        w = g.adjoint(Av, x0)
        w = np.real(w) if g.value_domain != "complex" else w
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0:
            return 0.0
        v = w / lam_new
        if abs(lam_new - lam) <= rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return math.sqrt(lam)


def spectral_from_matrix(A, method="dense_svd"):
    s = np.linalg.svd(A, compute_uv=False)
    smax = float(s[0]) if s.size else 0.0
    if smax == 0:
        return SpectralEstimate(0.0, 0.0, math.inf, method, rank=0)
    keep = s[s > RANK_RTOL * smax]
    smin = float(keep[-1])
    return SpectralEstimate(smax, smin, smax / smin, method, rank=int(keep.size))


def spectral_estimate(g: OperatorGraph, mode="auto", seed=0) -> SpectralEstimate:
    """sigma_max, restricted sigma_min and kappa.

    ``dense_svd`` needs n <= 4096. ``power_iteration`` gets sigma_max from the
    graph itself and sigma_min / kappa from a dense SVD of a downscaled proxy
    built from the same document (flagged through ``proxy_dims``).
    """
    if mode == "auto":
        mode = "dense_svd" if g.n <= DENSE_LIMIT else "power_iteration"
    if mode == "dense_svd":
        est = spectral_from_matrix(dense_matrix(g))
        est.linearized = not g.is_linear
        return est
    smax = _power_sigma_max(g, seed=seed)
    if g.n <= PROXY_LIMIT:
        proxy, pdims = g, None
    elif g.doc is None:
        return SpectralEstimate(smax, float("nan"), float("nan"), "power_iteration",
                                linearized=not g.is_linear)
    else:
        pdoc = downscale_doc(g.doc, PROXY_LIMIT)
        proxy = build_graph(pdoc, None, enforce_bounds=False)
        pdims = proxy.object_dims
    pe = spectral_from_matrix(dense_matrix(proxy))
    # sigma_min at full size is estimated through the proxy's condition number
    kappa = pe.condition_number
    return SpectralEstimate(smax, smax / kappa if kappa else 0.0, kappa, "power_iteration",
                            rank=None, proxy_dims=pdims, linearized=not g.is_linear)


def downscale_doc(doc: SpecDocument, max_n: int) -> SpecDocument:
    """Shrink the spatial dims (and angle counts) so that the object has <= max_n entries."""
    dims = list(doc.object.dims)
    planes = math.prod(dims[2:]) if len(dims) > 2 else 1
    spatial = math.prod(dims[:2]) if len(dims) >= 2 else dims[0]
    f = min(1.0, math.sqrt(max_n / (planes * spatial)))
    new = [max(4, int(d * f)) for d in dims[:2]] + dims[2:]
    while math.prod(new) > max_n and len(new) > 2 and new[-1] > 2:
        new[-1] //= 2
    ratio = new[0] / dims[0]
    geo = dict(doc.geometry or {})
    if isinstance(geo.get("n_angles"), int):
        geo["n_angles"] = max(1, int(round(geo["n_angles"] * ratio)))
    out = copy.deepcopy(doc)
    out.object = replace(doc.object, dims=tuple(new))
    out.geometry = geo
    for nd in out.forward_model.nodes:
        if isinstance(nd.params.get("n_angles"), int):
            nd.params["n_angles"] = max(1, int(round(nd.params["n_angles"] * ratio)))
    return out


def graph_from_chain(chain: ChainExpr | str, dims, value_domain="real_nonneg",
                     geometry=None, enforce_bounds=False) -> OperatorGraph:
    """Convenience builder for tests and studies that have no full document."""
    from .specdoc import NoiseSpec, SystemElements, TargetSpec, parse_chain
    if isinstance(chain, str):
        chain = parse_chain(chain)
    doc = SpecDocument(modality="adhoc", carrier="photon", geometry=dict(geometry or {}),
                       object=ObjectSpec(tuple(dims), value_domain), forward_model=chain,
                       noise=NoiseSpec("gaussian", sigma=0.0),
                       target=TargetSpec("psnr_db", 30.0), system_elements=SystemElements())
    return build_graph(doc, None, enforce_bounds=enforce_bounds)
