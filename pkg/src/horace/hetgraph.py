"""Heterogeneous graphs, metapath views, the JSON graph file and a generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GraphFormatError",
    "EdgeSet",
    "Metapath",
    "HeteroGraph",
    "SemanticView",
    "metapath_adjacency",
    "semantic_views",
    "load_graph",
    "save_graph",
    "graph_to_dict",
    "graph_from_dict",
    "synthetic_hg",
]


class GraphFormatError(ValueError):
    """The graph file or in-memory graph violates the schema."""


@dataclass(frozen=True)
class EdgeSet:
    src_type: str
    dst_type: str
    pairs: np.ndarray  # (m, 2) int64, 0-based ids per type


@dataclass(frozen=True)
class Metapath:
    name: str
    node_types: tuple
    edge_types: tuple

    def __post_init__(self):
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        n = len(self.node_types)
        if n < 3 or n % 2 == 0:
            raise GraphFormatError(
                f"metapath {self.name!r}: node sequence must be odd with length >= 3"
            )
        if len(self.edge_types) != n - 1:
            raise GraphFormatError(
                f"metapath {self.name!r}: expected {n - 1} edge types, got {len(self.edge_types)}"
            )
        if self.node_types != self.node_types[::-1] or self.edge_types != self.edge_types[::-1]:
            raise GraphFormatError(f"metapath {self.name!r}: only palindromic metapaths are supported")


@dataclass
class HeteroGraph:
    """Typed nodes and edges with per-type feature matrices.

    Node ids are 0-based within each type. ``labels`` (optional) holds one
    class id per anchor-type node.
    """

    counts: dict
    features: dict
    edges: dict
    anchor_type: str
    labels: np.ndarray | None = None
    metapaths: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = {str(k): int(v) for k, v in self.counts.items()}
        self.features = {
            t: np.asarray(self.features.get(t, np.zeros((c, 0))), dtype=np.float64).reshape(c, -1)
            for t, c in self.counts.items()
        }
        self.edges = {
            name: EdgeSet(e.src_type, e.dst_type, np.asarray(e.pairs, dtype=np.int64).reshape(-1, 2))
            for name, e in self.edges.items()
        }
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def node_types(self):
        return list(self.counts)

    @property
    def n_anchor(self):
        return self.counts[self.anchor_type]

    @property
    def anchor_features(self):
        return self.features[self.anchor_type]

    def node_type_of(self, global_id):
        """Type of a node addressed by a global id (types laid out in order)."""
        offset = 0
        for t, c in self.counts.items():
            if global_id < offset + c:
                return t
            offset += c
        raise IndexError(f"node {global_id} out of range")

    def edge_type_of(self, name):
        e = self.edges[name]
        return e.src_type, e.dst_type

    def metapath(self, name):
        for p in self.metapaths:
            if p.name == name:
                return p
        raise KeyError(f"unknown metapath {name!r}")

    def validate(self):
        if self.anchor_type not in self.counts:
            raise GraphFormatError(f"anchor type {self.anchor_type!r} is not a node type")
        for t, c in self.counts.items():
            if c < 0:
                raise GraphFormatError(f"negative node count for {t!r}")
            if self.features[t].shape[0] != c:
                raise GraphFormatError(
                    f"feature-dimension mismatch for {t!r}: {self.features[t].shape[0]} rows, {c} nodes"
                )
            if not np.all(np.isfinite(self.features[t])):
                raise GraphFormatError(f"non-finite features for {t!r}")
        for name, e in self.edges.items():
            for role, t in (("src", e.src_type), ("dst", e.dst_type)):
                if t not in self.counts:
                    raise GraphFormatError(f"edge type {name!r}: unknown {role} type {t!r}")
            if len(e.pairs):
                lo = e.pairs.min(axis=0)
                hi = e.pairs.max(axis=0)
                if lo.min() < 0 or hi[0] >= self.counts[e.src_type] or hi[1] >= self.counts[e.dst_type]:
                    raise GraphFormatError(f"edge type {name!r}: dangling endpoint")
        if self.labels is not None and self.labels.shape != (self.n_anchor,):
            raise GraphFormatError(
                f"labels must cover exactly the {self.n_anchor} anchor nodes, got {self.labels.shape}"
            )
        for p in self.metapaths:
            self._check_metapath(p)

    def _check_metapath(self, p):
        if p.node_types[0] != self.anchor_type:
            raise GraphFormatError(f"metapath {p.name!r} must start and end at {self.anchor_type!r}")
        for i, et in enumerate(p.edge_types):
            if et not in self.edges:
                raise GraphFormatError(f"metapath {p.name!r}: unknown edge type {et!r}")
            a, b = p.node_types[i], p.node_types[i + 1]
            if a not in self.counts or b not in self.counts:
                raise GraphFormatError(f"metapath {p.name!r}: unknown node type")
            if self.edge_type_of(et) not in ((a, b), (b, a)):
                raise GraphFormatError(f"metapath {p.name!r}: edge {et!r} does not join {a!r}-{b!r}")

    def biadjacency(self, edge_type, src_type, dst_type):
        """Boolean CSR relation ``src_type x dst_type`` for one edge type, either direction."""
        e = self.edges[edge_type]
        rows, cols = e.pairs[:, 0], e.pairs[:, 1]
        if (e.src_type, e.dst_type) != (src_type, dst_type):
            rows, cols = cols, rows
        shape = (self.counts[src_type], self.counts[dst_type])
        mat = sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=shape)
        mat.data[:] = 1
        return mat


@dataclass(frozen=True)
class SemanticView:
    """Anchor-to-anchor adjacency induced by one metapath (self-loops included)."""

    metapath: Metapath
    adjacency: sp.csr_matrix  # boolean, sorted indices

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def mask(self):
        return self.adjacency.toarray().astype(bool)

    def dense(self):
        return self.adjacency.toarray().astype(np.float64)


def metapath_adjacency(g, p):
    """Binarized product of the metapath's relation chain, plus self-loops."""
    if isinstance(p, str):
        p = g.metapath(p)
    g._check_metapath(p)
    chain = None
    for i, et in enumerate(p.edge_types):
        rel = g.biadjacency(et, p.node_types[i], p.node_types[i + 1])
        chain = rel if chain is None else chain @ rel
        chain.data[:] = 1  # multiplicity is dropped at every hop
    n = g.counts[p.node_types[0]]
    adj = (chain + sp.identity(n, dtype=np.int64, format="csr")).tocsr()
    adj.data[:] = 1
    adj = adj.astype(bool)
    adj.sort_indices()
    adj.eliminate_zeros()
    return SemanticView(p, adj)


def semantic_views(g, names=None):
    paths = g.metapaths if names is None else [g.metapath(n) for n in names]
    if not paths:
        raise GraphFormatError("graph defines no metapaths")
    return [metapath_adjacency(g, p) for p in paths]


# ------------------------------------------------------------------ file format


def graph_to_dict(g):
    edges = []
    for name in sorted(g.edges):
        e = g.edges[name]
        pairs = np.unique(e.pairs, axis=0) if len(e.pairs) else e.pairs
        edges.append(
            {
                "type": name,
                "src_type": e.src_type,
                "dst_type": e.dst_type,
                "pairs": pairs.tolist(),
            }
        )
    doc = {
        "node_types": [
            {"name": t, "count": c, "feature_dim": int(g.features[t].shape[1])}
            for t, c in g.counts.items()
        ],
        "anchor_type": g.anchor_type,
        "features": {t: g.features[t].tolist() for t in g.counts},
        "edges": edges,
        "metapaths": [
            {"name": p.name, "node_types": list(p.node_types), "edge_types": list(p.edge_types)}
            for p in g.metapaths
        ],
    }
    if g.labels is not None:
        doc["labels"] = g.labels.tolist()
    return doc


def graph_from_dict(doc):
    try:
        counts, dims = {}, {}
        for nt in doc["node_types"]:
            counts[nt["name"]] = int(nt["count"])
            dims[nt["name"]] = int(nt.get("feature_dim", 0))
        raw = doc.get("features", {})
        features = {}
        for t, c in counts.items():
            rows = raw.get(t)
            if rows is None or len(rows) == 0:
                if dims[t] and c:
                    raise GraphFormatError(f"missing features for {t!r}")
                features[t] = np.zeros((c, dims[t]))
                continue
            arr = np.asarray(rows, dtype=np.float64)
            if arr.ndim != 2 or arr.shape != (c, dims[t]):
                raise GraphFormatError(
                    f"feature-dimension mismatch for {t!r}: expected ({c}, {dims[t]}), got {arr.shape}"
                )
            features[t] = arr
        edges = {}
        for e in doc.get("edges", []):
            pairs = np.asarray(e.get("pairs", []), dtype=np.int64).reshape(-1, 2)
            edges[e["type"]] = EdgeSet(e["src_type"], e["dst_type"], pairs)
        metapaths = [
            Metapath(m["name"], m["node_types"], m["edge_types"]) for m in doc.get("metapaths", [])
        ]
        anchor = doc["anchor_type"]
        labels = doc.get("labels")
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"parse error: {exc!r}") from None
    return HeteroGraph(counts, features, edges, anchor, labels, metapaths)


def load_graph(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"parse error: {exc}") from None
    return graph_from_dict(doc)


def save_graph(g, path):
    text = json.dumps(graph_to_dict(g), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


# ------------------------------------------------------------------ generator


def synthetic_hg(
    n_anchor=150,
    n_bridge_per_type=(30, 30),
    n_classes=3,
    p_in=0.2,
    p_out=0.02,
    feature_dim=32,
    noise=1.0,
    seed=0,
    anchor_type="paper",
):
    """Planted-partition heterogeneous graph.

    Anchors and bridge nodes get round-robin classes (then shuffled for the
    anchors). Each anchor-bridge pair is linked with probability ``p_in``
    when the classes agree and ``p_out`` otherwise, so every bridge type
    yields one ``anchor-bridge-anchor`` metapath. Features are a per-class
    Gaussian mean plus isotropic noise of std ``noise``.
    """
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if isinstance(n_bridge_per_type, dict):
        bridges = {str(k): int(v) for k, v in n_bridge_per_type.items()}
    else:
        bridges = {f"bridge{i}": int(c) for i, c in enumerate(n_bridge_per_type)}
    if anchor_type in bridges:
        raise ValueError("bridge type names must differ from the anchor type")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_anchor) % n_classes)
    centers = rng.normal(size=(n_classes, feature_dim))
    counts = {anchor_type: n_anchor}
    features = {anchor_type: centers[labels] + noise * rng.normal(size=(n_anchor, feature_dim))}
    edges, metapaths = {}, []
    for t, nb in bridges.items():
        bridge_cls = np.arange(nb) % n_classes
        same = labels[:, None] == bridge_cls[None, :]
        linked = rng.random((n_anchor, nb)) < np.where(same, p_in, p_out)
        counts[t] = nb
        features[t] = centers[bridge_cls] + noise * rng.normal(size=(nb, feature_dim))
        et = f"{anchor_type}-{t}"
        edges[et] = EdgeSet(anchor_type, t, np.argwhere(linked))
        metapaths.append(Metapath(f"{anchor_type}-{t}-{anchor_type}", (anchor_type, t, anchor_type), (et, et)))
    return HeteroGraph(counts, features, edges, anchor_type, labels, metapaths)
