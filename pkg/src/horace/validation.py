"""Argument checks shared by the estimator, pipeline and CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .hetgraph import HeteroGraph, semantic_views


def check_graph(graph, metapaths=None):
    """Return ``(graph, views)`` for a graph with at least one usable metapath."""
    if not isinstance(graph, HeteroGraph):
        raise TypeError(f"expected a HeteroGraph, got {type(graph).__name__}")
    if graph.n_anchor < 2:
        raise ValueError("need at least 2 anchor nodes")
    if graph.anchor_features.shape[1] == 0:
        raise ValueError(f"anchor type {graph.anchor_type!r} has no features")
    return graph, semantic_views(graph, metapaths)


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_open_unit(value, name):
    if not 0.0 < float(value) < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)


def check_positive(value, name):
    if not float(value) > 0.0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return float(value)


def check_embeddings(H, labels):
    H = np.asarray(H, dtype=np.float64)
    labels = np.asarray(labels)
    if H.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got shape {H.shape}")
    if labels.shape != (H.shape[0],):
        raise ValueError(f"labels must have shape ({H.shape[0]},), got {labels.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("embeddings contain non-finite values")
    return H, labels
