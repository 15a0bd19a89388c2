"""Structural hardness of negatives: personalized PageRank and Laplacian PE.

Everything here reads graph structure only, so an index can be built once
before training and shared read-only afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .hetgraph import SemanticView

__all__ = [
    "ConvergenceError",
    "PPRIndex",
    "LaplacianPE",
    "CandidateIndex",
    "StructureIndex",
    "ppr",
    "ppr_exact",
    "laplacian_pe",
    "hardness",
    "rank_candidates",
    "build_candidates",
    "default_top_t",
]

VARIANTS = ("ppr", "pe")


class ConvergenceError(RuntimeError):
    pass


def _dense(view):
    if isinstance(view, SemanticView):
        return view.dense()
    a = np.asarray(view, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    return a


def _random_walk(a):
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("every node needs at least one out-neighbor")
    return a / deg[:, None]


@dataclass(frozen=True)
class PPRIndex:
    """``scores[v]`` is the PPR vector of source ``v``."""

    scores: np.ndarray
    c: float
    iterations: int
    residuals: np.ndarray  # L1 fixed-point residual per source


def ppr(view, c=0.15, tol=1e-10, max_iter=10_000):
    """Personalized PageRank for every source by synchronous power iteration.

    Iterates ``s <- (1 - c) P^T s + c e_v`` with ``P`` the row-normalized
    adjacency until every source's L1 change drops below ``tol``.
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"c must lie in (0, 1), got {c}")
    a = _dense(view)
    pt = _random_walk(a).T
    n = a.shape[0]
    restart = c * np.eye(n)
    s = np.eye(n)  # column v holds s_v
    for it in range(1, max_iter + 1):
        nxt = (1.0 - c) * (pt @ s) + restart
        change = np.abs(nxt - s).sum(axis=0).max()
        s = nxt
        if change < tol:
            break
    else:
        raise ConvergenceError(f"PPR did not converge in {max_iter} iterations (last change {change:.3g})")
    resid = np.abs(s - ((1.0 - c) * (pt @ s) + restart)).sum(axis=0)
    return PPRIndex(scores=np.ascontiguousarray(s.T), c=c, iterations=it, residuals=resid)


def ppr_exact(view, c=0.15):
    """Direct solve of ``(I - (1 - c) P^T) S = c I``; rows are sources."""
    a = _dense(view)
    n = a.shape[0]
    s = np.linalg.solve(np.eye(n) - (1.0 - c) * _random_walk(a).T, c * np.eye(n))
    return s.T


@dataclass(frozen=True)
class LaplacianPE:
    vectors: np.ndarray  # (n, k), one row per node
    eigenvalues: np.ndarray  # (k,)
    n_components: int


def laplacian_pe(view, k=8):
    """The ``k`` smallest non-trivial eigenvectors of ``I - D^-1/2 A D^-1/2``.

    One trivial (zero) eigenpair per connected component is dropped. Each
    column is sign-fixed so that its largest-magnitude entry is positive.
    """
    a = _dense(view)
    n = a.shape[0]
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("laplacian_pe: isolated node without self-loop")
    n_comp, _ = connected_components(a != 0, directed=False)
    if k < 1 or k > n - n_comp:
        raise ValueError(f"k={k} exceeds the {n - n_comp} available non-trivial eigenpairs")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    vals, vecs = scipy.linalg.eigh(lap, subset_by_index=[n_comp, n_comp + k - 1])
    pick = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pick, np.arange(k)])
    signs[signs == 0] = 1.0
    return LaplacianPE(vectors=vecs * signs, eigenvalues=vals, n_components=n_comp)


@dataclass(frozen=True)
class CandidateIndex:
    """``lists[v]`` are the top-``T`` hardest negatives of anchor ``v``."""

    lists: np.ndarray  # (n, min(T, n - 1)) int64
    top_t: int


def default_top_t(n):
    return min(max(8, math.ceil(0.05 * n)), n - 1)


def rank_candidates(scores, top_t):
    """Row-wise descending ranking of ``scores`` excluding the diagonal.

    Ties go to the lower node id.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if top_t < 2:
        raise ValueError("T must be >= 2 so that mixup has pairs to draw")
    width = min(top_t, n - 1)
    key = -scores.copy()
    np.fill_diagonal(key, np.inf)  # anchor sorts last
    ids = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((ids, key), axis=-1)
    return order[:, :width].astype(np.int64)


class StructureIndex:
    """Per-view hardness table for one variant (``"ppr"`` or ``"pe"``)."""

    def __init__(self, view, variant="pe", c=0.15, k=8, tol=1e-10, max_iter=10_000):
        variant = variant.lower()
        if variant not in VARIANTS:
            raise ValueError(f"unknown structural variant {variant!r}")
        self.variant = variant
        self.view = view
        if variant == "ppr":
            self.ppr = ppr(view, c=c, tol=tol, max_iter=max_iter)
            self.pe = None
            self.table = self.ppr.scores
        else:
            self.ppr = None
            self.pe = laplacian_pe(view, k=k)
            s = self.pe.vectors
            self.table = s @ s.T

    @property
    def n_nodes(self):
        return self.table.shape[0]

    def hardness(self, i, anchor):
        if i == anchor:
            raise ValueError("hardness is undefined for the anchor itself")
        return float(self.table[anchor, i])

    def candidates(self, top_t):
        return CandidateIndex(rank_candidates(self.table, top_t), top_t)


def hardness(i, anchor, view, variant="pe", **kw):
    index = view if isinstance(view, StructureIndex) else StructureIndex(view, variant, **kw)
    return index.hardness(i, anchor)


def build_candidates(view, variant="pe", top_t=None, **kw):
    index = view if isinstance(view, StructureIndex) else StructureIndex(view, variant, **kw)
    if top_t is None:
        top_t = default_top_t(index.n_nodes)
    return index.candidates(top_t)
