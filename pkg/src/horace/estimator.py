"""scikit-learn style front end: ``HoraceEmbedder().fit(graph).transform(graph)``."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as tn
from .contrast import ContrastConfig, ProjectionHead, total_objective
from .encoder import HeteroEncoder
from .structure import StructureIndex, default_top_t
from .validation import (
    check_graph,
    check_open_unit,
    check_positive,
    check_positive_int,
)

log = logging.getLogger(__name__)


def default_n_synth(n):
    return min(256, max(1, n // 4))


class HoraceEmbedder(TransformerMixin, BaseEstimator):
    """Self-supervised node embeddings for the anchor type of a heterogeneous graph.

    Parameters
    ----------
    metapaths : list of str, optional
        Metapath names to use as semantic views; all of the graph's by default.
    n_heads, dim, att_dim : int
        Attention heads, embedding size and semantic-attention size.
    tau : float
        InfoNCE temperature.
    n_synth : int or "auto"
        Synthesized negatives per anchor and view; "auto" is ``min(256, n // 4)``.
    top_t : int, optional
        Candidate list length; ``max(8, ceil(0.05 n))`` when None.
    alpha : float
        Beta(alpha, alpha) mixing parameter.
    variant : {"pe", "ppr", "sem", "none"}
        Hardness source for the candidate lists; "none" disables synthesis.
    pool : {"candidates", "bank"}
        Where mixup endpoints are drawn from.
    ppr_c, pe_k : float, int
        Restart probability and positional-embedding size of the index.
    lr, epochs, patience, min_delta : training schedule. Training stops early
        once the loss has not improved by ``min_delta`` for ``patience`` epochs
        (``patience=0`` disables early stopping).
    seed : int
        Seeds parameter init, the projection head and mixup draws.

    Attributes
    ----------
    embedding_ : ndarray (n, dim)
        Aggregated embeddings of the training graph after the last update.
    loss_curve_ : list of float
    n_epochs_ : int
    semantic_weights_ : ndarray (|P|,)
    """

    def __init__(
        self,
        metapaths=None,
        n_heads=4,
        dim=64,
        att_dim=128,
        tau=0.5,
        n_synth="auto",
        top_t=None,
        alpha=1.0,
        variant="pe",
        pool="candidates",
        ppr_c=0.15,
        pe_k=8,
        lr=0.005,
        epochs=400,
        patience=50,
        min_delta=1e-4,
        seed=0,
    ):
        self.metapaths = metapaths
        self.n_heads = n_heads
        self.dim = dim
        self.att_dim = att_dim
        self.tau = tau
        self.n_synth = n_synth
        self.top_t = top_t
        self.alpha = alpha
        self.variant = variant
        self.pool = pool
        self.ppr_c = ppr_c
        self.pe_k = pe_k
        self.lr = lr
        self.epochs = epochs
        self.patience = patience
        self.min_delta = min_delta
        self.seed = seed

    def _resolve(self, n):
        n_synth = default_n_synth(n) if self.n_synth == "auto" else check_positive_int(
            self.n_synth, "n_synth", 0
        )
        top_t = default_top_t(n) if self.top_t is None else check_positive_int(self.top_t, "top_t", 2)
        cfg = ContrastConfig(
            tau=check_positive(self.tau, "tau"),
            n_synth=n_synth,
            variant=str(self.variant),
            alpha=check_positive(self.alpha, "alpha"),
            top_t=min(top_t, n - 1),
            pool=self.pool,
        )
        check_open_unit(self.ppr_c, "ppr_c")
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.patience, "patience", 0)
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        return cfg

    def _build_index(self, views, cfg):
        if cfg.variant not in ("pe", "ppr") or not cfg.synthesizes or cfg.pool == "bank":
            return None, None
        structure = [
            StructureIndex(v, cfg.variant, c=self.ppr_c, k=self.pe_k) for v in views
        ]
        return structure, [s.candidates(cfg.top_t).lists for s in structure]

    def _initialize(self, X):
        graph, views = check_graph(X, self.metapaths)
        cfg = self._resolve(graph.n_anchor)
        init_ss, head_ss, mix_ss = np.random.SeedSequence(self.seed).spawn(3)
        feats = graph.anchor_features
        self.encoder_ = HeteroEncoder(
            len(views), feats.shape[1], self.n_heads, self.dim, self.att_dim,
            rng=np.random.default_rng(init_ss),
        )
        self.head_ = ProjectionHead(self.dim, rng=np.random.default_rng(head_ss))
        self.contrast_config_ = cfg
        self.metapath_names_ = [v.metapath.name for v in views]
        self.n_features_in_ = feats.shape[1]
        self.loss_curve_ = []
        self.n_epochs_ = 0
        return views, feats, np.random.default_rng(mix_ss)

    def _finish(self, views, feats):
        with tn.no_grad():
            out = self.encoder_([v.mask() for v in views], feats)
        self.embedding_ = out.H.numpy()
        self.view_embeddings_ = [h.numpy() for h in out.views]
        self.semantic_weights_ = out.beta.numpy()
        return self

    def fit(self, X, y=None):
        """Train on graph ``X``. ``y`` is ignored (labels are never used)."""
        views, feats, mix_rng = self._initialize(X)
        cfg = self.contrast_config_
        masks = [v.mask() for v in views]
        # built once from structure only, before any update
        self.structure_, self.candidates_ = self._build_index(views, cfg)
        opt = tn.Adam(self.parameters(), lr=self.lr)

        best, stale = np.inf, 0
        for epoch in range(self.epochs):
            opt.zero_grad()
            out = self.encoder_(masks, feats)
            loss = total_objective(out, self.head_, cfg, self.candidates_, mix_rng)
            value = loss.item()
            self.loss_curve_.append(value)
            tn.backward(loss)
            opt.step()
            if value < best - self.min_delta:
                best, stale = value, 0
            else:
                stale += 1
            if self.patience and stale >= self.patience:
                log.info("early stop at epoch %d (loss %.6f)", epoch + 1, value)
                break
        self.n_epochs_ = len(self.loss_curve_)
        return self._finish(views, feats)

    def parameters(self):
        return self.encoder_.parameters() + self.head_.parameters()

    def encode(self, X):
        """Forward pass of the fitted encoder on a graph with the same schema."""
        check_is_fitted(self, "encoder_")
        graph, views = check_graph(X, self.metapath_names_)
        if graph.anchor_features.shape[1] != self.n_features_in_:
            raise ValueError(
                f"graph has {graph.anchor_features.shape[1]} features, model expects {self.n_features_in_}"
            )
        with tn.no_grad():
            return self.encoder_([v.mask() for v in views], graph.anchor_features)

    def transform(self, X):
        return self.encode(X).H.numpy()

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).embedding_

    def state_dict(self):
        check_is_fitted(self, "encoder_")
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state):
        check_is_fitted(self, "encoder_")
        for p in self.parameters():
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{p.name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()
        return self

    def init_for(self, graph):
        """Allocate untrained parameters for ``graph``, e.g. before loading a checkpoint."""
        views, feats, _ = self._initialize(graph)
        return self._finish(views, feats)
