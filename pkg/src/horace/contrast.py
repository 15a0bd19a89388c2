"""View-to-aggregation InfoNCE with mixup-synthesized hard negatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as tn
from .encoder import glorot
from .structure import rank_candidates
from .tensor import Tensor

__all__ = [
    "VARIANTS",
    "ContrastConfig",
    "ProjectionHead",
    "critic",
    "NegativeBank",
    "negative_bank",
    "MixupPlan",
    "sample_mixup",
    "synthesize_negatives",
    "info_nce",
    "total_objective",
    "make_plans",
]

VARIANTS = ("none", "sem", "pe", "ppr")
POOLS = ("candidates", "bank")


@dataclass
class ContrastConfig:
    """``variant``: ``none`` drops synthesis, ``sem`` ranks candidates by
    current embedding inner products, ``pe``/``ppr`` use a structure index.
    ``pool`` picks mixup endpoints from the top-T list or the whole bank."""

    tau: float = 0.5
    n_synth: int = 0
    variant: str = "pe"
    alpha: float = 1.0
    top_t: int = 8
    pool: str = "candidates"

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.n_synth < 0:
            raise ValueError(f"n_synth must be >= 0, got {self.n_synth}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pool not in POOLS:
            raise ValueError(f"unknown mixup pool {self.pool!r}; expected one of {POOLS}")

    @property
    def synthesizes(self):
        return self.variant != "none" and self.n_synth > 0


class ProjectionHead:
    """Two affine maps with elu in between, ``d -> d -> d``."""

    def __init__(self, dim, rng=None):
        rng = np.random.default_rng(rng)
        self.W1 = glorot(rng, (dim, dim), dim, dim, name="head.W1")
        self.b1 = Tensor(np.zeros(dim), requires_grad=True, name="head.b1")
        self.W2 = glorot(rng, (dim, dim), dim, dim, name="head.W2")
        self.b2 = Tensor(np.zeros(dim), requires_grad=True, name="head.b2")

    @classmethod
    def identity(cls, dim):
        head = cls(dim, rng=0)
        head.W1.data = np.eye(dim)
        head.W2.data = np.eye(dim)
        return head

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, h):
        hidden = tn.elu(tn.matmul(h, self.W1.T) + self.b1)
        return tn.matmul(hidden, self.W2.T) + self.b2


def _project(h, head):
    h = tn.tensor(h)
    return h if head is None else head(h)


def critic(u, v, head=None):
    """Cosine similarity of projected embeddings (``head=None`` projects by identity)."""
    gu = _project(tn.reshape(tn.tensor(u), (1, -1)), head)
    gv = _project(tn.reshape(tn.tensor(v), (1, -1)), head)
    if gu.shape != gv.shape:
        raise ValueError(f"critic: shape mismatch {gu.shape} vs {gv.shape}")
    return tn.sum(tn.l2_normalize(gu) * tn.l2_normalize(gv))


@dataclass
class NegativeBank:
    intra: Tensor  # same-kind embeddings of other nodes
    inter: Tensor  # other-kind embeddings of other nodes
    synth: Tensor | None

    @property
    def size(self):
        m = 0 if self.synth is None else self.synth.shape[0]
        return self.intra.shape[0] + self.inter.shape[0] + m

    def stacked(self):
        parts = [self.intra, self.inter]
        if self.synth is not None and self.synth.shape[0]:
            parts.append(self.synth)
        return tn.concat(parts, axis=0)


def negative_bank(i, view_emb, agg_emb, synth=None):
    """Negatives of anchor ``i``: every other node in both embedding sets plus ``synth``."""
    view_emb, agg_emb = tn.tensor(view_emb), tn.tensor(agg_emb)
    others = np.delete(np.arange(view_emb.shape[0]), i)
    return NegativeBank(view_emb[others], agg_emb[others], None if synth is None else tn.tensor(synth))


@dataclass(frozen=True)
class MixupPlan:
    """Endpoint ids into the pool ``[H^p; H]`` (2n rows) and mixing weights."""

    first: np.ndarray  # (n, M)
    second: np.ndarray  # (n, M)
    weights: np.ndarray  # (n, M), weight on ``first``

    @property
    def n_synth(self):
        return self.first.shape[1]

    def mixing_matrix(self):
        """Sparse (n*M, 2n) map from the pool to the synthesized rows."""
        n, m = self.first.shape
        rows = np.arange(n * m)
        lam = self.weights.reshape(-1)
        return sp.csr_matrix(
            (
                np.concatenate([lam, 1.0 - lam]),
                (np.concatenate([rows, rows]), np.concatenate([self.first.reshape(-1), self.second.reshape(-1)])),
            ),
            shape=(n * m, 2 * n),
        )


def _two_distinct(rng, size, shape):
    a = rng.integers(0, size, shape)
    b = rng.integers(0, size - 1, shape)
    return a, b + (b >= a)


def sample_mixup(candidates, n_synth, alpha, rng, pool="candidates", n_nodes=None):
    """Draw ``n_synth`` endpoint pairs and Beta(alpha, alpha) weights per anchor.

    ``candidates`` is the (n, L) top-T table. With ``pool="bank"`` the pairs
    come from all 2(n-1) bank members of each anchor instead.
    """
    if pool == "candidates":
        lists = np.asarray(candidates)
        n, width = lists.shape
        if width < 2:
            raise ValueError("mixup needs at least 2 candidates per anchor")
        ia, ib = _two_distinct(rng, width, (n, n_synth))
        rows = np.arange(n)[:, None]
        first, second = lists[rows, ia], lists[rows, ib]
    elif pool == "bank":
        n = n_nodes if n_nodes is not None else np.asarray(candidates).shape[0]
        if n < 2:
            raise ValueError("bank mixup needs at least 2 nodes")
        ia, ib = _two_distinct(rng, 2 * (n - 1), (n, n_synth))
        rows = np.arange(n)[:, None]
        first, second = _bank_slot_to_id(ia, rows, n), _bank_slot_to_id(ib, rows, n)
    else:
        raise ValueError(f"unknown mixup pool {pool!r}")
    weights = rng.beta(alpha, alpha, (n, n_synth))
    return MixupPlan(first.astype(np.int64), second.astype(np.int64), weights)


def _bank_slot_to_id(slot, anchor, n):
    # slots [0, n-1) are view rows j != i, slots [n-1, 2n-2) aggregated rows j != i
    view_side = slot < n - 1
    j = np.where(view_side, slot, slot - (n - 1))
    j = j + (j >= anchor)
    return np.where(view_side, j, n + j)


def synthesize_negatives(candidates, embeddings, n_synth, alpha=1.0, rng=None, weights=None):
    """Convex mixes of two distinct candidates for one anchor.

    ``weights`` overrides the Beta draws (one per synthesized sample).
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size < 2:
        raise ValueError("mixup needs at least 2 candidates")
    if n_synth < 0:
        raise ValueError("n_synth must be >= 0")
    emb = tn.tensor(embeddings)
    rng = np.random.default_rng(rng)
    ia, ib = _two_distinct(rng, candidates.size, n_synth)
    lam = rng.beta(alpha, alpha, n_synth) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=np.float64), (n_synth,)
    )
    lam = lam[:, None]
    return lam * emb[candidates[ia]] + (1.0 - lam) * emb[candidates[ib]]


def info_nce(anchor, positive, bank, tau, head=None):
    """``-log(e^{s+/tau} / (e^{s+/tau} + sum_neg e^{s/tau}))`` with cosine critic."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    negs = bank.stacked() if isinstance(bank, NegativeBank) else tn.tensor(bank)
    if negs.shape[0] == 0:
        raise ValueError("empty negative bank")
    za = tn.l2_normalize(_project(tn.reshape(tn.tensor(anchor), (1, -1)), head))
    zp = tn.l2_normalize(_project(tn.reshape(tn.tensor(positive), (1, -1)), head))
    zn = tn.l2_normalize(_project(negs, head))
    pos = tn.sum(za * zp, axis=-1)  # (1,)
    neg = tn.reshape(tn.matmul(zn, tn.reshape(za, (-1,))), (1, -1))
    logits = tn.concat([tn.reshape(pos, (1, 1)), neg], axis=-1) / tau
    return tn.sum(tn.logsumexp(logits) - pos / tau)


def _direction_loss(z_anchor, z_pos, z_same, z_synth, tau):
    """Vectorized InfoNCE for all anchors: positives on the diagonal of
    ``z_anchor @ z_pos.T``; ``z_same`` supplies the other same-kind rows."""
    n = z_anchor.shape[0]
    cross = tn.matmul(z_anchor, z_pos.T)  # row i: positive at i, other-kind negatives elsewhere
    same = tn.matmul(z_anchor, z_same.T)
    parts, masks = [cross, same], [np.ones((n, n), bool), ~np.eye(n, dtype=bool)]
    if z_synth is not None:
        d = z_anchor.shape[1]
        syn = tn.sum(tn.reshape(z_anchor, (n, 1, d)) * z_synth, axis=-1)  # (n, M)
        parts.append(syn)
        masks.append(np.ones(syn.shape, bool))
    logits = tn.concat(parts, axis=-1) / tau
    pos = tn.sum(z_anchor * z_pos, axis=-1) / tau
    return tn.logsumexp(logits, mask=np.concatenate(masks, axis=-1)) - pos


def total_objective(enc_out, head, cfg, candidates=None, rng=None, plans=None):
    """Mean over anchors and views of the two-direction InfoNCE average.

    ``candidates`` holds one (n, L) top-T table per view (ignored for
    ``none``; derived from current embeddings for ``sem``). ``plans``
    fixes the mixup draws; otherwise they are sampled from ``rng``.
    """
    views, H = enc_out.views, enc_out.H
    n, d = H.shape
    n_views = len(views)
    if plans is None:
        plans = make_plans(enc_out, cfg, candidates, rng)
    z_agg = tn.l2_normalize(head(H))
    total = None
    for p, hp in enumerate(views):
        z_view = tn.l2_normalize(head(hp))
        z_synth = None
        plan = plans[p]
        if plan is not None and plan.n_synth:
            pool = tn.concat([hp, H], axis=0)
            mixed = tn.sparse_matmul(plan.mixing_matrix(), pool)
            z_synth = tn.reshape(tn.l2_normalize(head(mixed)), (n, plan.n_synth, d))
        forward = _direction_loss(z_view, z_agg, z_view, z_synth, cfg.tau)
        reverse = _direction_loss(z_agg, z_view, z_agg, z_synth, cfg.tau)
        term = tn.sum(forward + reverse)
        total = term if total is None else total + term
    return total / (2.0 * n * n_views)


def make_plans(enc_out, cfg, candidates=None, rng=None):
    """Mixup draws for every view according to ``cfg``."""
    n_views = len(enc_out.views)
    if not cfg.synthesizes:
        return [None] * n_views
    rng = np.random.default_rng(rng)
    n = enc_out.H.shape[0]
    plans = []
    for p in range(n_views):
        if cfg.pool == "bank":
            plans.append(sample_mixup(None, cfg.n_synth, cfg.alpha, rng, pool="bank", n_nodes=n))
            continue
        if cfg.variant == "sem":
            h = enc_out.views[p].data  # ranking is not differentiated
            lists = rank_candidates(h @ h.T, cfg.top_t)
        else:
            if candidates is None:
                raise ValueError(f"variant {cfg.variant!r} needs structural candidate lists")
            lists = getattr(candidates[p], "lists", candidates[p])
        plans.append(sample_mixup(lists, cfg.n_synth, cfg.alpha, rng))
    return plans
