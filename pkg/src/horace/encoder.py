"""Metapath attention encoder with semantic-level aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor

__all__ = [
    "SemanticLayerParams",
    "AggregationParams",
    "EncoderOutput",
    "semantic_view_encode",
    "aggregate_semantics",
    "HeteroEncoder",
    "glorot",
]


def glorot(rng, shape, fan_in, fan_out, name=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


@dataclass
class SemanticLayerParams:
    """Per-head projections ``weights[k]`` (d_head x in_dim) and attention
    vectors ``attn[k]`` (2 * d_head) for one metapath."""

    weights: list
    attn: list
    slope: float = 0.2

    @property
    def n_heads(self):
        return len(self.weights)

    def tensors(self):
        return [*self.weights, *self.attn]


@dataclass
class AggregationParams:
    q: Tensor  # (d_m,)
    W: Tensor  # (d_m, d)
    b: Tensor  # (d_m,)

    def tensors(self):
        return [self.q, self.W, self.b]


@dataclass
class EncoderOutput:
    views: list  # H^p tensors, (n, d) each
    H: Tensor  # aggregated, (n, d)
    beta: Tensor  # (|P|,)


def semantic_view_encode(mask, X, params, return_attention=False):
    """Multi-head masked attention over one metapath view.

    Attention logits are ``leaky_relu(a_self . Wx_i + a_nbr . Wx_j)`` over the
    neighbors of ``i``; messages are aggregated then passed through elu, and
    the heads are concatenated. ``mask`` may be a boolean array or a
    ``SemanticView``.
    """
    if hasattr(mask, "mask"):
        mask = mask.mask()
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    if mask.shape != (n, n):
        raise ValueError(f"mask must be square, got {mask.shape}")
    X = tn.tensor(X)
    if X.shape[0] != n:
        raise ValueError(f"features have {X.shape[0]} rows but the view has {n} nodes")
    heads, alphas = [], []
    for W, a in zip(params.weights, params.attn):
        z = tn.matmul(X, W.T)  # (n, d_head)
        dh = z.shape[1]
        s_self = tn.matmul(z, a[:dh])
        s_nbr = tn.matmul(z, a[dh:])
        logits = tn.leaky_relu(
            tn.reshape(s_self, (n, 1)) + tn.reshape(s_nbr, (1, n)), params.slope
        )
        alpha = tn.masked_softmax(logits, mask)
        heads.append(tn.elu(tn.matmul(alpha, z)))
        alphas.append(alpha)
    out = heads[0] if len(heads) == 1 else tn.concat(heads, axis=-1)
    return (out, alphas) if return_attention else out


def aggregate_semantics(views, params):
    """Softmax-weighted sum of views; weights from mean tanh scoring."""
    if not views:
        raise ValueError("need at least one view")
    shape = views[0].shape
    for h in views:
        if h.shape != shape:
            raise ValueError(f"view shapes differ: {h.shape} vs {shape}")
    scores = []
    for h in views:
        t = tn.tanh(tn.matmul(h, params.W.T) + params.b)
        scores.append(tn.reshape(tn.mean(tn.matmul(t, params.q)), (1,)))
    beta = tn.softmax(tn.concat(scores, axis=-1))
    H = None
    for p, h in enumerate(views):
        term = beta[p] * h
        H = term if H is None else H + term
    return H, beta


class HeteroEncoder:
    """Parameters and forward pass for ``n_views`` metapaths."""

    def __init__(self, n_views, in_dim, n_heads=4, dim=64, att_dim=128, slope=0.2, rng=None):
        if dim % n_heads:
            raise ValueError(f"dim={dim} is not divisible by n_heads={n_heads}")
        if att_dim <= 0:
            raise ValueError("att_dim must be positive")
        rng = np.random.default_rng(rng)
        d_head = dim // n_heads
        self.dim = dim
        self.layers = []
        for p in range(n_views):
            weights = [
                glorot(rng, (d_head, in_dim), in_dim, d_head, name=f"view{p}.W{k}")
                for k in range(n_heads)
            ]
            attn = [
                glorot(rng, (2 * d_head,), 2 * d_head, 1, name=f"view{p}.a{k}")
                for k in range(n_heads)
            ]
            self.layers.append(SemanticLayerParams(weights, attn, slope))
        self.aggregation = AggregationParams(
            q=glorot(rng, (att_dim,), att_dim, 1, name="agg.q"),
            W=glorot(rng, (att_dim, dim), dim, att_dim, name="agg.W"),
            b=Tensor(np.zeros(att_dim), requires_grad=True, name="agg.b"),
        )

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.tensors())
        out.extend(self.aggregation.tensors())
        return out

    def __call__(self, masks, X):
        if len(masks) != len(self.layers):
            raise ValueError(f"encoder has {len(self.layers)} views, got {len(masks)} masks")
        views = [semantic_view_encode(m, X, layer) for m, layer in zip(masks, self.layers)]
        H, beta = aggregate_semantics(views, self.aggregation)
        return EncoderOutput(views, H, beta)
