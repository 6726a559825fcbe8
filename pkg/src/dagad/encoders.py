"""Single-layer graph encoders: GCN and multi-head GAT.

Both map ``(X, graph) -> H`` with ``H = ReLU(...)`` of width ``d``. Parameters
are :class:`~dagad.autodiff.Var` leaves so gradients accumulate on them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ConfigError, NumericalError


@dataclass
class GcnLayerParams:
    weight: ad.Var

    kind = "gcn"

    def named_tensors(self):
        return {"weight": self.weight}

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass
class GatLayerParams:
    weight: ad.Var  # k_in x d, head h owns columns [h*d', (h+1)*d')
    attention: ad.Var  # heads x 2d'; first half scores the centre node, second the neighbour
    heads: int = 8
    leaky_slope: float = 0.2

    kind = "gat"

    def named_tensors(self):
        return {"weight": self.weight, "attention": self.attention}

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass
class EncoderOutput:
    representations: ad.Var
    attention: np.ndarray | None = None  # nnz x heads, GAT only

    @property
    def value(self):
        return self.representations.value


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    # keep values on the f32 grid so checkpoints round-trip exactly
    w = rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
    return w.astype(np.float32).astype(np.float64)


def init_params(kind, k_in, d, heads=8, seed=0, leaky_slope=0.2):
    """Glorot-uniform parameters, deterministic per seed."""
    if k_in < 1 or d < 1:
        raise ConfigError(f"invalid encoder shape k_in={k_in}, d={d}")
    rng = np.random.default_rng([int(seed), 0x454E43])
    if kind == "gcn":
        return GcnLayerParams(ad.param(glorot(rng, k_in, d), "weight"))
    if kind == "gat":
        if heads < 1 or d % heads:
            raise ConfigError(f"heads={heads} must divide d={d}")
        per = d // heads
        w = glorot(rng, k_in, per, shape=(k_in, d))
        a = glorot(rng, 2 * per, 1, shape=(heads, 2 * per))
        return GatLayerParams(ad.param(w, "weight"), ad.param(a, "attention"), heads, leaky_slope)
    raise ConfigError(f"unknown encoder kind {kind!r}")


def _csr_triple(propagation):
    s = sp.csr_matrix(propagation)
    s.sort_indices()
    return (s.indptr.astype(np.int64), s.indices.astype(np.int64), s.data.astype(np.float64))


def propagate(attributes, propagation):
    """``S @ X`` for a constant attribute matrix (cacheable across epochs)."""
    x = np.asarray(attributes, dtype=np.float64)
    return ad.spmm(_csr_triple(propagation), x).value


def _check(h):
    if not np.isfinite(h.value).all():
        raise NumericalError("encoder produced non-finite representations")
    return h


def gcn_forward(attributes, propagation, params, propagated=None):
    """``H = ReLU(S X W)``.

    ``propagated`` may carry a precomputed ``S X``; otherwise ``attributes``
    may be either a plain array (constant) or a Var.
    """
    if propagated is not None:
        sx = ad.const(propagated)
    elif isinstance(attributes, ad.Var):
        sx = ad.spmm(_csr_triple(propagation), attributes)
    else:
        sx = ad.const(propagate(attributes, propagation))
    rows_ok = propagation is None or sx.shape[0] == propagation.shape[0]
    if not rows_ok or sx.shape[1] != params.in_dim:
        raise ValueError(f"shape mismatch: features {sx.shape}, weight {params.weight.shape}")
    return EncoderOutput(_check(ad.relu(ad.matmul(sx, params.weight))))


def gat_forward(attributes, graph, params, csr=None):
    """Multi-head attention over each closed neighbourhood, heads concatenated, then ReLU."""
    x = ad.const(attributes if isinstance(attributes, ad.Var)
                 else np.asarray(attributes, dtype=np.float64))
    n = graph.num_nodes
    if x.shape != (n, params.in_dim):
        raise ValueError(f"shape mismatch: features {x.shape}, expected ({n}, {params.in_dim})")
    heads = params.heads
    per = params.out_dim // heads
    indptr, indices = csr if csr is not None else graph.closed_csr()
    z = ad.reshape(ad.matmul(x, params.weight), (n, heads, per))
    a = params.attention
    a_self = _cols(a, 0, per)
    a_nb = _cols(a, per, 2 * per)
    s_self = ad.head_scores(z, a_self)
    s_nb = ad.head_scores(z, a_nb)
    agg, alpha = ad.gat_attention((indptr, indices), s_self, s_nb, z, params.leaky_slope)
    h = ad.relu(ad.reshape(agg, (n, heads * per)))
    return EncoderOutput(_check(h), alpha)


def _cols(a, lo, hi):
    def back(g):
        out = np.zeros_like(a.value)
        out[:, lo:hi] = g
        return (out,)

    return ad.Var(a.value[:, lo:hi], (a,), back)


def encode(params, attributes, graph, propagation=None, propagated=None, csr=None):
    """Dispatch on the parameter type."""
    if params.kind == "gcn":
        return gcn_forward(attributes, propagation, params, propagated=propagated)
    return gat_forward(attributes, graph, params, csr=csr)
