"""Classical full attention, quantum-classical self-attention, and the
multi-head wrapper with even/odd layer alternation.

Tensor layouts follow queries [B, L, H, E], keys/values [B, S, H, E/D],
and score maps [B, H, L, S]. The quantum score path requires L == S:
the entanglement score is the V-K contraction, which only lines up for
self-attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff, quantum
from .autodiff import Tensor, contract, dropout, softmax
from .exceptions import DimensionError, ParameterError


@dataclass
class AttentionConfig:
    n_heads: int
    head_dim: int
    entanglement_factor: float = 0.0
    mask_enabled: bool = False
    softmax_scale: Optional[float] = None  # default 1/sqrt(head_dim)
    attention_dropout: float = 0.0

    def scale(self) -> float:
        if self.softmax_scale is not None:
            if self.softmax_scale <= 0:
                raise ParameterError("softmax scale must be positive")
            return self.softmax_scale
        return 1.0 / np.sqrt(self.head_dim)


@dataclass
class AttentionOutput:
    values_out: Tensor              # [B, L, H, D]
    weights: Optional[Tensor] = None  # [B, H, L, S]


def _check_qkv(q: Tensor, k: Tensor, v: Tensor):
    if len(q.shape) != 4 or len(k.shape) != 4 or len(v.shape) != 4:
        raise DimensionError("attention expects rank-4 Q, K, V")
    if q.shape[3] != k.shape[3]:
        raise DimensionError(
            f"query head dim {q.shape[3]} != key head dim {k.shape[3]}")
    if k.shape[1] != v.shape[1]:
        raise DimensionError("K and V must share the sequence axis")


def _apply_mask(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Set masked (True) positions to -inf; mask broadcasts over [B, H]."""
    masked = scores.data.copy()
    masked[..., mask] = -np.inf
    out = Tensor(masked)
    if scores._needs_graph():
        def bw(g):
            gg = g.copy()
            gg[..., mask] = 0.0
            scores._accumulate(gg)
        out._parents, out._backward = (scores,), bw
    return out


def full_attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig,
                   mask: Optional[np.ndarray] = None,
                   rng: Optional[np.random.Generator] = None,
                   training: bool = False) -> AttentionOutput:
    """Scaled dot-product attention: softmax(alpha * QK^T) V."""
    _check_qkv(q, k, v)
    scores = contract(q, k, "blhe,bshe->bhls") * cfg.scale()
    if cfg.mask_enabled and mask is not None:
        scores = _apply_mask(scores, mask)
    weights = softmax(scores, axis=-1)
    if training and cfg.attention_dropout > 0.0:
        weights_used = dropout(weights, cfg.attention_dropout, rng, training)
    else:
        weights_used = weights
    values_out = contract(weights_used, v, "bhls,bshd->blhd")
    return AttentionOutput(values_out, weights)


def qcsa_scores(q: Tensor, k: Tensor, v: Tensor, theta: Tensor,
                entanglement_factor: float, angle_encoding_scale: float = 1.0,
                backend: str = "fast") -> Tensor:
    """Mixed score map: circuit expectation of QK^T plus lambda * VK^T."""
    _check_qkv(q, k, v)
    if q.shape[1] != k.shape[1]:
        raise DimensionError(
            "quantum-classical scores require self-attention (L == S): "
            f"got L={q.shape[1]}, S={k.shape[1]}")
    s_sup = contract(q, k, "blhe,bshe->bhls")
    s_quantum = quantum.expectation_map(s_sup, theta, angle_encoding_scale, backend)
    s_ent = contract(v, k, "blhd,bshd->bhls")
    return s_quantum + entanglement_factor * s_ent


def qcsa_attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig,
                   theta: Tensor, angle_encoding_scale: float = 1.0,
                   backend: str = "fast",
                   mask: Optional[np.ndarray] = None,
                   rng: Optional[np.random.Generator] = None,
                   training: bool = False) -> AttentionOutput:
    """Algorithm: mixed scores -> optional mask -> softmax(alpha S) -> A V."""
    scores = qcsa_scores(q, k, v, theta, cfg.entanglement_factor,
                         angle_encoding_scale, backend)
    if cfg.mask_enabled and mask is not None:
        scores = _apply_mask(scores, mask)
    weights = softmax(scores * cfg.scale(), axis=-1)
    if training and cfg.attention_dropout > 0.0:
        weights_used = dropout(weights, cfg.attention_dropout, rng, training)
    else:
        weights_used = weights
    values_out = contract(weights_used, v, "bhls,bshd->blhd")
    return AttentionOutput(values_out, weights)


def select_attention(layer_index: int) -> str:
    """Even (0-based) layers run quantum attention, odd layers full attention."""
    if layer_index < 0:
        raise ParameterError("layer index must be >= 0")
    return "quantum" if layer_index % 2 == 0 else "full"


@dataclass
class HeadProjections:
    """Per-layer attention weights: Q/K/V/O projections plus the post-attention
    layer-norm affine (residual wiring lives in multi_head)."""
    w_q: Tensor  # [d_model, d_model]
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln_gamma: Tensor  # [d_model]
    ln_beta: Tensor


def multi_head(x: Tensor, params: HeadProjections, kind: str,
               cfg: AttentionConfig, theta: Optional[Tensor] = None,
               angle_encoding_scale: float = 1.0, backend: str = "fast",
               mask: Optional[np.ndarray] = None,
               rng: Optional[np.random.Generator] = None,
               training: bool = False, ln_eps: float = 1e-5) -> Tensor:
    """Project to heads, attend, concatenate, project, residual + layer norm."""
    b, n, d_model = x.shape
    h, e = cfg.n_heads, cfg.head_dim
    if h * e != d_model:
        raise DimensionError(f"d_model {d_model} != n_heads*head_dim {h}*{e}")

    def heads(w: Tensor) -> Tensor:
        return contract(x, w, "bnd,de->bne").reshape(b, n, h, e)

    q, k, v = heads(params.w_q), heads(params.w_k), heads(params.w_v)
    if kind == "quantum":
        if theta is None:
            raise ParameterError("quantum attention requires circuit parameters")
        att = qcsa_attention(q, k, v, cfg, theta, angle_encoding_scale,
                             backend, mask, rng, training)
    elif kind == "full":
        att = full_attention(q, k, v, cfg, mask, rng, training)
    else:
        raise ParameterError(f"unknown attention kind {kind!r}")

    concat = att.values_out.reshape(b, n, d_model)
    projected = contract(concat, params.w_o, "bnd,de->bne")
    return autodiff.layer_norm(projected + x, params.ln_gamma, params.ln_beta,
                               axis=-1, eps=ln_eps)
