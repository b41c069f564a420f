"""Patch layout evaluation, end-padding patch extraction, and patch embedding.

The layout rule: patch length is the sequence length divided by the
requested patch count (round half up, default 6 patches), stride is half
the patch length (floor, min 1), and padding equals the stride. The series
is padded with OSt copies of its last value before slicing, giving
N = floor((L - OPl) / OSt) + 2 tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, contract, dropout
from .exceptions import DimensionError, ParameterError

DEFAULT_NUM_PATCHES = 6


@dataclass
class PatchLayout:
    seq_len: int
    num_patches_requested: int
    patch_len: int
    stride: int
    padding: int
    token_count: int


def evaluate_patch_params(seq_len: int, num_patches: int | None = None) -> PatchLayout:
    """Evaluate patch length, stride, padding, and token count for a series."""
    if num_patches is None:
        num_patches = DEFAULT_NUM_PATCHES
    if num_patches < 1 or seq_len < num_patches:
        raise ParameterError(
            f"need seq_len >= num_patches >= 1, got seq_len={seq_len}, "
            f"num_patches={num_patches}")
    patch_len = math.floor(seq_len / num_patches + 0.5)  # round half up
    stride = max(1, patch_len // 2)
    token_count = (seq_len - patch_len) // stride + 2
    return PatchLayout(seq_len=seq_len, num_patches_requested=num_patches,
                       patch_len=patch_len, stride=stride, padding=stride,
                       token_count=token_count)


def make_patches(series: np.ndarray, layout: PatchLayout) -> np.ndarray:
    """Slice one padded univariate series into [N, patch_len] windows."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.shape[0] != layout.seq_len:
        raise DimensionError(
            f"series must be 1-d of length {layout.seq_len}, got {series.shape}")
    padded = np.concatenate([series, np.full(layout.padding, series[-1])])
    n, pl, st = layout.token_count, layout.patch_len, layout.stride
    patches = np.empty((n, pl))
    for i in range(n):
        patches[i] = padded[i * st:i * st + pl]
    return patches


def make_patches_batch(x: np.ndarray, layout: PatchLayout) -> np.ndarray:
    """Patch [B, L, M] into [B * M, N, patch_len], variates along the batch axis."""
    b, length, m = x.shape
    if length != layout.seq_len:
        raise DimensionError(f"expected length {layout.seq_len}, got {length}")
    out = np.empty((b * m, layout.token_count, layout.patch_len))
    for i in range(b):
        for j in range(m):
            out[i * m + j] = make_patches(x[i, :, j], layout)
    return out


@dataclass
class PatchEmbedParams:
    value_projection: Tensor   # [patch_len, d_model]
    bias: Tensor               # [d_model]
    position_embedding: Tensor  # [n_max, d_model]
    dropout_p: float = 0.0


def patch_embed(patches: Tensor, params: PatchEmbedParams,
                rng: np.random.Generator | None = None,
                training: bool = False) -> Tensor:
    """Project patches to d_model tokens and add learned positions."""
    if len(patches.shape) != 3:
        raise DimensionError("patches must be [batch, tokens, patch_len]")
    _, n, pl = patches.shape
    if pl != params.value_projection.shape[0]:
        raise DimensionError(
            f"patch width {pl} != projection input {params.value_projection.shape[0]}")
    n_max = params.position_embedding.shape[0]
    if n > n_max:
        raise ParameterError(f"token count {n} exceeds position table {n_max}")
    tokens = contract(patches, params.value_projection, "bnp,pd->bnd") + params.bias
    if n == n_max:
        tokens = tokens + params.position_embedding
    else:
        tokens = tokens + _rows(params.position_embedding, n)
    return dropout(tokens, params.dropout_p, rng, training)


def _rows(t: Tensor, n: int) -> Tensor:
    """First n rows of a matrix tensor, differentiable."""
    out = Tensor(t.data[:n])
    if t._needs_graph():
        def bw(g):
            full = np.zeros_like(t.data)
            full[:n] = g
            t._accumulate(full)
        out._parents, out._backward = (t,), bw
    return out
