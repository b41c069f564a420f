"""The end-to-end model: instance normalization, patch embedding, encoder
blocks with alternating quantum/full attention, and per-task heads.

Each encoder block is post-norm: H' = LN(Attention(X) + X) followed by
H = LN(FFN(H') + H'). Variates are channel-independent and ride along the
batch axis with shared weights.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import attention as attn
from . import patching
from .autodiff import Tensor, activation, contract, dropout, layer_norm, relu
from .exceptions import DataError, DimensionError, ParameterError
from .quantum import init_circuit_theta

TASKS = ("long_term_forecast", "short_term_forecast", "classification",
         "anomaly_detection")
FORECAST_TASKS = ("long_term_forecast", "short_term_forecast")


@dataclass
class ModelConfig:
    task: str
    seq_len: int
    pred_len: int = 1
    d_model: int = 64
    n_heads: int = 4
    e_layers: int = 2
    d_ff: Optional[int] = None  # defaults to 4 * d_model
    dropout_p: float = 0.1
    num_patches: int = patching.DEFAULT_NUM_PATCHES
    n_qubits: int = 4
    entanglement_factor: float = 0.1
    angle_encoding_scale: float = 1.0
    quantum_backend: str = "fast"
    num_classes: int = 2
    n_vars: int = 1
    channel_independence: bool = True  # recorded; backbone is always channel-independent
    k_scales: int = 4  # recorded but inert
    instance_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.e_layers < 1:
            raise ParameterError("e_layers must be >= 1")
        if self.task in FORECAST_TASKS and self.pred_len < 1:
            raise ParameterError("pred_len must be >= 1 for forecasting")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def layout(self) -> patching.PatchLayout:
        return patching.evaluate_patch_params(self.seq_len, self.num_patches)

    def attention_config(self) -> attn.AttentionConfig:
        return attn.AttentionConfig(
            n_heads=self.n_heads, head_dim=self.head_dim,
            entanglement_factor=self.entanglement_factor,
            mask_enabled=False, attention_dropout=self.dropout_p)


@dataclass
class NormStats:
    mean: np.ndarray  # [B, 1, M]
    std: np.ndarray   # [B, 1, M], already includes the eps guard


def instance_normalize(x: np.ndarray, eps: float) -> tuple[np.ndarray, NormStats]:
    """Standardize each (sample, variate) series over time; stats retained."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 2:
        raise DimensionError("expected [B, L>=2, n_vars] input")
    mean = x.mean(axis=1, keepdims=True)
    std = np.sqrt(x.var(axis=1, keepdims=True) + eps)
    return (x - mean) / std, NormStats(mean=mean, std=std)


def de_normalize(y: Tensor, stats: NormStats) -> Tensor:
    """Restore per-variate scale and offset on a [B, T, n_vars] output."""
    if len(y.shape) != 3 or y.shape[0] != stats.mean.shape[0] \
            or y.shape[2] != stats.mean.shape[2]:
        raise DimensionError(
            f"output shape {y.shape} incompatible with stats {stats.mean.shape}")
    return y * Tensor(stats.std) + Tensor(stats.mean)


def ffn(h: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise feed-forward: ReLU(h W1 + b1) W2 + b2."""
    if h.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise DimensionError(
            f"FFN width chain broken: {h.shape[-1]} -> {w1.shape} -> {w2.shape}")
    hidden = relu(contract(h, w1, "bnd,df->bnf") + b1)
    return contract(hidden, w2, "bnf,fd->bnd") + b2


@dataclass
class EncoderLayerParams:
    projections: attn.HeadProjections
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    theta: Optional[Tensor] = None  # circuit angles, quantum layers only


@dataclass
class ModelParams:
    embed: patching.PatchEmbedParams
    layers: list[EncoderLayerParams]
    head_weight: Tensor
    head_bias: Tensor


def _linear_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    layout = cfg.layout()
    d, f = cfg.d_model, cfg.d_ff
    embed = patching.PatchEmbedParams(
        value_projection=_linear_init(rng, layout.patch_len, (layout.patch_len, d)),
        bias=_linear_init(rng, layout.patch_len, (d,)),
        position_embedding=Tensor(
            rng.uniform(-0.02, 0.02, size=(layout.token_count, d)),
            requires_grad=True),
        dropout_p=cfg.dropout_p)

    layers = []
    for i in range(cfg.e_layers):
        proj = attn.HeadProjections(
            w_q=_linear_init(rng, d, (d, d)), w_k=_linear_init(rng, d, (d, d)),
            w_v=_linear_init(rng, d, (d, d)), w_o=_linear_init(rng, d, (d, d)),
            ln_gamma=Tensor(np.ones(d), requires_grad=True),
            ln_beta=Tensor(np.zeros(d), requires_grad=True))
        theta = None
        if attn.select_attention(i) == "quantum":
            theta = Tensor(init_circuit_theta(cfg.n_qubits, rng), requires_grad=True)
        layers.append(EncoderLayerParams(
            projections=proj,
            ffn_w1=_linear_init(rng, d, (d, f)), ffn_b1=_linear_init(rng, d, (f,)),
            ffn_w2=_linear_init(rng, f, (f, d)), ffn_b2=_linear_init(rng, f, (d,)),
            ln2_gamma=Tensor(np.ones(d), requires_grad=True),
            ln2_beta=Tensor(np.zeros(d), requires_grad=True),
            theta=theta))

    nf = layout.token_count * d
    if cfg.task in FORECAST_TASKS:
        head_w = _linear_init(rng, nf, (nf, cfg.pred_len))
        head_b = _linear_init(rng, nf, (cfg.pred_len,))
    elif cfg.task == "anomaly_detection":
        head_w = _linear_init(rng, nf, (nf, cfg.seq_len))
        head_b = _linear_init(rng, nf, (cfg.seq_len,))
    else:
        width = cfg.n_vars * nf
        head_w = _linear_init(rng, width, (width, cfg.num_classes))
        head_b = _linear_init(rng, width, (cfg.num_classes,))
    return ModelParams(embed=embed, layers=layers,
                       head_weight=head_w, head_bias=head_b)


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    out = [("embed.value_projection", params.embed.value_projection),
           ("embed.bias", params.embed.bias),
           ("embed.position_embedding", params.embed.position_embedding)]
    for i, layer in enumerate(params.layers):
        p = layer.projections
        out += [(f"layers.{i}.w_q", p.w_q), (f"layers.{i}.w_k", p.w_k),
                (f"layers.{i}.w_v", p.w_v), (f"layers.{i}.w_o", p.w_o),
                (f"layers.{i}.ln1_gamma", p.ln_gamma),
                (f"layers.{i}.ln1_beta", p.ln_beta),
                (f"layers.{i}.ffn_w1", layer.ffn_w1),
                (f"layers.{i}.ffn_b1", layer.ffn_b1),
                (f"layers.{i}.ffn_w2", layer.ffn_w2),
                (f"layers.{i}.ffn_b2", layer.ffn_b2),
                (f"layers.{i}.ln2_gamma", layer.ln2_gamma),
                (f"layers.{i}.ln2_beta", layer.ln2_beta)]
        if layer.theta is not None:
            out.append((f"layers.{i}.theta", layer.theta))
    out += [("head.weight", params.head_weight), ("head.bias", params.head_bias)]
    return out


def encoder_block(tokens: Tensor, layer_index: int, layer: EncoderLayerParams,
                  cfg: ModelConfig, rng: Optional[np.random.Generator] = None,
                  training: bool = False,
                  trace: Optional[list] = None) -> Tensor:
    kind = attn.select_attention(layer_index)
    if trace is not None:
        trace.append(kind)
    acfg = cfg.attention_config()
    h1 = attn.multi_head(tokens, layer.projections, kind, acfg,
                         theta=layer.theta,
                         angle_encoding_scale=cfg.angle_encoding_scale,
                         backend=cfg.quantum_backend,
                         rng=rng, training=training,
                         ln_eps=cfg.instance_norm_eps)
    ff = ffn(h1, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2)
    return layer_norm(ff + h1, layer.ln2_gamma, layer.ln2_beta,
                      axis=-1, eps=cfg.instance_norm_eps)


def _encode(cfg: ModelConfig, params: ModelParams, x_norm: np.ndarray,
            rng, training, trace) -> Tensor:
    layout = cfg.layout()
    patches = Tensor(patching.make_patches_batch(x_norm, layout))
    tokens = patching.patch_embed(patches, params.embed, rng, training)
    for i, layer in enumerate(params.layers):
        tokens = encoder_block(tokens, i, layer, cfg, rng, training, trace)
    return tokens


def forecast_head(tokens: Tensor, params: ModelParams, cfg: ModelConfig,
                  horizon: int, rng=None, training: bool = False) -> Tensor:
    """Flatten tokens, project to the horizon, unfold variates: [B, T, n_vars]."""
    bm, n, d = tokens.shape
    nf = n * d
    if params.head_weight.shape[0] != nf:
        raise DimensionError(
            f"head expects flattened width {params.head_weight.shape[0]}, got {nf}")
    flat = tokens.reshape(bm, nf)
    out = contract(flat, params.head_weight, "bf,ft->bt") + params.head_bias
    if training and cfg.dropout_p > 0.0:
        out = dropout(out, cfg.dropout_p, rng, training)
    b = bm // cfg.n_vars
    return out.reshape(b, cfg.n_vars, horizon).transpose((0, 2, 1))


def classification_head(tokens: Tensor, params: ModelParams, cfg: ModelConfig,
                        rng=None, training: bool = False) -> Tensor:
    """GELU -> dropout -> flatten over (variates, tokens, features) -> logits."""
    bm, n, d = tokens.shape
    act = activation(tokens, "gelu")
    if training and cfg.dropout_p > 0.0:
        act = dropout(act, cfg.dropout_p, rng, training)
    b = bm // cfg.n_vars
    flat = act.reshape(b, cfg.n_vars * n * d)
    if params.head_weight.shape[0] != flat.shape[1]:
        raise DimensionError("classification head width mismatch")
    return contract(flat, params.head_weight, "bf,fc->bc") + params.head_bias


def model_forward(cfg: ModelConfig, params: ModelParams, x_enc: np.ndarray,
                  rng: Optional[np.random.Generator] = None,
                  training: bool = False,
                  trace: Optional[list] = None) -> Tensor:
    """Run the task pipeline on a [B, L, n_vars] batch."""
    x_enc = np.asarray(x_enc, dtype=np.float64)
    if x_enc.ndim != 3:
        raise DimensionError("input must be [B, L, n_vars]")
    if x_enc.shape[1] != cfg.seq_len or x_enc.shape[2] != cfg.n_vars:
        raise DimensionError(
            f"expected [B, {cfg.seq_len}, {cfg.n_vars}], got {x_enc.shape}")
    x_norm, stats = instance_normalize(x_enc, cfg.instance_norm_eps)
    tokens = _encode(cfg, params, x_norm, rng, training, trace)
    if cfg.task in FORECAST_TASKS:
        y = forecast_head(tokens, params, cfg, cfg.pred_len, rng, training)
        return de_normalize(y, stats)
    if cfg.task == "anomaly_detection":
        y = forecast_head(tokens, params, cfg, cfg.seq_len, rng, training)
        return de_normalize(y, stats)
    return classification_head(tokens, params, cfg, rng, training)


# Task-specific aliases kept for API clarity.
def anomaly_head(tokens: Tensor, params: ModelParams, cfg: ModelConfig,
                 stats: NormStats, rng=None, training: bool = False) -> Tensor:
    """Reconstruction of the input window in original units."""
    y = forecast_head(tokens, params, cfg, cfg.seq_len, rng, training)
    return de_normalize(y, stats)


class Model:
    """Bundle of config and parameters with a forward convenience."""

    def __init__(self, cfg: ModelConfig, params: Optional[ModelParams] = None,
                 seed: int = 0):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, np.random.default_rng(seed))
        self.params = params

    def forward(self, x_enc, rng=None, training: bool = False, trace=None) -> Tensor:
        return model_forward(self.cfg, self.params, x_enc, rng, training, trace)

    def named_parameters(self):
        return named_parameters(self.params)


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"QPFC"
_VERSION = 1


def save_checkpoint(path: str, cfg: ModelConfig, params: ModelParams):
    """Flat binary container: header, config key-value text, named tensors."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    cfg_text = "\n".join(f"{k}={json.dumps(v)}"
                         for k, v in sorted(asdict(cfg).items()))
    cfg_bytes = cfg_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    named = named_parameters(params)
    buf.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", len(tensor.shape)))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> tuple[ModelConfig, ModelParams]:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != _MAGIC:
        raise DataError(f"{path} is not a model checkpoint")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", buf.read(4))
    cfg_kv = {}
    for line in buf.read(cfg_len).decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        cfg_kv[key] = json.loads(value)
    cfg = ModelConfig(**cfg_kv)

    (count,) = struct.unpack("<I", buf.read(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf.read(8 * n_items), dtype="<f8").reshape(shape)
        tensors[name] = np.array(data)

    params = init_params(cfg, np.random.default_rng(0))
    for name, tensor in named_parameters(params):
        if name not in tensors:
            raise DataError(f"checkpoint missing parameter {name}")
        if tensors[name].shape != tensor.shape:
            raise DataError(f"checkpoint shape mismatch for {name}")
        tensor.data = tensors[name]
    return cfg, params
