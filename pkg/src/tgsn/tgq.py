"""Task-guided query head.

Two learnable query vectors (classification, MMSE regression) cross-attend
over the token sequence produced by the GSA stack. Queries and tokens are
layer-normed, attended via multi-head cross-attention, residually combined
with the raw query, refined by a pre-norm FFN behind DropPath, and fed to
task-specific linear output heads. Per-head attention weights are kept for
the channel-attention export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    droppath,
    gelu,
    layernorm,
    matmul,
    parameter,
    reshape,
    scaled_dot_product_attention,
    transpose,
    trunc_normal,
)
from .errors import ConfigError

TASK_CLASS = "dementia"
TASK_MMSE = "mmse"


@dataclass
class TgqConfig:
    embed_dim: int = 16
    num_heads: int = 4
    num_classes: int = 3
    ffn_expansion: int = 2
    droppath_rate: float = 0.1
    mmse_bias_init: float = 15.0   # midpoint of the 0-30 score range

    def validate(self) -> "TgqConfig":
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        return self


@dataclass
class TaskQueryParams:
    q_class: Tensor
    q_mmse: Tensor
    ln_q_gamma: Tensor
    ln_q_beta: Tensor
    ln_kv_gamma: Tensor
    ln_kv_beta: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln_ffn_gamma: Tensor
    ln_ffn_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    head_class_w: Tensor
    head_class_b: Tensor
    head_mmse_w: Tensor
    head_mmse_b: Tensor

    @staticmethod
    def create(cfg: TgqConfig, rng: np.random.Generator,
               dtype=np.float32) -> "TaskQueryParams":
        cfg.validate()
        e = cfg.embed_dim
        hid = e * cfg.ffn_expansion
        tn = lambda *shape: parameter(trunc_normal(rng, shape, dtype=dtype), dtype)
        zeros = lambda *shape: parameter(np.zeros(shape), dtype)
        ones = lambda *shape: parameter(np.ones(shape), dtype)
        return TaskQueryParams(
            q_class=tn(e), q_mmse=tn(e),
            ln_q_gamma=ones(e), ln_q_beta=zeros(e),
            ln_kv_gamma=ones(e), ln_kv_beta=zeros(e),
            wq=tn(e, e), bq=zeros(e),
            wk=tn(e, e), bk=zeros(e),
            wv=tn(e, e), bv=zeros(e),
            wo=tn(e, e), bo=zeros(e),
            ln_ffn_gamma=ones(e), ln_ffn_beta=zeros(e),
            ffn_w1=tn(e, hid), ffn_b1=zeros(hid),
            ffn_w2=tn(hid, e), ffn_b2=zeros(e),
            head_class_w=tn(e, cfg.num_classes), head_class_b=zeros(cfg.num_classes),
            head_mmse_w=tn(e, 1),
            head_mmse_b=parameter(np.full(1, cfg.mmse_bias_init), dtype),
        )

    def named_tensors(self) -> dict[str, np.ndarray]:
        names = [
            "q_class", "q_mmse", "ln_q_gamma", "ln_q_beta", "ln_kv_gamma",
            "ln_kv_beta", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
            "ln_ffn_gamma", "ln_ffn_beta", "ffn_w1", "ffn_b1", "ffn_w2",
            "ffn_b2", "head_class_w", "head_class_b", "head_mmse_w",
            "head_mmse_b",
        ]
        return {f"tgq.{n}": getattr(self, n).data for n in names}

    def trainable(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in self.__dataclass_fields__.values()]


@dataclass
class TgqOutput:
    logits: Tensor               # (N, num_classes)
    mmse: Tensor                 # (N,)
    attention: dict[str, np.ndarray]   # task -> (N, heads, tokens)


def _heads_split(x: Tensor, num_heads: int) -> Tensor:
    n, l, e = x.data.shape
    return transpose(reshape(x, (n, l, num_heads, e // num_heads)), (0, 2, 1, 3))


def _task_vector(p: TaskQueryParams, query: Tensor, keys: Tensor, values: Tensor,
                 tokens_raw: int, cfg: TgqConfig, training: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, np.ndarray]:
    n = keys.data.shape[0]
    h = cfg.num_heads
    qn = layernorm(reshape(query, (1, 1, cfg.embed_dim)), p.ln_q_gamma, p.ln_q_beta)
    qp = add(matmul(qn, p.wq), p.bq)                       # (1, 1, E)
    qh = _heads_split(qp, h)                               # (1, h, 1, Dh)
    out, attn = scaled_dot_product_attention(qh, keys, values)
    out = reshape(transpose(out, (0, 2, 1, 3)), (n, 1, cfg.embed_dim))
    out = add(matmul(out, p.wo), p.bo)
    xa = add(out, query)                                   # residual on the raw query
    ffn_in = layernorm(xa, p.ln_ffn_gamma, p.ln_ffn_beta)
    ffn = add(matmul(gelu(add(matmul(ffn_in, p.ffn_w1), p.ffn_b1)), p.ffn_w2),
              p.ffn_b2)
    xq = add(xa, droppath(ffn, cfg.droppath_rate, rng, training))
    weights = attn.data.reshape(n, h, tokens_raw)
    return reshape(xq, (n, cfg.embed_dim)), np.array(weights)


def tgq_forward(p: TaskQueryParams, tokens: Tensor, cfg: TgqConfig,
                training: bool, rng: np.random.Generator | None) -> TgqOutput:
    """Cross-attend both task queries over (N, L, E) tokens."""
    cfg.validate()
    n, l, e = tokens.data.shape
    kv = layernorm(tokens, p.ln_kv_gamma, p.ln_kv_beta)
    keys = _heads_split(add(matmul(kv, p.wk), p.bk), cfg.num_heads)
    values = _heads_split(add(matmul(kv, p.wv), p.bv), cfg.num_heads)
    vec_c, attn_c = _task_vector(p, p.q_class, keys, values, l, cfg, training, rng)
    vec_m, attn_m = _task_vector(p, p.q_mmse, keys, values, l, cfg, training, rng)
    logits = add(matmul(vec_c, p.head_class_w), p.head_class_b)
    mmse = reshape(add(matmul(vec_m, p.head_mmse_w), p.head_mmse_b), (n,))
    return TgqOutput(logits=logits, mmse=mmse,
                     attention={TASK_CLASS: attn_c, TASK_MMSE: attn_m})


def attention_map(attention: np.ndarray, n_channels: int, n_epochs: int
                  ) -> np.ndarray:
    """Head-averaged token attention folded to per-channel weights.

    ``attention`` is (N, heads, C*T1) with token index c*T1 + t1. Returns
    (N, C) rows, each normalized to sum to 1.
    """
    n = attention.shape[0]
    per_token = attention.mean(axis=1).reshape(n, n_channels, n_epochs)
    per_channel = per_token.mean(axis=2)
    return per_channel / per_channel.sum(axis=1, keepdims=True)
