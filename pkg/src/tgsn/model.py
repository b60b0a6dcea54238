"""Full network assembly, including the ablation variants.

The standard path is GSA stack -> token sequence -> task-guided query head.
Ablations swap components for the simpler baselines used in the module
ablation grid: without GSA the stack is replaced by a pointwise MLP mixer of
the same width; without TGQ the tokens are mean-pooled and fed to plain
linear heads (paired with fixed equal task weights in the trainer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    conv1x1,
    flatten_permute,
    gelu,
    matmul,
    mean_,
    parameter,
    reshape,
    trunc_normal,
)
from .errors import ConfigError
from .gsa import GsaConfig, GsaStackParams, gsa_stack
from .tgq import TaskQueryParams, TgqConfig, TgqOutput, tgq_forward


@dataclass
class ModelConfig:
    n_features: int
    n_channels: int
    n_epochs: int
    gsa: GsaConfig = field(default_factory=GsaConfig)
    tgq: TgqConfig = field(default_factory=TgqConfig)
    use_gsa: bool = True
    use_tgq: bool = True

    def validate(self) -> "ModelConfig":
        if self.gsa.embed_dim != self.tgq.embed_dim:
            raise ConfigError(
                f"embed_dim mismatch: gsa {self.gsa.embed_dim} vs tgq "
                f"{self.tgq.embed_dim}")
        self.gsa.validate()
        self.tgq.validate()
        return self


@dataclass
class MlpMixerParams:
    """Pointwise MLP stand-in for the GSA stack (ablation baseline)."""

    entry_w: Tensor
    entry_b: Tensor
    hid_w: Tensor
    hid_b: Tensor
    out_w: Tensor
    out_b: Tensor

    @staticmethod
    def create(n_features: int, cfg: GsaConfig, rng, dtype=np.float32):
        e = cfg.embed_dim
        hid = e * cfg.ffn_expansion
        tn = lambda *shape: parameter(trunc_normal(rng, shape, dtype=dtype), dtype)
        zeros = lambda *shape: parameter(np.zeros(shape), dtype)
        return MlpMixerParams(
            entry_w=tn(e, n_features), entry_b=zeros(e),
            hid_w=tn(hid, e), hid_b=zeros(hid),
            out_w=tn(e, hid), out_b=zeros(e),
        )

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {
            "mlp.entry.w": self.entry_w.data, "mlp.entry.b": self.entry_b.data,
            "mlp.hid.w": self.hid_w.data, "mlp.hid.b": self.hid_b.data,
            "mlp.out.w": self.out_w.data, "mlp.out.b": self.out_b.data,
        }

    def trainable(self) -> list[Tensor]:
        return [self.entry_w, self.entry_b, self.hid_w, self.hid_b,
                self.out_w, self.out_b]


@dataclass
class PooledHeadParams:
    """Mean-pool + linear heads stand-in for the TGQ module."""

    head_class_w: Tensor
    head_class_b: Tensor
    head_mmse_w: Tensor
    head_mmse_b: Tensor

    @staticmethod
    def create(cfg: TgqConfig, rng, dtype=np.float32):
        e = cfg.embed_dim
        tn = lambda *shape: parameter(trunc_normal(rng, shape, dtype=dtype), dtype)
        return PooledHeadParams(
            head_class_w=tn(e, cfg.num_classes),
            head_class_b=parameter(np.zeros(cfg.num_classes), dtype),
            head_mmse_w=tn(e, 1),
            head_mmse_b=parameter(np.full(1, cfg.mmse_bias_init), dtype),
        )

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {
            "pool.head_class.w": self.head_class_w.data,
            "pool.head_class.b": self.head_class_b.data,
            "pool.head_mmse.w": self.head_mmse_w.data,
            "pool.head_mmse.b": self.head_mmse_b.data,
        }

    def trainable(self) -> list[Tensor]:
        return [self.head_class_w, self.head_class_b,
                self.head_mmse_w, self.head_mmse_b]


class TgsnModel:
    """Holds parameters for one configuration and runs the forward pass."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        if cfg.use_gsa:
            self.backbone = GsaStackParams.create(cfg.n_features, cfg.gsa, rng, dtype)
        else:
            self.backbone = MlpMixerParams.create(cfg.n_features, cfg.gsa, rng, dtype)
        if cfg.use_tgq:
            self.head = TaskQueryParams.create(cfg.tgq, rng, dtype)
        else:
            self.head = PooledHeadParams.create(cfg.tgq, rng, dtype)

    def forward(self, x: np.ndarray, training: bool,
                rng: np.random.Generator | None = None) -> TgqOutput:
        xt = Tensor(np.asarray(x, dtype=self.dtype))
        if self.cfg.use_gsa:
            _, tokens = gsa_stack(self.backbone, xt, self.cfg.gsa, training, rng)
        else:
            h = conv1x1(xt, self.backbone.entry_w, self.backbone.entry_b)
            h = gelu(conv1x1(h, self.backbone.hid_w, self.backbone.hid_b))
            h = conv1x1(h, self.backbone.out_w, self.backbone.out_b)
            tokens = flatten_permute(h)
        if self.cfg.use_tgq:
            return tgq_forward(self.head, tokens, self.cfg.tgq, training, rng)
        pooled = mean_(tokens, axis=1)                     # (N, E)
        logits = add(matmul(pooled, self.head.head_class_w), self.head.head_class_b)
        n = x.shape[0]
        mmse = reshape(add(matmul(pooled, self.head.head_mmse_w),
                           self.head.head_mmse_b), (n,))
        return TgqOutput(logits=logits, mmse=mmse, attention={})

    def trainable(self) -> list[Tensor]:
        return self.backbone.trainable() + self.head.trainable()

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.backbone.named_tensors())
        out.update(self.head.named_tensors())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_tensors().items()}

    def restore(self, named: dict[str, np.ndarray]) -> None:
        current = self.named_tensors()
        missing = set(current) - set(named)
        if missing:
            raise ConfigError(f"checkpoint missing tensors: {sorted(missing)[:5]}")
        # rebind through the param objects so BN running stats land too
        if self.cfg.use_gsa:
            self.backbone.entry_w.data = named["gsa.entry.w"].astype(self.dtype)
            self.backbone.entry_b.data = named["gsa.entry.b"].astype(self.dtype)
            for i, blk in enumerate(self.backbone.blocks):
                pre = f"gsa.k{i}"
                blk.bn1.gamma.data = named[f"{pre}.bn1.gamma"].astype(self.dtype)
                blk.bn1.beta.data = named[f"{pre}.bn1.beta"].astype(self.dtype)
                blk.bn1.running_mean = named[f"{pre}.bn1.running_mean"].astype(self.dtype)
                blk.bn1.running_var = named[f"{pre}.bn1.running_var"].astype(self.dtype)
                blk.proj_w.data = named[f"{pre}.proj.w"].astype(self.dtype)
                blk.proj_b.data = named[f"{pre}.proj.b"].astype(self.dtype)
                blk.dw_k.data = named[f"{pre}.dw.k"].astype(self.dtype)
                blk.dw_b.data = named[f"{pre}.dw.b"].astype(self.dtype)
                blk.dwd_k.data = named[f"{pre}.dwd.k"].astype(self.dtype)
                blk.dwd_b.data = named[f"{pre}.dwd.b"].astype(self.dtype)
                blk.gate_w.data = named[f"{pre}.gate.w"].astype(self.dtype)
                blk.gate_b.data = named[f"{pre}.gate.b"].astype(self.dtype)
                blk.scale1.data = named[f"{pre}.scale1"].astype(self.dtype)
                blk.bn2.gamma.data = named[f"{pre}.bn2.gamma"].astype(self.dtype)
                blk.bn2.beta.data = named[f"{pre}.bn2.beta"].astype(self.dtype)
                blk.bn2.running_mean = named[f"{pre}.bn2.running_mean"].astype(self.dtype)
                blk.bn2.running_var = named[f"{pre}.bn2.running_var"].astype(self.dtype)
                blk.ffn_in_w.data = named[f"{pre}.ffn.in.w"].astype(self.dtype)
                blk.ffn_in_b.data = named[f"{pre}.ffn.in.b"].astype(self.dtype)
                blk.ffn_dw_k.data = named[f"{pre}.ffn.dw.k"].astype(self.dtype)
                blk.ffn_dw_b.data = named[f"{pre}.ffn.dw.b"].astype(self.dtype)
                blk.ffn_out_w.data = named[f"{pre}.ffn.out.w"].astype(self.dtype)
                blk.ffn_out_b.data = named[f"{pre}.ffn.out.b"].astype(self.dtype)
                blk.scale2.data = named[f"{pre}.scale2"].astype(self.dtype)
        else:
            self.backbone.entry_w.data = named["mlp.entry.w"].astype(self.dtype)
            self.backbone.entry_b.data = named["mlp.entry.b"].astype(self.dtype)
            self.backbone.hid_w.data = named["mlp.hid.w"].astype(self.dtype)
            self.backbone.hid_b.data = named["mlp.hid.b"].astype(self.dtype)
            self.backbone.out_w.data = named["mlp.out.w"].astype(self.dtype)
            self.backbone.out_b.data = named["mlp.out.b"].astype(self.dtype)
        if self.cfg.use_tgq:
            for name in self.head.named_tensors():
                attr = name.split(".", 1)[1]
                getattr(self.head, attr).data = named[name].astype(self.dtype)
        else:
            self.head.head_class_w.data = named["pool.head_class.w"].astype(self.dtype)
            self.head.head_class_b.data = named["pool.head_class.b"].astype(self.dtype)
            self.head.head_mmse_w.data = named["pool.head_mmse.w"].astype(self.dtype)
            self.head.head_mmse_b.data = named["pool.head_mmse.b"].astype(self.dtype)
