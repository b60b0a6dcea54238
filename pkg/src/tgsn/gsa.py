"""Gated spatiotemporal attention (GSA) stack.

Input feature maps (N, F, C, T1) pass through an entry 1x1 conv to the
embedding width E, then K residual blocks. Each block applies a gated
convolutional unit (pointwise projection + GELU, depthwise conv, dilated
depthwise conv, then a 1x1 conv whose output splits into a value and a
sigmoid gate) and a convolutional FFN, both behind batch norm, per-channel
learnable branch scales, and DropPath. The block output is finally
flattened into a (N, C*T1, E) token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BatchNorm2d,
    Tensor,
    add,
    batchnorm2d,
    conv1x1,
    depthwise_conv2d,
    droppath,
    flatten_permute,
    gelu,
    mul,
    parameter,
    sigmoid,
    split_channels,
    trunc_normal,
)
from .errors import ConfigError


@dataclass
class GsaConfig:
    num_blocks: int = 3
    embed_dim: int = 16
    dw_kernel: int = 5
    dilation: int = 3
    droppath_rate: float = 0.1
    ffn_expansion: int = 2

    def validate(self) -> "GsaConfig":
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.dw_kernel % 2 == 0:
            raise ConfigError("dw_kernel must be odd")
        if self.dilation < 1:
            raise ConfigError("dilation must be >= 1")
        if not (0 <= self.droppath_rate <= 1):
            raise ConfigError("droppath_rate must be in [0, 1]")
        return self


@dataclass
class GsaBlockParams:
    bn1: BatchNorm2d
    proj_w: Tensor
    proj_b: Tensor
    dw_k: Tensor
    dw_b: Tensor
    dwd_k: Tensor
    dwd_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    scale1: Tensor              # per-channel residual scale, shape (E, 1, 1)
    bn2: BatchNorm2d
    ffn_in_w: Tensor
    ffn_in_b: Tensor
    ffn_dw_k: Tensor
    ffn_dw_b: Tensor
    ffn_out_w: Tensor
    ffn_out_b: Tensor
    scale2: Tensor

    @staticmethod
    def create(cfg: GsaConfig, rng: np.random.Generator,
               dtype=np.float32) -> "GsaBlockParams":
        e = cfg.embed_dim
        k = cfg.dw_kernel
        hid = e * cfg.ffn_expansion
        tn = lambda *shape: parameter(trunc_normal(rng, shape, dtype=dtype), dtype)
        zeros = lambda *shape: parameter(np.zeros(shape), dtype)
        return GsaBlockParams(
            bn1=BatchNorm2d.create(e, dtype=dtype),
            proj_w=tn(e, e), proj_b=zeros(e),
            dw_k=tn(e, k, k), dw_b=zeros(e),
            dwd_k=tn(e, k, k), dwd_b=zeros(e),
            gate_w=tn(2 * e, e), gate_b=zeros(2 * e),
            scale1=parameter(np.full((e, 1, 1), 1e-2), dtype),
            bn2=BatchNorm2d.create(e, dtype=dtype),
            ffn_in_w=tn(hid, e), ffn_in_b=zeros(hid),
            ffn_dw_k=tn(hid, k, k), ffn_dw_b=zeros(hid),
            ffn_out_w=tn(e, hid), ffn_out_b=zeros(e),
            scale2=parameter(np.full((e, 1, 1), 1e-2), dtype),
        )

    def named_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {
            f"{prefix}.bn1.gamma": self.bn1.gamma.data,
            f"{prefix}.bn1.beta": self.bn1.beta.data,
            f"{prefix}.bn1.running_mean": self.bn1.running_mean,
            f"{prefix}.bn1.running_var": self.bn1.running_var,
            f"{prefix}.proj.w": self.proj_w.data,
            f"{prefix}.proj.b": self.proj_b.data,
            f"{prefix}.dw.k": self.dw_k.data,
            f"{prefix}.dw.b": self.dw_b.data,
            f"{prefix}.dwd.k": self.dwd_k.data,
            f"{prefix}.dwd.b": self.dwd_b.data,
            f"{prefix}.gate.w": self.gate_w.data,
            f"{prefix}.gate.b": self.gate_b.data,
            f"{prefix}.scale1": self.scale1.data,
            f"{prefix}.bn2.gamma": self.bn2.gamma.data,
            f"{prefix}.bn2.beta": self.bn2.beta.data,
            f"{prefix}.bn2.running_mean": self.bn2.running_mean,
            f"{prefix}.bn2.running_var": self.bn2.running_var,
            f"{prefix}.ffn.in.w": self.ffn_in_w.data,
            f"{prefix}.ffn.in.b": self.ffn_in_b.data,
            f"{prefix}.ffn.dw.k": self.ffn_dw_k.data,
            f"{prefix}.ffn.dw.b": self.ffn_dw_b.data,
            f"{prefix}.ffn.out.w": self.ffn_out_w.data,
            f"{prefix}.ffn.out.b": self.ffn_out_b.data,
            f"{prefix}.scale2": self.scale2.data,
        }
        return out

    def trainable(self) -> list[Tensor]:
        return [
            self.bn1.gamma, self.bn1.beta, self.proj_w, self.proj_b,
            self.dw_k, self.dw_b, self.dwd_k, self.dwd_b,
            self.gate_w, self.gate_b, self.scale1,
            self.bn2.gamma, self.bn2.beta,
            self.ffn_in_w, self.ffn_in_b, self.ffn_dw_k, self.ffn_dw_b,
            self.ffn_out_w, self.ffn_out_b, self.scale2,
        ]


def gsta_unit(p: GsaBlockParams, x: Tensor, cfg: GsaConfig) -> Tensor:
    """Gated unit on an already batch-normed map; shape preserving."""
    h = gelu(conv1x1(x, p.proj_w, p.proj_b))
    h = depthwise_conv2d(h, p.dw_k, p.dw_b)
    h = depthwise_conv2d(h, p.dwd_k, p.dwd_b, dilation=cfg.dilation)
    gates = conv1x1(h, p.gate_w, p.gate_b)
    value, gate = split_channels(gates)
    return mul(value, sigmoid(gate))


def conv_ffn(p: GsaBlockParams, x: Tensor) -> Tensor:
    """1x1 expand -> depthwise -> GELU -> 1x1 contract, on a normed map."""
    h = conv1x1(x, p.ffn_in_w, p.ffn_in_b)
    h = depthwise_conv2d(h, p.ffn_dw_k, p.ffn_dw_b)
    h = gelu(h)
    return conv1x1(h, p.ffn_out_w, p.ffn_out_b)


def gsa_block(p: GsaBlockParams, x: Tensor, cfg: GsaConfig, training: bool,
              rng: np.random.Generator | None) -> Tensor:
    branch = mul(gsta_unit(p, batchnorm2d(x, p.bn1, training), cfg), p.scale1)
    x = add(x, droppath(branch, cfg.droppath_rate, rng, training))
    branch = mul(conv_ffn(p, batchnorm2d(x, p.bn2, training)), p.scale2)
    return add(x, droppath(branch, cfg.droppath_rate, rng, training))


@dataclass
class GsaStackParams:
    entry_w: Tensor
    entry_b: Tensor
    blocks: list[GsaBlockParams]

    @staticmethod
    def create(n_features: int, cfg: GsaConfig, rng: np.random.Generator,
               dtype=np.float32) -> "GsaStackParams":
        cfg.validate()
        return GsaStackParams(
            entry_w=parameter(trunc_normal(rng, (cfg.embed_dim, n_features),
                                           dtype=dtype), dtype),
            entry_b=parameter(np.zeros(cfg.embed_dim), dtype),
            blocks=[GsaBlockParams.create(cfg, rng, dtype)
                    for _ in range(cfg.num_blocks)],
        )

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {"gsa.entry.w": self.entry_w.data, "gsa.entry.b": self.entry_b.data}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_tensors(f"gsa.k{i}"))
        return out

    def trainable(self) -> list[Tensor]:
        out = [self.entry_w, self.entry_b]
        for blk in self.blocks:
            out.extend(blk.trainable())
        return out


def gsa_stack(p: GsaStackParams, x: Tensor, cfg: GsaConfig, training: bool,
              rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
    """Entry 1x1 conv, K blocks, then tokens.

    Returns (maps (N, E, C, T1), tokens (N, C*T1, E)).
    """
    h = conv1x1(x, p.entry_w, p.entry_b)
    for blk in p.blocks:
        h = gsa_block(blk, h, cfg, training, rng)
    return h, flatten_permute(h)
