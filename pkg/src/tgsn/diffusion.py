"""Diffusion-based feature augmentation.

A DDPM over flattened, z-scored feature tensors: the forward chain corrupts
data with Gaussian noise under a linear variance schedule; a small MLP with
a learned step-embedding table predicts the added noise; ancestral sampling
runs the chain backwards from pure noise. The intended workflow is pretrain
on a large mixed corpus, fine-tune per class at a reduced learning rate,
then mix generated tensors into the training split only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    Tensor,
    adam_step,
    add,
    concat,
    gather_rows,
    gelu,
    matmul,
    mean_,
    mul,
    parameter,
    trunc_normal,
)
from .errors import ConfigError, DataError, Diverged, SamplingDiverged
from .features import FeatureStats, FeatureTensor


@dataclass
class DiffusionConfig:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden_dim: int = 128
    time_embed_dim: int = 32
    train_steps: int = 400
    finetune_steps: int = 200
    lr: float = 1e-3
    batch_size: int = 32

    def validate(self) -> "DiffusionConfig":
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ConfigError("need 0 < beta_start <= beta_end < 1")
        return self


@dataclass
class DiffusionSchedule:
    betas: np.ndarray        # (D,), step d uses betas[d-1]
    alpha_bar: np.ndarray    # (D,), cumulative products of (1 - beta)

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def validate(self) -> "DiffusionSchedule":
        b = self.betas
        if np.any(b <= 0) or np.any(b >= 1):
            raise ConfigError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ConfigError("betas must be non-decreasing")
        ab = self.alpha_bar
        if np.any(ab <= 0) or np.any(ab >= 1) or np.any(np.diff(ab) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing in (0, 1)")
        return self


def make_schedule(num_steps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    return DiffusionSchedule(
        betas=betas, alpha_bar=np.cumprod(1.0 - betas)
    ).validate()


def q_sample(x0: np.ndarray, d: int | np.ndarray, noise: np.ndarray,
             schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form marginal of the forward chain at step d."""
    x0 = np.asarray(x0)
    d_arr = np.atleast_1d(np.asarray(d))
    if np.any(d_arr < 1) or np.any(d_arr > schedule.num_steps):
        raise DataError(f"step index out of range [1, {schedule.num_steps}]")
    if not np.isfinite(x0).all():
        raise DataError("x0 must be finite")
    if np.ndim(d) == 0:
        ab = float(schedule.alpha_bar[int(d) - 1])
    else:
        ab = schedule.alpha_bar[d_arr - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass
class DenoiserParams:
    """Noise-prediction net: a two-hidden-layer MLP over concat(x, step
    embedding) plus a per-dimension linear skip from x.

    The skip carries the dominant near-identity mapping between heavily
    corrupted inputs and their noise, letting the MLP learn the data-manifold
    correction. The output layer and skip start at zero so the initial
    prediction is zero noise.
    """

    temb: Tensor             # (D, time_embed_dim)
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor
    skip: Tensor             # (flat_dim,)

    @staticmethod
    def create(flat_dim: int, cfg: DiffusionConfig,
               rng: np.random.Generator, dtype=np.float32) -> "DenoiserParams":
        cfg.validate()
        h = cfg.hidden_dim
        he = lambda shape, fan_in: parameter(
            rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), dtype)
        zeros = lambda *shape: parameter(np.zeros(shape), dtype)
        return DenoiserParams(
            temb=parameter(trunc_normal(rng, (cfg.num_steps, cfg.time_embed_dim),
                                        sd=0.02, dtype=dtype), dtype),
            w1=he((flat_dim + cfg.time_embed_dim, h), flat_dim + cfg.time_embed_dim),
            b1=zeros(h),
            w2=he((h, h), h), b2=zeros(h),
            w3=zeros(h, flat_dim), b3=zeros(flat_dim),
            skip=zeros(flat_dim),
        )

    @property
    def flat_dim(self) -> int:
        return self.w3.data.shape[1]

    def trainable(self) -> list[Tensor]:
        return [self.temb, self.w1, self.b1, self.w2, self.b2, self.w3,
                self.b3, self.skip]

    def named_tensors(self, prefix: str = "denoiser") -> dict[str, np.ndarray]:
        names = ["temb", "w1", "b1", "w2", "b2", "w3", "b3", "skip"]
        return {f"{prefix}.{n}": getattr(self, n).data for n in names}

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(*[parameter(t.data.copy(), t.data.dtype)
                                for t in self.trainable()])


def denoise_eps(p: DenoiserParams, x_flat: np.ndarray, d: np.ndarray) -> Tensor:
    """Predict the noise in x_flat (N, dim) corrupted at steps d (N,)."""
    x = Tensor(np.asarray(x_flat, dtype=p.w1.data.dtype))
    emb = gather_rows(p.temb, np.asarray(d, dtype=np.intp) - 1)
    h = concat([x, emb], axis=1)
    h = gelu(add(matmul(h, p.w1), p.b1))
    h = gelu(add(matmul(h, p.w2), p.b2))
    return add(add(matmul(h, p.w3), p.b3), mul(x, p.skip))


def _eps_loss(p: DenoiserParams, x0: np.ndarray, schedule: DiffusionSchedule,
              rng: np.random.Generator) -> Tensor:
    n = x0.shape[0]
    d = rng.integers(1, schedule.num_steps + 1, size=n)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    xd = q_sample(x0, d, noise, schedule).astype(x0.dtype)
    eps_hat = denoise_eps(p, xd, d)
    diff = add(eps_hat, mul(Tensor(noise), -1.0))
    return mean_(mul(diff, diff))


def eval_denoiser_loss(p: DenoiserParams, data: np.ndarray,
                       schedule: DiffusionSchedule, seed: int = 0) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    return float(_eps_loss(p, np.asarray(data, dtype=np.float32),
                           schedule, rng).data)


def train_denoiser(data: np.ndarray, schedule: DiffusionSchedule,
                   params: DenoiserParams, steps: int, lr: float,
                   rng: np.random.Generator,
                   batch_size: int = 32) -> tuple[DenoiserParams, list[float]]:
    """Minimize noise-prediction MSE with Adam; returns (params, loss curve).

    Raises :class:`Diverged` if the loss exceeds 10x its initial value for 50
    consecutive steps.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[1] != params.flat_dim:
        raise DataError(f"data shape {data.shape} does not match denoiser "
                        f"dim {params.flat_dim}")
    if steps == 0:
        return params, []
    tensors = params.trainable()
    state = AdamState()
    losses: list[float] = []
    initial = None
    bad_streak = 0
    for _ in range(steps):
        idx = rng.integers(0, data.shape[0], size=batch_size)
        for t in tensors:
            t.grad = None
        loss = _eps_loss(params, data[idx], schedule, rng)
        loss.backward()
        value = float(loss.data)
        losses.append(value)
        if initial is None:
            initial = value
        if value > 10.0 * initial:
            bad_streak += 1
            if bad_streak >= 50:
                raise Diverged(
                    f"denoiser loss {value:.3g} > 10x initial {initial:.3g} "
                    f"for 50 consecutive steps")
        else:
            bad_streak = 0
        new = adam_step([t.data for t in tensors], [t.grad for t in tensors],
                        state, lr)
        for t, arr in zip(tensors, new):
            t.data = arr
    return params, losses


def p_sample_loop(params: DenoiserParams, schedule: DiffusionSchedule, n: int,
                  rng: np.random.Generator,
                  out_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Ancestral sampling from pure noise down to step 0.

    Uses the noise-prediction parameterization of the reverse mean and fixed
    per-step variance equal to the schedule's beta.
    """
    dim = params.flat_dim
    if n == 0:
        shape = (0, dim) if out_shape is None else (0,) + tuple(out_shape)
        return np.zeros(shape, dtype=np.float32)
    x = rng.standard_normal((n, dim)).astype(np.float32)
    betas = schedule.betas
    alpha_bar = schedule.alpha_bar
    for d in range(schedule.num_steps, 0, -1):
        beta = betas[d - 1]
        alpha = 1.0 - beta
        eps_hat = denoise_eps(params, x, np.full(n, d)).data
        mean = (x - (beta / math.sqrt(1.0 - alpha_bar[d - 1])) * eps_hat) \
            / math.sqrt(alpha)
        if d > 1:
            z = rng.standard_normal((n, dim)).astype(np.float32)
            x = (mean + math.sqrt(beta) * z).astype(np.float32)
        else:
            x = mean.astype(np.float32)
        if not np.isfinite(x).all():
            raise SamplingDiverged(f"non-finite sample at step {d}")
    if out_shape is not None:
        if int(np.prod(out_shape)) != dim:
            raise DataError(f"out_shape {out_shape} does not match dim {dim}")
        x = x.reshape((n,) + tuple(out_shape))
    return x


def pretrain_finetune(pretrain_data: np.ndarray, target_data: np.ndarray,
                      schedule: DiffusionSchedule, cfg: DiffusionConfig,
                      rng: np.random.Generator) -> DenoiserParams:
    """Pretrain on the large corpus, fine-tune on the target at lr/10."""
    pretrain_data = np.asarray(pretrain_data, dtype=np.float32)
    target_data = np.asarray(target_data, dtype=np.float32)
    if pretrain_data.shape[1] != target_data.shape[1]:
        raise DataError(
            f"corpora disagree on feature dim: {pretrain_data.shape[1]} vs "
            f"{target_data.shape[1]}")
    params = DenoiserParams.create(pretrain_data.shape[1], cfg, rng)
    params, _ = train_denoiser(pretrain_data, schedule, params,
                               cfg.train_steps, cfg.lr, rng, cfg.batch_size)
    if cfg.finetune_steps == 0:
        return params
    params, _ = train_denoiser(target_data, schedule, params,
                               cfg.finetune_steps, cfg.lr / 10.0, rng,
                               cfg.batch_size)
    return params


def flatten_tensors(tensors: list[FeatureTensor],
                    stats: FeatureStats) -> np.ndarray:
    """Z-score and flatten a tensor list to (n, F*C*T1) float32 rows."""
    return np.stack([
        stats.apply(t.values).reshape(-1).astype(np.float32) for t in tensors
    ])


def train_class_denoisers(train_tensors: list[FeatureTensor],
                          stats: FeatureStats, schedule: DiffusionSchedule,
                          cfg: DiffusionConfig, rng: np.random.Generator,
                          pretrained: DenoiserParams | None = None
                          ) -> dict[int, DenoiserParams]:
    """One denoiser per class, trained (or fine-tuned) on that class's rows."""
    by_class: dict[int, list[FeatureTensor]] = {}
    for t in train_tensors:
        by_class.setdefault(t.class_label, []).append(t)
    out: dict[int, DenoiserParams] = {}
    for cls in sorted(by_class):
        data = flatten_tensors(by_class[cls], stats)
        if pretrained is not None:
            params = pretrained.copy()
            steps, lr = cfg.finetune_steps, cfg.lr / 10.0
        else:
            params = DenoiserParams.create(data.shape[1], cfg, rng)
            steps, lr = cfg.train_steps, cfg.lr
        params, _ = train_denoiser(data, schedule, params, steps, lr, rng,
                                   cfg.batch_size)
        out[cls] = params
    return out


def augment_dataset(real: list[FeatureTensor],
                    denoisers: dict[int, DenoiserParams],
                    schedule: DiffusionSchedule, ratio: float,
                    stats: FeatureStats,
                    rng: np.random.Generator) -> list[FeatureTensor]:
    """Append ceil(ratio * n_class) generated tensors per class.

    Generated tensors carry ``origin='generated'``, the class label, and an
    MMSE resampled from that class's empirical values; they are intended for
    training splits only.
    """
    if ratio < 0:
        raise ConfigError(f"ratio must be >= 0, got {ratio}")
    out = list(real)
    if ratio == 0 or not real:
        return out
    shape = real[0].shape
    names = real[0].feature_names
    by_class: dict[int, list[FeatureTensor]] = {}
    for t in real:
        by_class.setdefault(t.class_label, []).append(t)
    for cls in sorted(by_class):
        members = by_class[cls]
        n_gen = math.ceil(ratio * len(members))
        if cls not in denoisers:
            raise DataError(f"no denoiser for class {cls}")
        z = p_sample_loop(denoisers[cls], schedule, n_gen, rng, out_shape=shape)
        mmse_pool = np.array([t.mmse for t in members])
        for i in range(n_gen):
            values = stats.invert(z[i].astype(np.float32))
            out.append(FeatureTensor(
                values=values.astype(np.float32),
                feature_names=names,
                subject_id=f"gen{cls}_{i:03d}",
                class_label=cls,
                mmse=float(rng.choice(mmse_pool)),
                origin="generated",
            ))
    return out
