"""Joint training with dynamic task weighting, k-fold orchestration, metrics.

The classification (cross-entropy) and regression (MSE on the raw 0-30 MMSE
scale) losses are combined with per-epoch weights derived from the ratio of
each task's epoch-mean training loss to its previous epoch's value, pushed
through a temperature softmax and rescaled to sum to the task count. The
ratio needs two completed epochs, so the weights computed after epoch e
apply during epoch e+1; epochs 1 and 2 run with equal weights.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .autodiff import AdamState, Tensor, adam_step, mean_, mul, softmax, sum_, log_softmax, add
from .data import DatasetSplit, make_folds
from .diffusion import (
    DiffusionConfig,
    DenoiserParams,
    augment_dataset,
    make_schedule,
    train_class_denoisers,
)
from .errors import ConfigError, DataError, DegenerateLossRatio, MetricUndefined
from .features import FeatureTensor, fit_feature_stats
from .gsa import GsaConfig
from .model import ModelConfig, TgsnModel
from .tgq import TASK_CLASS, TASK_MMSE, TgqConfig
from .tgq import attention_map as _attention_map

logger = logging.getLogger(__name__)


# -- dynamic task weights -------------------------------------------------------

@dataclass
class LossWeightConfig:
    num_tasks: int = 2
    temperature: float = 5.0

    def validate(self) -> "LossWeightConfig":
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        return self


def update_task_weights(prev: tuple[float, float], curr: tuple[float, float],
                        cfg: LossWeightConfig) -> tuple[float, float]:
    """Weights from loss ratios: softmax(ratio / temperature) * num_tasks."""
    if prev[0] <= 0 or prev[1] <= 0:
        raise DegenerateLossRatio(f"non-positive previous losses {prev}")
    r_ce = curr[0] / prev[0]
    r_mse = curr[1] / prev[1]
    e_ce = math.exp(r_ce / cfg.temperature)
    e_mse = math.exp(r_mse / cfg.temperature)
    denom = e_ce + e_mse
    return (cfg.num_tasks * e_ce / denom, cfg.num_tasks * e_mse / denom)


@dataclass
class TaskWeightState:
    """Tracks epoch-mean losses and the weights in force for the next epoch."""

    epoch: int = 0
    prev_losses: tuple[float, float] | None = None
    weights: tuple[float, float] = (1.0, 1.0)

    def advance(self, epoch_losses: tuple[float, float],
                cfg: LossWeightConfig) -> None:
        if self.prev_losses is not None:
            self.weights = update_task_weights(self.prev_losses, epoch_losses, cfg)
        self.prev_losses = epoch_losses
        self.epoch += 1


def total_loss(logits: Tensor, class_targets: np.ndarray, mmse_hat: Tensor,
               mmse_targets: np.ndarray, weights: tuple[float, float]
               ) -> tuple[Tensor, float, float]:
    """Weighted CE + MSE; returns (loss node, ce value, mse value)."""
    n, k = logits.data.shape
    targets = np.asarray(class_targets, dtype=np.intp)
    if targets.min() < 0 or targets.max() >= k:
        raise DataError(f"class target out of range [0, {k})")
    onehot = np.zeros((n, k), dtype=logits.data.dtype)
    onehot[np.arange(n), targets] = 1.0
    ce = mul(sum_(mul(log_softmax(logits), Tensor(onehot))), -1.0 / n)
    diff = add(mmse_hat, Tensor(-np.asarray(mmse_targets, dtype=mmse_hat.data.dtype)))
    mse = mean_(mul(diff, diff))
    loss = add(mul(ce, float(weights[0])), mul(mse, float(weights[1])))
    return loss, float(ce.data), float(mse.data)


# -- metrics ----------------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float
    auc: float
    sen: float
    spe: float
    rmse: float

    def validate(self) -> "MetricsReport":
        for name in ("acc", "auc", "sen", "spe"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0):
                raise DataError(f"{name}={v} outside [0, 100]")
        if self.rmse < 0:
            raise DataError(f"rmse={self.rmse} negative")
        return self

    def as_dict(self) -> dict[str, float]:
        return {"acc": self.acc, "auc": self.auc, "sen": self.sen,
                "spe": self.spe, "rmse": self.rmse}


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("AUC undefined: single-class targets")
    ranks = rankdata(scores)
    return (float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0) \
        / (n_pos * n_neg)


def compute_metrics(probs: np.ndarray, class_targets: np.ndarray,
                    mmse_pred: np.ndarray, mmse_targets: np.ndarray
                    ) -> MetricsReport:
    """ACC/AUC/SEN/SPE in percent plus RMSE on the raw MMSE scale.

    Binary tasks treat class 1 as positive; tasks with more classes use
    macro one-vs-rest averaging for AUC, sensitivity, and specificity.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(class_targets, dtype=np.intp)
    n, k = probs.shape
    if len(targets) != n:
        raise DataError(f"{n} prediction rows vs {len(targets)} targets")
    present = np.unique(targets)
    if len(present) < 2:
        raise MetricUndefined("metrics undefined: single-class targets")
    if len(present) < k:
        raise MetricUndefined(
            f"classes {sorted(set(range(k)) - set(present.tolist()))} missing "
            f"from targets")
    preds = probs.argmax(axis=1)
    acc = 100.0 * float((preds == targets).mean())
    if k == 2:
        auc = 100.0 * _binary_auc(probs[:, 1], targets == 1)
        tp = int(((preds == 1) & (targets == 1)).sum())
        fn = int(((preds == 0) & (targets == 1)).sum())
        tn = int(((preds == 0) & (targets == 0)).sum())
        fp = int(((preds == 1) & (targets == 0)).sum())
        sen = 100.0 * tp / (tp + fn)
        spe = 100.0 * tn / (tn + fp)
    else:
        aucs, sens, spes = [], [], []
        for c in range(k):
            pos = targets == c
            aucs.append(_binary_auc(probs[:, c], pos))
            pred_pos = preds == c
            sens.append(float((pred_pos & pos).sum()) / float(pos.sum()))
            spes.append(float((~pred_pos & ~pos).sum()) / float((~pos).sum()))
        auc = 100.0 * float(np.mean(aucs))
        sen = 100.0 * float(np.mean(sens))
        spe = 100.0 * float(np.mean(spes))
    rmse = float(np.sqrt(np.mean((np.asarray(mmse_pred, dtype=np.float64)
                                  - np.asarray(mmse_targets, dtype=np.float64)) ** 2)))
    return MetricsReport(acc=acc, auc=auc, sen=sen, spe=spe, rmse=rmse).validate()


def aggregate_metrics(reports: list[MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and SD per metric over fold-runs."""
    out = {}
    for name in ("acc", "auc", "sen", "spe", "rmse"):
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = (float(vals.mean()), float(vals.std()))
    return out


# -- experiment configuration ------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 3e-3
    max_epochs: int = 120
    patience: int = 25
    batch_size: int = 32
    loss_weights: LossWeightConfig = field(default_factory=LossWeightConfig)

    def validate(self) -> "TrainConfig":
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience, batch_size must be >= 1")
        self.loss_weights.validate()
        return self


@dataclass
class ExperimentConfig:
    gsa: GsaConfig = field(default_factory=GsaConfig)
    tgq: TgqConfig = field(default_factory=TgqConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    augment_ratio: float = 0.5
    use_ptda: bool = True
    use_gsa: bool = True
    use_tgq: bool = True

    def validate(self) -> "ExperimentConfig":
        self.gsa.validate()
        self.tgq.validate()
        self.train.validate()
        self.diffusion.validate()
        if self.augment_ratio < 0:
            raise ConfigError("augment_ratio must be >= 0")
        return self


# -- fold training -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lambda_ce: float
    lambda_mse: float
    train_ce: float
    train_mse: float
    val_total: float


@dataclass
class HygieneRecord:
    """Provenance of everything that influenced fitting and model selection."""

    norm_subjects: tuple[str, ...]
    diffusion_subjects: tuple[str, ...]
    selection_subjects: tuple[str, ...]
    val_origins: tuple[str, ...]
    test_origins: tuple[str, ...]
    generated_train_ids: tuple[str, ...]


@dataclass
class FoldResult:
    fold_index: int
    seed: int
    split: DatasetSplit
    metrics: MetricsReport
    history: list[EpochRecord]
    best_epoch: int
    best_val: float
    named_params: dict[str, np.ndarray]
    hygiene: HygieneRecord
    attention: dict[str, dict[str, np.ndarray]]
    test_probs: np.ndarray
    test_mmse_pred: np.ndarray


def _stack(tensors: list[FeatureTensor], stats) -> tuple[np.ndarray, np.ndarray,
                                                          np.ndarray]:
    x = np.stack([stats.apply(t.values) for t in tensors]).astype(np.float32)
    y = np.array([t.class_label for t in tensors], dtype=np.intp)
    m = np.array([t.mmse for t in tensors], dtype=np.float32)
    return x, y, m


def train_fold(tensors: list[FeatureTensor], split: DatasetSplit,
               cfg: ExperimentConfig, seed: int,
               pretrained: DenoiserParams | None = None) -> FoldResult:
    """Train on one fold; early-stop on validation total loss; eval on test."""
    cfg.validate()
    by_id = {t.subject_id: t for t in tensors}
    for part, ids in (("train", split.train), ("val", split.val),
                      ("test", split.test)):
        if not ids:
            raise DataError(f"fold {split.fold_index}: empty {part} partition")
        missing = [s for s in ids if s not in by_id]
        if missing:
            raise DataError(f"fold {split.fold_index}: no features for {missing}")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DataError(f"inconsistent feature shapes: {sorted(shapes)}")
    n_feat, n_chan, n_ep = next(iter(shapes))

    train_t = [by_id[s] for s in split.train]
    val_t = [by_id[s] for s in split.val]
    test_t = [by_id[s] for s in split.test]

    stats = fit_feature_stats(train_t)
    rng_model = np.random.default_rng(
        np.random.SeedSequence([seed, split.fold_index, 1]))
    rng_train = np.random.default_rng(
        np.random.SeedSequence([seed, split.fold_index, 2]))
    rng_diff = np.random.default_rng(
        np.random.SeedSequence([seed, split.fold_index, 3]))

    train_inputs = list(train_t)
    diffusion_subjects: tuple[str, ...] = ()
    if cfg.use_ptda and cfg.augment_ratio > 0:
        schedule = make_schedule(cfg.diffusion.num_steps, cfg.diffusion.beta_start,
                                 cfg.diffusion.beta_end)
        denoisers = train_class_denoisers(train_t, stats, schedule,
                                          cfg.diffusion, rng_diff, pretrained)
        train_inputs = augment_dataset(train_t, denoisers, schedule,
                                       cfg.augment_ratio, stats, rng_diff)
        diffusion_subjects = tuple(sorted(t.subject_id for t in train_t))

    x_train, y_train, m_train = _stack(train_inputs, stats)
    x_val, y_val, m_val = _stack(val_t, stats)
    x_test, y_test, m_test = _stack(test_t, stats)

    model_cfg = ModelConfig(n_features=n_feat, n_channels=n_chan, n_epochs=n_ep,
                            gsa=cfg.gsa, tgq=cfg.tgq, use_gsa=cfg.use_gsa,
                            use_tgq=cfg.use_tgq)
    model = TgsnModel(model_cfg, rng_model)
    params = model.trainable()
    adam = AdamState()
    wcfg = cfg.train.loss_weights
    wstate = TaskWeightState()
    dynamic = cfg.use_tgq

    best_val = math.inf
    best_epoch = -1
    best_snapshot = model.snapshot()
    history: list[EpochRecord] = []
    n_train = x_train.shape[0]

    for epoch in range(1, cfg.train.max_epochs + 1):
        lam = wstate.weights if dynamic else (1.0, 1.0)
        order = rng_train.permutation(n_train)
        sum_ce = sum_mse = 0.0
        for lo in range(0, n_train, cfg.train.batch_size):
            idx = order[lo:lo + cfg.train.batch_size]
            for t in params:
                t.grad = None
            out = model.forward(x_train[idx], training=True, rng=rng_train)
            loss, ce, mse = total_loss(out.logits, y_train[idx], out.mmse,
                                       m_train[idx], lam)
            loss.backward()
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
                     for t in params]
            new = adam_step([t.data for t in params], grads, adam, cfg.train.lr)
            for t, arr in zip(params, new):
                t.data = arr
            sum_ce += ce * len(idx)
            sum_mse += mse * len(idx)
        epoch_ce = sum_ce / n_train
        epoch_mse = sum_mse / n_train

        vout = model.forward(x_val, training=False)
        vloss, _, _ = total_loss(vout.logits, y_val, vout.mmse, m_val, lam)
        val_total = float(vloss.data)
        history.append(EpochRecord(epoch, lam[0], lam[1], epoch_ce, epoch_mse,
                                   val_total))
        logger.info("fold=%d seed=%d epoch=%d lambda_ce=%.6f lambda_mse=%.6f "
                    "train_ce=%.5f train_mse=%.5f val_total=%.5f",
                    split.fold_index, seed, epoch, lam[0], lam[1], epoch_ce,
                    epoch_mse, val_total)
        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_snapshot = model.snapshot()
        if dynamic:
            wstate.advance((epoch_ce, epoch_mse), wcfg)
        if epoch - best_epoch >= cfg.train.patience:
            break

    model.restore(best_snapshot)
    tout = model.forward(x_test, training=False)
    probs = softmax(tout.logits).data
    mmse_pred = np.asarray(tout.mmse.data)
    metrics = compute_metrics(probs, y_test, mmse_pred, m_test)

    attention: dict[str, dict[str, np.ndarray]] = {}
    for task, arr in tout.attention.items():
        maps = _attention_map(arr, n_chan, n_ep)
        attention[task] = {sid: maps[i] for i, sid in enumerate(split.test)}

    hygiene = HygieneRecord(
        norm_subjects=tuple(sorted(t.subject_id for t in train_t)),
        diffusion_subjects=diffusion_subjects,
        selection_subjects=tuple(sorted(set(split.train) | set(split.val))),
        val_origins=tuple(t.origin for t in val_t),
        test_origins=tuple(t.origin for t in test_t),
        generated_train_ids=tuple(t.subject_id for t in train_inputs
                                  if t.origin == "generated"),
    )
    return FoldResult(
        fold_index=split.fold_index, seed=seed, split=split, metrics=metrics,
        history=history, best_epoch=best_epoch, best_val=best_val,
        named_params=best_snapshot, hygiene=hygiene, attention=attention,
        test_probs=probs, test_mmse_pred=mmse_pred,
    )


def audit_fold_hygiene(result: FoldResult) -> list[str]:
    """Return provenance violations (empty list = clean fold)."""
    violations = []
    test = set(result.split.test)
    if test & set(result.hygiene.norm_subjects):
        violations.append(f"fold {result.fold_index}: test subjects in "
                          f"normalization stats")
    if test & set(result.hygiene.diffusion_subjects):
        violations.append(f"fold {result.fold_index}: test subjects in "
                          f"diffusion training")
    if test & set(result.hygiene.selection_subjects):
        violations.append(f"fold {result.fold_index}: test subjects in "
                          f"model selection")
    if any(o == "generated" for o in result.hygiene.val_origins):
        violations.append(f"fold {result.fold_index}: generated samples in val")
    if any(o == "generated" for o in result.hygiene.test_origins):
        violations.append(f"fold {result.fold_index}: generated samples in test")
    return violations


# -- cross-validation ------------------------------------------------------------------

@dataclass
class RunResult:
    task_name: str
    fold_results: list[FoldResult]

    def reports(self) -> list[MetricsReport]:
        return [r.metrics for r in self.fold_results]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        return aggregate_metrics(self.reports())


def select_task(tensors: list[FeatureTensor],
                classes: list[int]) -> list[FeatureTensor]:
    """Restrict to the given original class labels, remapped to 0..n-1."""
    if len(set(classes)) != len(classes) or len(classes) < 2:
        raise ConfigError(f"task needs >= 2 distinct classes, got {classes}")
    mapping = {c: i for i, c in enumerate(classes)}
    out = [dataclasses.replace(t, class_label=mapping[t.class_label])
           for t in tensors if t.class_label in mapping]
    if not out:
        raise DataError(f"no subjects with classes {classes}")
    return out


def _run_one(args) -> FoldResult:
    tensors, split, cfg, seed, pretrained = args
    return train_fold(tensors, split, cfg, seed, pretrained)


def run_cv(tensors: list[FeatureTensor], k: int, seeds: list[int],
           cfg: ExperimentConfig, task_name: str = "all",
           pretrained: DenoiserParams | None = None, jobs: int = 1) -> RunResult:
    """k folds x seeds fold-runs, aggregated mean +- SD."""
    ids = sorted(t.subject_id for t in tensors)
    labels = {t.subject_id: t.class_label for t in tensors}
    tasks = []
    for seed in seeds:
        for split in make_folds(ids, k, seed, labels=labels):
            tasks.append((tensors, split, cfg, seed, pretrained))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    results.sort(key=lambda r: (r.seed, r.fold_index))
    return RunResult(task_name=task_name, fold_results=results)


ABLATION_ORDER = [
    (False, False, False), (True, False, False), (False, True, False),
    (False, False, True), (True, True, False), (True, False, True),
    (False, True, True), (True, True, True),
]


def ablation_grid(tensors: list[FeatureTensor], k: int, seeds: list[int],
                  cfg: ExperimentConfig, task_name: str = "all",
                  pretrained: DenoiserParams | None = None, jobs: int = 1
                  ) -> list[tuple[tuple[bool, bool, bool], RunResult]]:
    """All 2^3 on/off combinations of augmentation, GSA, and TGQ."""
    rows = []
    for ptda, gsa, tgq in ABLATION_ORDER:
        variant = dataclasses.replace(cfg, use_ptda=ptda, use_gsa=gsa,
                                      use_tgq=tgq)
        rows.append(((ptda, gsa, tgq),
                     run_cv(tensors, k, seeds, variant, task_name,
                            pretrained if ptda else None, jobs)))
    return rows
