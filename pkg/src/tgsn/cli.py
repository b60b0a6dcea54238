"""Command-line front end.

Every subcommand reads an optional JSON config plus flag overrides, writes
its artifacts under a run directory (root overridable via the TGSN_RUN_DIR
environment variable) together with the fully resolved config echo, and
exits 0 on success, 1 on configuration errors, 2 on data errors, 3 on
numeric failures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import format_float
from .autodiff import load_checkpoint, save_checkpoint
from .data import (
    DatasetSplit,
    MmseLink,
    SynthConfig,
    load_recording,
    load_split_manifest,
    make_folds,
    save_recording,
    save_split_manifest,
    synthesize_dataset,
)
from .diffusion import (
    DenoiserParams,
    DiffusionConfig,
    augment_dataset,
    make_schedule,
    train_class_denoisers,
    train_denoiser,
    flatten_tensors,
)
from .errors import ConfigError, DataError, TgsnError
from .features import (
    BandSpec,
    FeatureConfig,
    FeatureStats,
    FeatureTensor,
    extract_features,
    fit_feature_stats,
    load_feature_tensor,
    save_feature_tensor,
)
from .gsa import GsaConfig
from .model import ModelConfig, TgsnModel
from .tgq import TgqConfig, attention_map
from .training import (
    ExperimentConfig,
    LossWeightConfig,
    TrainConfig,
    ablation_grid,
    audit_fold_hygiene,
    compute_metrics,
    run_cv,
    select_task,
)

logger = logging.getLogger("tgsn")

PROFILES: dict[str, dict] = {
    "desk": {
        "train": {"lr": 3e-3, "max_epochs": 120, "patience": 25},
        "diffusion": {"num_steps": 50, "beta_end": 0.35},
        "synth": {"subjects_per_class": [20, 20, 20]},
    },
    "full": {
        "train": {"lr": 1e-5, "max_epochs": 500, "patience": 100},
        "diffusion": {"num_steps": 1000},
    },
}

METRIC_NAMES = ("acc", "auc", "sen", "spe", "rmse")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, d: dict, converters: dict | None = None):
    converters = converters or {}
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        conv = converters.get(k)
        kwargs[k] = conv(v) if conv is not None else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def _tuple2(v):
    return tuple(tuple(row) for row in v)


def _synth_config(d: dict) -> SynthConfig:
    return _build(SynthConfig, d, {
        "subjects_per_class": tuple,
        "band_edges": _tuple2,
        "band_gains": _tuple2,
        "class_severity": tuple,
        "channels": tuple,
        "signal_channels": lambda v: tuple(v) if v is not None else None,
        "baseline_gains": tuple,
        "mmse_link": lambda v: _build(MmseLink, v),
    })


def _feature_config(d: dict) -> FeatureConfig:
    return _build(FeatureConfig, d, {
        "bands": lambda rows: tuple(_build(BandSpec, r) for r in rows),
    })


def _experiment_config(merged: dict) -> ExperimentConfig:
    return ExperimentConfig(
        gsa=_build(GsaConfig, merged.get("gsa", {})),
        tgq=_build(TgqConfig, merged.get("tgq", {})),
        train=_build(TrainConfig, merged.get("train", {}), {
            "loss_weights": lambda v: _build(LossWeightConfig, v),
        }),
        diffusion=_build(DiffusionConfig, merged.get("diffusion", {})),
        augment_ratio=merged.get("augment_ratio", 0.5),
        use_ptda=merged.get("use_ptda", True),
        use_gsa=merged.get("use_gsa", True),
        use_tgq=merged.get("use_tgq", True),
    ).validate()


class ResolvedConfig:
    """Dataclass views over the merged profile + file + flag dictionary."""

    def __init__(self, merged: dict):
        self.merged = merged
        self.profile = merged.get("profile", "desk")
        self.seeds = [int(s) for s in merged.get("seeds", [1, 2, 3])]
        self.k = int(merged.get("k", 5))
        self.task_classes = merged.get("task_classes")
        self.task_name = merged.get("task_name", "all")
        self.jobs = int(merged.get("jobs", 1))
        self.synth = _synth_config(merged.get("synth", {}))
        self.features = _feature_config(merged.get("features", {}))
        self.experiment = _experiment_config(merged)


def resolve_config(args: argparse.Namespace) -> ResolvedConfig:
    file_dict: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_dict = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_dict, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    profile = getattr(args, "profile", None) or file_dict.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} "
                          f"(choose from {sorted(PROFILES)})")
    merged = _deep_merge(PROFILES[profile], file_dict)
    merged["profile"] = profile

    if getattr(args, "seed", None) is not None:
        merged["seeds"] = [args.seed]
    if getattr(args, "seeds", None):
        merged["seeds"] = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "k", None) is not None:
        merged["k"] = args.k
    if getattr(args, "epochs", None) is not None:
        merged.setdefault("train", {})["max_epochs"] = args.epochs
    if getattr(args, "aug_ratio", None) is not None:
        merged["augment_ratio"] = args.aug_ratio
    if getattr(args, "diffusion_steps", None) is not None:
        merged.setdefault("diffusion", {})["num_steps"] = args.diffusion_steps
    if getattr(args, "jobs", None) is not None:
        merged["jobs"] = args.jobs
    if getattr(args, "task_classes", None):
        merged["task_classes"] = [int(c) for c in args.task_classes.split(",")]
    if getattr(args, "task_name", None):
        merged["task_name"] = args.task_name
    if getattr(args, "no_ptda", False):
        merged["use_ptda"] = False
    if getattr(args, "no_gsa", False):
        merged["use_gsa"] = False
    if getattr(args, "no_tgq", False):
        merged["use_tgq"] = False
    for key in ("features_dir", "recordings_dir", "pretrain_dir"):
        val = getattr(args, key.replace("_dir", ""), None)
        if val:
            merged[key] = str(val)
    return ResolvedConfig(merged)


def _out_dir(args: argparse.Namespace, cfg: ResolvedConfig | None = None) -> Path:
    out = getattr(args, "out", None)
    if out is None and cfg is not None:
        out = cfg.merged.get("out_dir")
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    path = Path(out)
    root = os.environ.get("TGSN_RUN_DIR")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: ResolvedConfig, out: Path, extra: dict | None = None) -> None:
    merged = copy.deepcopy(cfg.merged)
    if extra:
        merged.update(extra)
    with open(out / "config.json", "w") as fh:
        json.dump(merged, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_features_dir(path: str | Path) -> list[FeatureTensor]:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"features directory not found: {p}")
    files = sorted(p.glob("*.feat"))
    if not files:
        raise DataError(f"no .feat files under {p}")
    return [load_feature_tensor(f) for f in files]


def _features_source(args, cfg: ResolvedConfig) -> list[FeatureTensor]:
    src = getattr(args, "features", None) or cfg.merged.get("features_dir")
    if not src:
        raise ConfigError("a features directory is required (--features)")
    return _load_features_dir(src)


def _task_tensors(tensors: list[FeatureTensor], cfg: ResolvedConfig
                  ) -> tuple[list[FeatureTensor], int]:
    if cfg.task_classes:
        tensors = select_task(tensors, list(cfg.task_classes))
        n_classes = len(cfg.task_classes)
    else:
        n_classes = len({t.class_label for t in tensors})
    cfg.experiment.tgq.num_classes = n_classes
    return tensors, n_classes


def _pretrained_denoiser(args, cfg: ResolvedConfig) -> DenoiserParams | None:
    src = getattr(args, "pretrain_corpus", None) or cfg.merged.get("pretrain_dir")
    if not src:
        return None
    tensors = _load_features_dir(src)
    stats = fit_feature_stats(tensors)
    data = flatten_tensors(tensors, stats)
    dcfg = cfg.experiment.diffusion
    schedule = make_schedule(dcfg.num_steps, dcfg.beta_start, dcfg.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seeds[0], 0x9D1]))
    params = DenoiserParams.create(data.shape[1], dcfg, rng)
    params, _ = train_denoiser(data, schedule, params, dcfg.train_steps,
                               dcfg.lr, rng, dcfg.batch_size)
    return params


def _write_results_csv(path: Path, task: str, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "fold", "seed"] + list(METRIC_NAMES))
        for r in results:
            row = [task, str(r.fold_index), str(r.seed)]
            row += [format_float(getattr(r.metrics, m)) for m in METRIC_NAMES]
            writer.writerow(row)


def _write_summary_csv(path: Path, task: str, aggregate: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["task"]
        for m in METRIC_NAMES:
            header += [f"{m}_mean", f"{m}_sd"]
        writer.writerow(header)
        row = [task]
        for m in METRIC_NAMES:
            row += [format_float(aggregate[m][0]), format_float(aggregate[m][1])]
        writer.writerow(row)


def _write_weights_csv(path: Path, task: str, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "seed", "fold", "epoch", "lambda_ce",
                         "lambda_mse", "train_ce", "train_mse", "val_total"])
        for r in results:
            for rec in r.history:
                writer.writerow([
                    task, str(r.seed), str(r.fold_index), str(rec.epoch),
                    format_float(rec.lambda_ce), format_float(rec.lambda_mse),
                    format_float(rec.train_ce), format_float(rec.train_mse),
                    format_float(rec.val_total),
                ])


def _write_hygiene_csv(path: Path, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "fold", "violation"])
        for r in results:
            for v in audit_fold_hygiene(r):
                writer.writerow([str(r.seed), str(r.fold_index), v])


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    recs = synthesize_dataset(cfg.synth)
    for rec in recs:
        save_recording(rec, out / f"{rec.subject_id}.rec")
    _echo_config(cfg, out)
    logger.info("wrote %d recordings to %s", len(recs), out)
    return 0


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    src = getattr(args, "recordings", None) or cfg.merged.get("recordings_dir")
    if not src:
        raise ConfigError("a recordings directory is required (--recordings)")
    src = Path(src)
    files = sorted(src.glob("*.rec"))
    if not files:
        raise DataError(f"no .rec files under {src}")
    for f in files:
        rec = load_recording(f)
        tensor = extract_features(rec, cfg.features)
        save_feature_tensor(tensor, out / f"{rec.subject_id}.feat")
    _echo_config(cfg, out)
    logger.info("extracted features for %d recordings into %s", len(files), out)
    return 0


def cmd_pretrain_diffusion(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors = _features_source(args, cfg)
    stats = fit_feature_stats(tensors)
    data = flatten_tensors(tensors, stats)
    dcfg = cfg.experiment.diffusion
    schedule = make_schedule(dcfg.num_steps, dcfg.beta_start, dcfg.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seeds[0], 0x9D1]))
    params = DenoiserParams.create(data.shape[1], dcfg, rng)
    params, losses = train_denoiser(data, schedule, params, dcfg.train_steps,
                                    dcfg.lr, rng, dcfg.batch_size)
    named = params.named_tensors()
    named["stats.mean"] = stats.mean
    named["stats.sd"] = stats.sd
    named["meta.shape"] = np.array(tensors[0].shape, dtype=np.float32)
    save_checkpoint(named, out / "denoiser.ckpt")
    _echo_config(cfg, out)
    logger.info("pretrained denoiser on %d tensors (final loss %.4f)",
                len(tensors), losses[-1] if losses else float("nan"))
    return 0


def _denoiser_from_ckpt(named: dict) -> DenoiserParams:
    from .autodiff import parameter
    try:
        return DenoiserParams(*[parameter(named[f"denoiser.{n}"])
                                for n in ("temb", "w1", "b1", "w2", "b2",
                                          "w3", "b3")])
    except KeyError as exc:
        raise DataError(f"checkpoint is missing denoiser tensor {exc}") from exc


def cmd_augment(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors = _features_source(args, cfg)
    real = [t for t in tensors if t.origin == "real"]
    if not real:
        raise DataError("no real feature tensors to augment")
    stats = fit_feature_stats(real)
    dcfg = cfg.experiment.diffusion
    schedule = make_schedule(dcfg.num_steps, dcfg.beta_start, dcfg.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seeds[0], 0xA46]))
    pretrained = None
    ckpt = getattr(args, "pretrain_corpus", None)
    if ckpt:
        pretrained = _denoiser_from_ckpt(load_checkpoint(ckpt))
    denoisers = train_class_denoisers(real, stats, schedule, dcfg, rng,
                                      pretrained)
    ratio = cfg.experiment.augment_ratio
    mixed = augment_dataset(real, denoisers, schedule, ratio, stats, rng)
    generated = [t for t in mixed if t.origin == "generated"]
    for t in generated:
        save_feature_tensor(t, out / f"{t.subject_id}.feat")
    _echo_config(cfg, out)
    logger.info("wrote %d generated tensors (ratio %.2f) to %s",
                len(generated), ratio, out)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors, _ = _task_tensors(_features_source(args, cfg), cfg)
    pretrained = _pretrained_denoiser(args, cfg)
    result = run_cv(tensors, cfg.k, cfg.seeds, cfg.experiment,
                    task_name=cfg.task_name, pretrained=pretrained,
                    jobs=cfg.jobs)
    _echo_config(cfg, out)
    _write_results_csv(out / "results.csv", cfg.task_name, result.fold_results)
    _write_summary_csv(out / "summary.csv", cfg.task_name, result.aggregate())
    _write_weights_csv(out / "weights.csv", cfg.task_name, result.fold_results)
    _write_hygiene_csv(out / "hygiene.csv", result.fold_results)
    ids = sorted(t.subject_id for t in tensors)
    labels = {t.subject_id: t.class_label for t in tensors}
    for seed in cfg.seeds:
        folds = make_folds(ids, cfg.k, seed, labels=labels)
        save_split_manifest(folds, out / f"splits_seed{seed}.json")
    for r in result.fold_results:
        save_checkpoint(r.named_params,
                        out / f"ckpt_fold{r.fold_index}_seed{r.seed}.ckpt")
    agg = result.aggregate()
    logger.info("task=%s acc=%.2f+-%.2f rmse=%.3f+-%.3f", cfg.task_name,
                agg["acc"][0], agg["acc"][1], agg["rmse"][0], agg["rmse"][1])
    return 0


def _model_for_eval(cfg: ResolvedConfig, tensors: list[FeatureTensor],
                    ckpt_path: str) -> tuple[TgsnModel, dict]:
    n_feat, n_chan, n_ep = tensors[0].shape
    model_cfg = ModelConfig(
        n_features=n_feat, n_channels=n_chan, n_epochs=n_ep,
        gsa=cfg.experiment.gsa, tgq=cfg.experiment.tgq,
        use_gsa=cfg.experiment.use_gsa, use_tgq=cfg.experiment.use_tgq,
    )
    model = TgsnModel(model_cfg, np.random.default_rng(0))
    named = load_checkpoint(ckpt_path)
    model.restore(named)
    return model, named


def _eval_inputs(cfg: ResolvedConfig, args,
                 tensors: list[FeatureTensor]) -> tuple[DatasetSplit,
                                                        list[FeatureTensor]]:
    splits = load_split_manifest(args.split)
    fold = int(args.fold)
    matches = [s for s in splits if s.fold_index == fold]
    if not matches:
        raise DataError(f"fold {fold} not present in {args.split}")
    split = matches[0]
    by_id = {t.subject_id: t for t in tensors}
    missing = [s for s in split.test if s not in by_id]
    if missing:
        raise DataError(f"no features for test subjects {missing}")
    return split, [by_id[s] for s in split.test]


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors, _ = _task_tensors(_features_source(args, cfg), cfg)
    split, test_t = _eval_inputs(cfg, args, tensors)
    by_id = {t.subject_id: t for t in tensors}
    train_t = [by_id[s] for s in split.train]
    stats = fit_feature_stats(train_t)
    model, _ = _model_for_eval(cfg, tensors, args.ckpt)
    x = np.stack([stats.apply(t.values) for t in test_t]).astype(np.float32)
    outp = model.forward(x, training=False)
    from .autodiff import softmax as _softmax
    probs = _softmax(outp.logits).data
    metrics = compute_metrics(
        probs, np.array([t.class_label for t in test_t]),
        np.asarray(outp.mmse.data), np.array([t.mmse for t in test_t]))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "fold"] + list(METRIC_NAMES))
        writer.writerow([cfg.task_name, str(split.fold_index)]
                        + [format_float(getattr(metrics, m))
                           for m in METRIC_NAMES])
    _echo_config(cfg, out)
    logger.info("fold %d: acc=%.2f rmse=%.3f", split.fold_index, metrics.acc,
                metrics.rmse)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors, _ = _task_tensors(_features_source(args, cfg), cfg)
    pretrained = _pretrained_denoiser(args, cfg)
    rows = ablation_grid(tensors, cfg.k, cfg.seeds, cfg.experiment,
                         task_name=cfg.task_name, pretrained=pretrained,
                         jobs=cfg.jobs)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["task", "ptda", "gsa", "tgq"]
        for m in METRIC_NAMES:
            header += [f"{m}_mean", f"{m}_sd"]
        writer.writerow(header)
        for (ptda, gsa, tgq), result in rows:
            agg = result.aggregate()
            row = [cfg.task_name, str(int(ptda)), str(int(gsa)), str(int(tgq))]
            for m in METRIC_NAMES:
                row += [format_float(agg[m][0]), format_float(agg[m][1])]
            writer.writerow(row)
    _echo_config(cfg, out)
    logger.info("wrote 8-row ablation grid to %s", out / "ablation.csv")
    return 0


def cmd_sweep_depth(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors, _ = _task_tensors(_features_source(args, cfg), cfg)
    depths = [int(v) for v in (args.ks or "1,2,3,4,5").split(",")]
    rows = analysis.depth_sweep(tensors, depths, cfg.k, cfg.seeds,
                                cfg.experiment, task_name=cfg.task_name,
                                jobs=cfg.jobs)
    analysis.write_depth_sweep_csv(rows, out / "depth_sweep.csv")
    _echo_config(cfg, out)
    logger.info("wrote depth sweep over %s to %s", depths, out)
    return 0


def cmd_export_attention(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    tensors, _ = _task_tensors(_features_source(args, cfg), cfg)
    if not cfg.experiment.use_tgq:
        raise ConfigError("attention export requires the query head enabled")
    split, test_t = _eval_inputs(cfg, args, tensors)
    by_id = {t.subject_id: t for t in tensors}
    stats = fit_feature_stats([by_id[s] for s in split.train])
    model, _ = _model_for_eval(cfg, tensors, args.ckpt)
    x = np.stack([stats.apply(t.values) for t in test_t]).astype(np.float32)
    outp = model.forward(x, training=False)
    n_feat, n_chan, n_ep = tensors[0].shape
    channels = [f"ch{i}" for i in range(n_chan)]
    if args.channel_names:
        channels = args.channel_names.split(",")
        if len(channels) != n_chan:
            raise ConfigError(f"{len(channels)} channel names for {n_chan} "
                              f"channels")
    per_task = {task: attention_map(arr, n_chan, n_ep)
                for task, arr in outp.attention.items()}
    att_dir = out / "attention"
    att_dir.mkdir(exist_ok=True)
    for i, t in enumerate(test_t):
        analysis.write_attention_csv(
            {task: maps[i] for task, maps in per_task.items()},
            channels, att_dir / f"{t.subject_id}.csv")
    mean_weights = {task: maps.mean(axis=0) / maps.mean(axis=0).sum()
                    for task, maps in per_task.items()}
    analysis.write_attention_csv(mean_weights, channels,
                                 out / "attention_mean.csv")
    _echo_config(cfg, out)
    logger.info("wrote attention maps for %d subjects to %s", len(test_t),
                att_dir)
    return 0


def cmd_mmd(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    set_a = _load_features_dir(args.features_a)
    set_b = _load_features_dir(args.features_b)
    a = np.stack([t.values.reshape(-1) for t in set_a])
    b = np.stack([t.values.reshape(-1) for t in set_b])
    bandwidth = args.bandwidth
    biased = analysis.mmd(a, b, analysis.MmdConfig(bandwidth=bandwidth))
    unbiased = analysis.mmd(a, b, analysis.MmdConfig(bandwidth=bandwidth,
                                                     unbiased=True))
    with open(out / "mmd.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "value"])
        writer.writerow(["biased", format_float(biased)])
        writer.writerow(["unbiased", format_float(unbiased)])
    print(f"mmd biased={format_float(biased)} unbiased={format_float(unbiased)}")
    return 0


# -- parser ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="single seed (overrides seeds)")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--k", type=int, help="cross-validation folds")
    p.add_argument("--epochs", type=int, help="max training epochs")
    p.add_argument("--aug-ratio", type=float, dest="aug_ratio",
                   help="generated tensors per real tensor, per class")
    p.add_argument("--diffusion-steps", type=int, dest="diffusion_steps")
    p.add_argument("--jobs", type=int, help="parallel fold-runs")
    p.add_argument("--task-classes", dest="task_classes",
                   help="comma-separated original class labels")
    p.add_argument("--task-name", dest="task_name")
    p.add_argument("--no-ptda", action="store_true", dest="no_ptda")
    p.add_argument("--no-gsa", action="store_true", dest="no_gsa")
    p.add_argument("--no-tgq", action="store_true", dest="no_tgq")
    p.add_argument("--pretrain-corpus", dest="pretrain_corpus",
                   help="features dir (train) or denoiser ckpt (augment)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgsn",
        description="Multi-band EEG features, diffusion augmentation, and a "
                    "gated attention network for joint dementia classification "
                    "and MMSE regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract feature tensors from recordings")
    _add_common(p)
    p.add_argument("--recordings", help="directory of .rec files")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("pretrain-diffusion",
                       help="pretrain the denoiser on a feature corpus")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.set_defaults(func=cmd_pretrain_diffusion)

    p = sub.add_parser("augment", help="generate feature tensors per class")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="cross-validated joint training")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a fold")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True, help="split manifest JSON")
    p.add_argument("--fold", required=True, type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="2^3 module on/off grid")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-depth", help="vary the GSA block count")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.add_argument("--ks", help="comma-separated block counts (default 1..5)")
    p.set_defaults(func=cmd_sweep_depth)

    p = sub.add_parser("export-attention",
                       help="per-subject channel attention CSVs")
    _add_common(p)
    p.add_argument("--features", help="directory of .feat files")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--fold", required=True, type=int)
    p.add_argument("--channel-names", dest="channel_names",
                   help="comma-separated channel names for the CSV")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("mmd", help="two-sample MMD between feature sets")
    _add_common(p)
    p.add_argument("--features-a", dest="features_a", required=True)
    p.add_argument("--features-b", dest="features_b", required=True)
    p.add_argument("--bandwidth", type=float)
    p.set_defaults(func=cmd_mmd)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("TGSN_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except TgsnError as exc:
        print(f'error kind={type(exc).__name__} exit={exc.exit_code} '
              f'reason="{exc}"', file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
