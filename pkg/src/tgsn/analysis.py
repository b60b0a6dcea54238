"""Post-hoc analyses: MMD, embedding-matrix export, depth sweep, attention CSVs."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, DataError, ParseError
from .features import FeatureTensor
from .training import ExperimentConfig, RunResult, run_cv


def format_float(v: float) -> str:
    """Canonical 9-significant-digit float serialization for CSV artifacts."""
    return f"{float(v):.9g}"


# -- maximum mean discrepancy ------------------------------------------------------

@dataclass
class MmdConfig:
    """Gaussian-RBF kernel two-sample statistic settings.

    ``bandwidth=None`` selects the median heuristic: the median pairwise
    Euclidean distance over the pooled sample.
    """

    bandwidth: float | None = None
    unbiased: bool = False

    def validate(self) -> "MmdConfig":
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError("bandwidth must be > 0")
        return self


def median_heuristic(pooled: np.ndarray) -> float:
    d = pdist(pooled)
    med = float(np.median(d))
    if med <= 0:
        return 1.0
    return med


def mmd(set_a: np.ndarray, set_b: np.ndarray, cfg: MmdConfig | None = None) -> float:
    """Squared-MMD estimate between two row sets.

    Biased (V-statistic) by default: non-negative, zero for identical sets.
    The unbiased U-statistic drops the diagonal terms and may be negative.
    """
    cfg = (cfg or MmdConfig()).validate()
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataError(f"row sets must share dimensions: {a.shape} vs {b.shape}")
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise DataError("each set needs at least 2 rows")
    sigma = cfg.bandwidth if cfg.bandwidth is not None \
        else median_heuristic(np.vstack([a, b]))
    gamma = 1.0 / (2.0 * sigma**2)
    kaa = np.exp(-gamma * cdist(a, a, "sqeuclidean"))
    kbb = np.exp(-gamma * cdist(b, b, "sqeuclidean"))
    kab = np.exp(-gamma * cdist(a, b, "sqeuclidean"))
    if cfg.unbiased:
        term_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
        term_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    else:
        term_a = kaa.mean()
        term_b = kbb.mean()
    return float(term_a + term_b - 2.0 * kab.mean())


# -- exports -------------------------------------------------------------------------

def export_embedding_matrix(tensors: list[FeatureTensor],
                            path: str | Path) -> None:
    """Flattened feature rows for external embedding (e.g. t-SNE) tools."""
    if not tensors:
        raise DataError("nothing to export")
    p = tensors[0].values.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "origin", "class"]
                        + [f"f{i}" for i in range(1, p + 1)])
        for t in tensors:
            flat = t.values.reshape(-1)
            if flat.size != p:
                raise DataError(f"{t.subject_id}: inconsistent feature size")
            writer.writerow([t.subject_id, t.origin, t.class_label]
                            + [format_float(v) for v in flat])


def read_embedding_matrix(path: str | Path
                          ) -> list[tuple[str, str, int, np.ndarray]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["subject_id", "origin", "class"]:
            raise ParseError(f"{path}: unexpected header {header!r}")
        for rec in reader:
            rows.append((rec[0], rec[1], int(rec[2]),
                         np.array([float(v) for v in rec[3:]], dtype=np.float32)))
    return rows


def write_attention_csv(weights: dict[str, np.ndarray], channels: list[str],
                        path: str | Path) -> None:
    """One subject's per-task channel attention as `task,channel_name,weight`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "channel_name", "weight"])
        for task in sorted(weights):
            w = weights[task]
            if len(w) != len(channels):
                raise DataError(f"{task}: {len(w)} weights vs "
                                f"{len(channels)} channels")
            for name, v in zip(channels, w):
                writer.writerow([task, name, format_float(v)])


# -- GSA depth sweep -------------------------------------------------------------------

def depth_sweep(tensors: list[FeatureTensor], depths: list[int], k: int,
                seeds: list[int], cfg: ExperimentConfig,
                task_name: str = "all", jobs: int = 1
                ) -> list[tuple[int, RunResult]]:
    """Rerun cross-validation for each GSA block count."""
    rows = []
    for depth in depths:
        variant = dataclasses.replace(
            cfg, gsa=dataclasses.replace(cfg.gsa, num_blocks=depth))
        rows.append((depth, run_cv(tensors, k, seeds, variant, task_name,
                                   jobs=jobs)))
    return rows


def write_depth_sweep_csv(rows: list[tuple[int, RunResult]],
                          path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["blocks", "acc_mean", "acc_sd", "auc_mean", "auc_sd",
                         "sen_mean", "sen_sd", "spe_mean", "spe_sd",
                         "rmse_mean", "rmse_sd"])
        for depth, result in rows:
            agg = result.aggregate()
            row = [str(depth)]
            for name in ("acc", "auc", "sen", "spe", "rmse"):
                row.extend([format_float(agg[name][0]), format_float(agg[name][1])])
            writer.writerow(row)
