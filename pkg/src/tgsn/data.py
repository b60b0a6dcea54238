"""Recordings, interchange files, dataset splits, and the synthetic EEG corpus.

The recording interchange format (``TGSN-REC v1``) is a three-line text header
followed by a raw float32 little-endian payload, row-major by channel:

    TGSN-REC v1
    <subject_id>,<fs>,<C>,<L>,<class>,<mmse>
    <name_1>,...,<name_C>
    <C*L float32 LE bytes>

Split manifests are JSON arrays of ``{fold, train[], val[], test[]}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChannelMismatch, ConfigError, DataError, NonFiniteSample, ParseError

REC_MAGIC = "TGSN-REC v1"

#: Scalp electrodes of the international 10-20 system used by default for
#: synthetic recordings (earlobe references omitted).
DEFAULT_CHANNELS = (
    "Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4", "F7", "F8",
    "T3", "T4", "T5", "T6", "Fz", "Cz", "Pz", "O1", "O2",
)


@dataclass
class RawRecording:
    """A multichannel EEG recording with its labels.

    ``samples`` is a C x L float32 matrix in microvolts; ``class_label`` is the
    diagnostic class index and ``mmse`` the cognitive score in [0, 30].
    """

    subject_id: str
    channels: tuple[str, ...]
    samples: np.ndarray
    fs: float
    class_label: int
    mmse: float

    def validate(self) -> "RawRecording":
        if self.fs <= 0:
            raise DataError(f"fs must be positive, got {self.fs}")
        if self.samples.ndim != 2:
            raise DataError(f"samples must be 2-D, got shape {self.samples.shape}")
        n_ch, n_samp = self.samples.shape
        if n_ch != len(self.channels):
            raise ChannelMismatch(
                f"{len(self.channels)} channel names but {n_ch} sample rows"
            )
        if len(set(self.channels)) != len(self.channels):
            raise DataError("channel names must be unique")
        if n_samp < 2 * self.fs:
            raise DataError(
                f"recording too short: {n_samp} samples < one 2 s epoch at fs={self.fs}"
            )
        if not np.isfinite(self.samples).all():
            raise NonFiniteSample(f"subject {self.subject_id}: non-finite samples")
        if not (0.0 <= self.mmse <= 30.0):
            raise DataError(f"mmse {self.mmse} outside [0, 30]")
        if self.class_label < 0:
            raise DataError(f"negative class label {self.class_label}")
        return self

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


def save_recording(rec: RawRecording, path: str | Path) -> None:
    """Write ``rec`` in the TGSN-REC v1 interchange format."""
    rec.validate()
    if "," in rec.subject_id or "\n" in rec.subject_id:
        raise DataError(f"subject_id {rec.subject_id!r} may not contain ',' or newlines")
    if any("," in c or "\n" in c for c in rec.channels):
        raise DataError("channel names may not contain ',' or newlines")
    header = (
        f"{REC_MAGIC}\n"
        f"{rec.subject_id},{rec.fs!r},{rec.n_channels},{rec.n_samples},"
        f"{rec.class_label},{rec.mmse!r}\n"
        f"{','.join(rec.channels)}\n"
    )
    payload = np.ascontiguousarray(rec.samples, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def load_recording(path: str | Path) -> RawRecording:
    """Parse a TGSN-REC v1 file into a validated :class:`RawRecording`."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != REC_MAGIC:
            raise ParseError(f"{path}: bad magic line {magic!r}")
        meta = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        parts = meta.split(",")
        if len(parts) != 6:
            raise ParseError(f"{path}: header needs 6 fields, got {len(parts)}")
        subject_id = parts[0]
        try:
            fs = float(parts[1])
            n_ch = int(parts[2])
            n_samp = int(parts[3])
            class_label = int(parts[4])
            mmse = float(parts[5])
        except ValueError as exc:
            raise ParseError(f"{path}: malformed header field: {exc}") from exc
        names = fh.readline().decode("ascii", errors="replace").rstrip("\n").split(",")
        if len(names) != n_ch:
            raise ChannelMismatch(
                f"{path}: header declares {n_ch} channels, name line has {len(names)}"
            )
        payload = fh.read()
    expected = n_ch * n_samp * 4
    if len(payload) != expected:
        raise ChannelMismatch(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for {n_ch}x{n_samp} float32"
        )
    samples = np.frombuffer(payload, dtype="<f4").reshape(n_ch, n_samp).copy()
    rec = RawRecording(
        subject_id=subject_id,
        channels=tuple(names),
        samples=samples,
        fs=fs,
        class_label=class_label,
        mmse=mmse,
    )
    return rec.validate()


# -- synthetic corpus ---------------------------------------------------------

@dataclass
class MmseLink:
    """Affine map from class-signature strength ("severity") to MMSE.

    ``mmse = clip(intercept - slope * severity + N(0, noise_sd), 0, 30)``.
    """

    intercept: float = 30.0
    slope: float = 5.0
    noise_sd: float = 1.0


@dataclass
class SynthConfig:
    """Generator settings for the synthetic stand-in corpus.

    Each class has a band-gain row (one gain per band); a subject's per-band
    signal is a random sinusoid mixture whose standard deviation equals the
    gain, plus white noise. When ``signal_channels`` is set, only those
    channel indices carry the class-specific gains; the rest use
    ``baseline_gains`` shared by every class.
    """

    subjects_per_class: tuple[int, ...] = (28, 14, 16)
    fs: float = 200.0
    duration_s: float = 10.0
    band_edges: tuple[tuple[float, float], ...] = (
        (1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 50.0),
    )
    band_gains: tuple[tuple[float, ...], ...] = (
        (0.6, 0.6, 1.8, 0.5, 0.3),
        (1.6, 1.4, 0.7, 0.4, 0.3),
        (0.5, 0.5, 0.7, 1.5, 0.9),
    )
    noise_sd: float = 1.0
    class_severity: tuple[float, ...] = (0.6, 1.8, 3.0)
    severity_jitter_sd: float = 0.1
    mmse_link: MmseLink = field(default_factory=MmseLink)
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    signal_channels: tuple[int, ...] | None = None
    baseline_gains: tuple[float, ...] = (0.8, 0.8, 0.8, 0.8, 0.8)
    sines_per_band: int = 3
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if len(self.band_gains) != len(self.subjects_per_class):
            raise ConfigError("band_gains must have one row per class")
        if len(self.class_severity) != len(self.subjects_per_class):
            raise ConfigError("class_severity must have one entry per class")
        if any(len(g) != len(self.band_edges) for g in self.band_gains):
            raise ConfigError("each band_gains row needs one gain per band")
        if any(g < 0 for row in self.band_gains for g in row):
            raise ConfigError("band gains must be >= 0")
        if self.duration_s < 2:
            raise ConfigError("duration_s must be >= 2 (one epoch)")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.signal_channels is not None:
            bad = [c for c in self.signal_channels if not 0 <= c < len(self.channels)]
            if bad:
                raise ConfigError(f"signal_channels out of range: {bad}")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.subjects_per_class)


def _band_mixture(rng: np.random.Generator, gains, band_edges, n_sines, t):
    """Sum of random sinusoids per band; band b contributes variance gains[b]^2."""
    x = np.zeros_like(t)
    for gain, (lo, hi) in zip(gains, band_edges):
        if gain == 0.0:
            # keep the rng stream aligned across classes/channels
            rng.uniform(lo, hi, size=n_sines)
            rng.uniform(0.0, 2.0 * math.pi, size=n_sines)
            continue
        freqs = rng.uniform(lo, hi, size=n_sines)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=n_sines)
        amp = gain * math.sqrt(2.0 / n_sines)
        for f, ph in zip(freqs, phases):
            x += amp * np.sin(2.0 * math.pi * f * t + ph)
    return x


def synthesize_dataset(cfg: SynthConfig) -> list[RawRecording]:
    """Generate the synthetic corpus. Pure function of ``cfg`` (seed included)."""
    cfg.validate()
    n_samp = int(round(cfg.fs * cfg.duration_s))
    t = np.arange(n_samp) / cfg.fs
    recordings: list[RawRecording] = []
    subj_idx = 0
    for cls in range(cfg.num_classes):
        for k in range(cfg.subjects_per_class[cls]):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, cls, k]))
            severity = cfg.class_severity[cls] + rng.normal(0.0, cfg.severity_jitter_sd)
            base = cfg.class_severity[cls]
            scale = max(severity / base, 0.0) if base > 0 else 1.0
            class_gains = tuple(g * scale for g in cfg.band_gains[cls])
            rows = np.empty((len(cfg.channels), n_samp), dtype=np.float64)
            for c in range(len(cfg.channels)):
                if cfg.signal_channels is not None and c not in cfg.signal_channels:
                    gains = cfg.baseline_gains
                else:
                    gains = class_gains
                row = _band_mixture(rng, gains, cfg.band_edges, cfg.sines_per_band, t)
                if cfg.noise_sd > 0:
                    row = row + rng.normal(0.0, cfg.noise_sd, size=n_samp)
                rows[c] = row
            mmse = cfg.mmse_link.intercept - cfg.mmse_link.slope * severity
            mmse += rng.normal(0.0, cfg.mmse_link.noise_sd)
            mmse = float(np.clip(mmse, 0.0, 30.0))
            rec = RawRecording(
                subject_id=f"s{subj_idx:03d}",
                channels=cfg.channels,
                samples=rows.astype(np.float32),
                fs=cfg.fs,
                class_label=cls,
                mmse=mmse,
            )
            recordings.append(rec.validate())
            subj_idx += 1
    return recordings


# -- folds --------------------------------------------------------------------

@dataclass
class DatasetSplit:
    """Subject-level train/val/test partition for one cross-validation fold."""

    fold_index: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def validate(self, pool: set[str] | None = None) -> "DatasetSplit":
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if tr & va or tr & te or va & te:
            raise DataError(f"fold {self.fold_index}: train/val/test overlap")
        if pool is not None and tr | va | te != pool:
            raise DataError(f"fold {self.fold_index}: split does not cover the pool")
        return self


def make_folds(
    subjects: list[str],
    k: int,
    seed: int,
    labels: dict[str, int] | None = None,
    val_ratio: float = 0.25,
) -> list[DatasetSplit]:
    """Build ``k`` subject-level folds; each subject lands in exactly one test set.

    With ``labels`` given, test assignment is stratified per class so every
    fold's test set mirrors the class mix (needed for per-class metrics).
    Validation takes ``val_ratio`` of each fold's non-test subjects.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(set(subjects)) != len(subjects):
        raise DataError("duplicate subject ids")
    if k > len(subjects):
        raise ConfigError(f"k={k} exceeds {len(subjects)} subjects")
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    pool = sorted(subjects)
    if labels is None:
        groups = [pool]
    else:
        by_class: dict[int, list[str]] = {}
        for s in pool:
            by_class.setdefault(labels[s], []).append(s)
        groups = [by_class[c] for c in sorted(by_class)]

    test_sets: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for grp in groups:
        order = list(rng.permutation(len(grp)))
        for i, idx in enumerate(order):
            test_sets[(i + offset) % k].append(grp[idx])
        offset += len(grp)

    folds = []
    full = set(pool)
    for f in range(k):
        test = sorted(test_sets[f])
        rest = sorted(full - set(test))
        n_val = max(1, int(round(val_ratio * len(rest))))
        if labels is None:
            order = [rest[i] for i in rng.permutation(len(rest))]
            val = sorted(order[:n_val])
        else:
            # stratified val pick: round-robin over shuffled per-class lists
            per_class: dict[int, list[str]] = {}
            for s in rest:
                per_class.setdefault(labels[s], []).append(s)
            queues = []
            for c in sorted(per_class):
                grp = per_class[c]
                queues.append([grp[i] for i in rng.permutation(len(grp))])
            val_pick: list[str] = []
            qi = 0
            while len(val_pick) < n_val:
                q = queues[qi % len(queues)]
                if q:
                    val_pick.append(q.pop())
                qi += 1
                if all(not q for q in queues):
                    break
            val = sorted(val_pick)
        train = sorted(set(rest) - set(val))
        if not train:
            raise ConfigError(f"fold {f}: empty training set (too few subjects)")
        folds.append(
            DatasetSplit(fold_index=f, train=tuple(train), val=tuple(val),
                         test=tuple(test), seed=seed).validate(full)
        )
    # every subject in exactly one test set
    seen: set[str] = set()
    for fd in folds:
        dup = seen & set(fd.test)
        if dup:
            raise DataError(f"subjects in multiple test sets: {sorted(dup)}")
        seen |= set(fd.test)
    assert seen == full
    return folds


def save_split_manifest(folds: list[DatasetSplit], path: str | Path) -> None:
    rows = [
        {"fold": f.fold_index, "train": list(f.train), "val": list(f.val),
         "test": list(f.test)}
        for f in folds
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split_manifest(path: str | Path, seed: int = 0) -> list[DatasetSplit]:
    with open(path) as fh:
        rows = json.load(fh)
    return [
        DatasetSplit(
            fold_index=r["fold"], train=tuple(r["train"]), val=tuple(r["val"]),
            test=tuple(r["test"]), seed=seed,
        ).validate()
        for r in rows
    ]
