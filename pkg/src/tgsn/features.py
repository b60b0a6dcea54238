"""Multi-band feature extraction.

Each recording is notch-filtered, band-pass decomposed into B frequency
bands, cut into non-overlapping 2 s epochs, and summarized per
(band, channel, epoch) by five features: Hjorth mobility (HM), Hjorth
complexity (HC), sample entropy (SampEn), Welch band power (PSD), and the
relative spectral density (RSD, per-band share of total power). The result
is an F x C x T1 tensor with F = 5 * B, feature rows ordered band-major as
``<band>.{HM,HC,SampEn,PSD,RSD}``.

Feature tensors round-trip through the ``TGSN-FEAT v1`` interchange format:

    TGSN-FEAT v1
    <subject_id>,<F>,<C>,<T1>,<class>,<mmse>,<origin>
    <feature_name_1>,...,<feature_name_F>
    <F*C*T1 float32 LE bytes>
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .data import RawRecording
from .errors import (
    BandOutOfNyquist,
    ChannelMismatch,
    ConfigError,
    DataError,
    EmptyEpochs,
    NoMatches,
    NonFiniteSample,
    ParseError,
    SegmentTooLong,
    TooShort,
    ZeroPower,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

FEAT_MAGIC = "TGSN-FEAT v1"
FEATURE_KINDS = ("HM", "HC", "SampEn", "PSD", "RSD")


@dataclass(frozen=True)
class BandSpec:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 < self.lo_hz < self.hi_hz):
            raise ConfigError(f"band {self.name}: need 0 < lo < hi, got "
                              f"[{self.lo_hz}, {self.hi_hz}]")


DEFAULT_BANDS = (
    BandSpec("Delta", 1.0, 4.0),
    BandSpec("Theta", 4.0, 8.0),
    BandSpec("Alpha", 8.0, 13.0),
    BandSpec("Beta", 13.0, 30.0),
    BandSpec("Gamma", 30.0, 50.0),
)


@dataclass
class FeatureConfig:
    """Knobs for band decomposition and the per-epoch feature set."""

    bands: tuple[BandSpec, ...] = DEFAULT_BANDS
    epoch_s: float = 2.0
    sampen_m: int = 2
    sampen_r: float = 0.2          # tolerance as a multiple of the epoch SD
    welch_segments: int = 4
    welch_overlap: float = 0.5
    window: str = "hann"
    bp_filter_order: int = 4
    notch_hz: float | None = 50.0

    def validate(self, fs: float) -> "FeatureConfig":
        if self.welch_segments < 1:
            raise ConfigError("welch_segments must be >= 1")
        if not (0 <= self.welch_overlap < 1):
            raise ConfigError("welch_overlap must be in [0, 1)")
        if (self.epoch_s * fs) != int(self.epoch_s * fs):
            raise ConfigError(f"epoch_s*fs must be integral, got {self.epoch_s * fs}")
        for b in self.bands:
            if b.hi_hz >= fs / 2:
                raise BandOutOfNyquist(
                    f"band {b.name} [{b.lo_hz}, {b.hi_hz}] needs fs > {2 * b.hi_hz}, "
                    f"got fs={fs}"
                )
        return self

    @property
    def num_bands(self) -> int:
        return len(self.bands)

    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"{b.name}.{k}" for b in self.bands for k in FEATURE_KINDS)


@dataclass
class FeatureTensor:
    """F x C x T1 feature values plus labels for one subject."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    subject_id: str
    class_label: int
    mmse: float
    origin: str = "real"           # "real" | "generated"

    def validate(self) -> "FeatureTensor":
        if self.values.ndim != 3:
            raise DataError(f"values must be F x C x T1, got {self.values.shape}")
        if self.values.shape[0] != len(self.feature_names):
            raise DataError("feature_names length does not match F")
        if not np.isfinite(self.values).all():
            raise NonFiniteSample(f"subject {self.subject_id}: non-finite features")
        if self.origin not in ("real", "generated"):
            raise DataError(f"bad origin {self.origin!r}")
        return self

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


# -- preprocessing -------------------------------------------------------------

def preprocess(rec: RawRecording, cfg: FeatureConfig) -> np.ndarray:
    """Notch + band-pass decompose and epoch a recording.

    Returns S with shape (B, C, T1, T2): band b of channel c restricted to
    epoch t1. Filtering is zero-phase (forward-backward Butterworth, with an
    optional 2nd-order IIR notch applied first); a trailing partial epoch is
    discarded.
    """
    cfg.validate(rec.fs)
    fs = rec.fs
    x = rec.samples.astype(np.float64)
    epoch_len = int(round(cfg.epoch_s * fs))
    n_epochs = rec.n_samples // epoch_len
    if n_epochs == 0:
        raise EmptyEpochs(
            f"subject {rec.subject_id}: {rec.n_samples} samples < one "
            f"{cfg.epoch_s} s epoch at fs={fs}"
        )
    if cfg.notch_hz is not None and cfg.notch_hz < fs / 2:
        b, a = sps.iirnotch(cfg.notch_hz, Q=30.0, fs=fs)
        x = sps.filtfilt(b, a, x, axis=1)
    out = np.empty((cfg.num_bands, rec.n_channels, n_epochs, epoch_len),
                   dtype=np.float64)
    for bi, band in enumerate(cfg.bands):
        sos = sps.butter(cfg.bp_filter_order, [band.lo_hz, band.hi_hz],
                         btype="bandpass", fs=fs, output="sos")
        filtered = sps.sosfiltfilt(sos, x, axis=1)
        usable = filtered[:, : n_epochs * epoch_len]
        out[bi] = usable.reshape(rec.n_channels, n_epochs, epoch_len)
    return out


# -- per-epoch features --------------------------------------------------------

def hjorth_mobility(x: np.ndarray) -> float:
    """sqrt(Var(diff(x)) / Var(x)); the derivative is the first difference."""
    x = np.asarray(x, dtype=np.float64)
    v = np.var(x)
    if v <= 0 or not np.isfinite(v):
        raise ZeroVariance("constant epoch: mobility undefined")
    return float(np.sqrt(np.var(np.diff(x)) / v))


def hjorth_complexity(x: np.ndarray) -> float:
    """Mobility of the first difference divided by the mobility of the epoch."""
    x = np.asarray(x, dtype=np.float64)
    d = np.diff(x)
    if np.var(d) <= 0:
        raise ZeroVariance("first difference constant: complexity undefined")
    return hjorth_mobility(d) / hjorth_mobility(x)


def sample_entropy(x: np.ndarray, m: int = 2, r_factor: float = 0.2) -> float:
    """-ln(U/V): U and V count ordered template pairs of length m+1 and m.

    Templates start at i in [0, n-m); pairs use Chebyshev distance with
    tolerance r = r_factor * SD(x) and exclude self-matches.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < m + 2:
        raise TooShort(f"need at least m+2={m + 2} samples, got {n}")
    sd = float(np.std(x))
    if sd <= 0:
        raise ZeroVariance("constant epoch: sample entropy undefined")
    r = r_factor * sd
    n_templates = n - m
    # Chebyshev distances over length-(m+1) windows, built tap by tap.
    d_m = np.abs(x[:n_templates, None] - x[None, :n_templates])
    for j in range(1, m):
        d_m = np.maximum(d_m, np.abs(x[j:j + n_templates, None]
                                     - x[None, j:j + n_templates]))
    d_m1 = np.maximum(d_m, np.abs(x[m:m + n_templates, None]
                                  - x[None, m:m + n_templates]))
    off_diag = ~np.eye(n_templates, dtype=bool)
    v = int(np.count_nonzero((d_m <= r) & off_diag))
    u = int(np.count_nonzero((d_m1 <= r) & off_diag))
    if v == 0:
        raise NoMatches("no template matches at length m")
    if u == 0:
        raise NoMatches("no template matches at length m+1")
    return float(-math.log(u / v))


def _welch_params(n: int, cfg: FeatureConfig) -> tuple[int, int]:
    nperseg = int(n // (1 + (cfg.welch_segments - 1) * (1 - cfg.welch_overlap)))
    if nperseg > n:
        raise SegmentTooLong(f"Welch segment {nperseg} exceeds epoch length {n}")
    if nperseg < 8:
        raise SegmentTooLong(
            f"epoch length {n} too short for {cfg.welch_segments} Welch segments"
        )
    noverlap = int(nperseg * cfg.welch_overlap)
    return nperseg, noverlap


def welch_band_power(x: np.ndarray, lo_hz: float, hi_hz: float, fs: float,
                     cfg: FeatureConfig) -> float:
    """Average Welch periodogram integrated over [lo_hz, hi_hz).

    Density scaling: summing band powers over a band set that tiles
    [0, fs/2) recovers the signal variance (Parseval).
    """
    x = np.asarray(x, dtype=np.float64)
    nperseg, noverlap = _welch_params(len(x), cfg)
    freqs, psd = sps.welch(x, fs=fs, window=cfg.window, nperseg=nperseg,
                           noverlap=noverlap, detrend="constant",
                           scaling="density")
    df = freqs[1] - freqs[0]
    mask = (freqs >= lo_hz) & (freqs < hi_hz)
    return float(np.sum(psd[mask]) * df)


def relative_spectral_density(band_powers: np.ndarray) -> np.ndarray:
    """Normalize per-band powers to shares summing to 1."""
    p = np.asarray(band_powers, dtype=np.float64)
    if np.any(p < 0):
        raise DataError("band powers must be non-negative")
    total = p.sum()
    if total <= 0:
        raise ZeroPower("all-zero band power vector")
    return p / total


# -- assembly ------------------------------------------------------------------

def extract_features(rec: RawRecording, cfg: FeatureConfig) -> FeatureTensor:
    """Compose the per-epoch features into the F x C x T1 tensor.

    Epochs on which any feature fails (e.g. zero variance) are dropped as a
    whole time slice and logged; if nothing survives, raises EmptyEpochs.
    """
    s = preprocess(rec, cfg)
    n_bands, n_channels, n_epochs, _ = s.shape
    fs = rec.fs
    values = np.empty((5 * n_bands, n_channels, n_epochs), dtype=np.float64)
    bad_epochs: set[int] = set()
    for t1 in range(n_epochs):
        try:
            for c in range(n_channels):
                psd_vec = np.empty(n_bands)
                for b in range(n_bands):
                    epoch = s[b, c, t1]
                    base = 5 * b
                    values[base + 0, c, t1] = hjorth_mobility(epoch)
                    values[base + 1, c, t1] = hjorth_complexity(epoch)
                    values[base + 2, c, t1] = sample_entropy(
                        epoch, cfg.sampen_m, cfg.sampen_r)
                    band = cfg.bands[b]
                    psd_vec[b] = welch_band_power(epoch, band.lo_hz, band.hi_hz,
                                                  fs, cfg)
                rsd = relative_spectral_density(psd_vec)
                for b in range(n_bands):
                    values[5 * b + 3, c, t1] = psd_vec[b]
                    values[5 * b + 4, c, t1] = rsd[b]
        except DataError as exc:
            logger.warning("subject %s: dropping epoch t1=%d (channel %d): %s",
                           rec.subject_id, t1, c, exc)
            bad_epochs.add(t1)
    if bad_epochs:
        keep = [t for t in range(n_epochs) if t not in bad_epochs]
        if not keep:
            raise EmptyEpochs(f"subject {rec.subject_id}: every epoch dropped")
        values = values[:, :, keep]
    return FeatureTensor(
        values=values.astype(np.float32),
        feature_names=cfg.feature_names(),
        subject_id=rec.subject_id,
        class_label=rec.class_label,
        mmse=rec.mmse,
    ).validate()


# -- normalization -------------------------------------------------------------

@dataclass
class FeatureStats:
    """Per-feature-row z-score statistics (fitted on training subjects only)."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None, None]) / self.sd[:, None, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.sd[:, None, None] + self.mean[:, None, None]


def fit_feature_stats(tensors: list[FeatureTensor]) -> FeatureStats:
    if not tensors:
        raise DataError("cannot fit normalization on an empty set")
    stacked = np.concatenate(
        [t.values.reshape(t.values.shape[0], -1) for t in tensors], axis=1
    ).astype(np.float64)
    mean = stacked.mean(axis=1)
    sd = stacked.std(axis=1)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return FeatureStats(mean=mean.astype(np.float32), sd=sd.astype(np.float32))


# -- interchange ---------------------------------------------------------------

def save_feature_tensor(t: FeatureTensor, path: str | Path) -> None:
    t.validate()
    f, c, t1 = t.shape
    header = (
        f"{FEAT_MAGIC}\n"
        f"{t.subject_id},{f},{c},{t1},{t.class_label},{t.mmse!r},{t.origin}\n"
        f"{','.join(t.feature_names)}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(t.values, dtype="<f4").tobytes())


def load_feature_tensor(path: str | Path) -> FeatureTensor:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != FEAT_MAGIC:
            raise ParseError(f"{path}: bad magic line {magic!r}")
        parts = fh.readline().decode("ascii", errors="replace").rstrip("\n").split(",")
        if len(parts) != 7:
            raise ParseError(f"{path}: header needs 7 fields, got {len(parts)}")
        try:
            subject_id = parts[0]
            f, c, t1 = int(parts[1]), int(parts[2]), int(parts[3])
            class_label = int(parts[4])
            mmse = float(parts[5])
            origin = parts[6]
        except ValueError as exc:
            raise ParseError(f"{path}: malformed header field: {exc}") from exc
        names = fh.readline().decode("ascii", errors="replace").rstrip("\n").split(",")
        if len(names) != f:
            raise ParseError(f"{path}: {f} features declared, {len(names)} names")
        payload = fh.read()
    expected = f * c * t1 * 4
    if len(payload) != expected:
        raise ChannelMismatch(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(f, c, t1).copy()
    return FeatureTensor(
        values=values, feature_names=tuple(names), subject_id=subject_id,
        class_label=class_label, mmse=mmse, origin=origin,
    ).validate()
