import numpy as np
import pytest
from scipy import signal as sps

from tgsn.data import (
    DatasetSplit,
    MmseLink,
    RawRecording,
    SynthConfig,
    load_recording,
    load_split_manifest,
    make_folds,
    save_recording,
    save_split_manifest,
    synthesize_dataset,
)
from tgsn.errors import ChannelMismatch, ConfigError, DataError, NonFiniteSample, ParseError


def _recording(fs=200.0, n_ch=19, secs=10.0, seed=0):
    rng = np.random.default_rng(seed)
    names = tuple(f"ch{i}" for i in range(n_ch))
    samples = rng.normal(size=(n_ch, int(fs * secs))).astype(np.float32)
    return RawRecording(subject_id="s000", channels=names, samples=samples,
                        fs=fs, class_label=1, mmse=24.5)


class TestRecordingIO:
    def test_round_trip_byte_identical(self, tmp_path):
        rec = _recording()
        p1 = tmp_path / "a.rec"
        p2 = tmp_path / "b.rec"
        save_recording(rec, p1)
        save_recording(load_recording(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_echo(self, tmp_path):
        rec = _recording(fs=200.0, n_ch=19, secs=10.0)
        path = tmp_path / "r.rec"
        save_recording(rec, path)
        loaded = load_recording(path)
        assert loaded.n_channels == 19
        assert loaded.fs == 200.0
        assert loaded.n_samples == 2000
        assert loaded.class_label == 1
        assert loaded.mmse == pytest.approx(24.5)

    def test_channel_count_mismatch(self, tmp_path):
        rec = _recording(n_ch=3, secs=3.0)
        path = tmp_path / "r.rec"
        save_recording(rec, path)
        # declare 3 channels but keep only 2 rows of payload
        raw = path.read_bytes()
        header_end = raw.index(b"\n", raw.index(b"\n", raw.index(b"\n") + 1) + 1) + 1
        truncated = raw[:header_end] + raw[header_end:header_end + 2 * 600 * 4]
        path.write_bytes(truncated)
        with pytest.raises(ChannelMismatch):
            load_recording(path)

    def test_nan_sample_rejected(self, tmp_path):
        rec = _recording(secs=3.0)
        rec.samples[2, 5] = np.nan
        path = tmp_path / "r.rec"
        with pytest.raises(NonFiniteSample):
            save_recording(rec, path)
        # write it bypassing validation, then load
        rec2 = _recording(secs=3.0)
        save_recording(rec2, path)
        raw = bytearray(path.read_bytes())
        header_end = raw.index(b"\n", raw.index(b"\n", raw.index(b"\n") + 1) + 1) + 1
        raw[header_end:header_end + 4] = np.array([np.nan], "<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteSample):
            load_recording(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "r.rec"
        path.write_bytes(b"NOT-A-REC v9\nx\ny\n")
        with pytest.raises(ParseError):
            load_recording(path)

    def test_mmse_range_enforced(self):
        rec = _recording()
        rec.mmse = 31.0
        with pytest.raises(DataError):
            rec.validate()


class TestSynthesize:
    def test_deterministic(self):
        cfg = SynthConfig(subjects_per_class=(2, 2, 2), duration_s=3.0, seed=1)
        a = synthesize_dataset(cfg)
        b = synthesize_dataset(cfg)
        assert len(a) == 6
        for ra, rb in zip(a, b):
            assert ra.subject_id == rb.subject_id
            assert ra.mmse == rb.mmse
            assert np.array_equal(ra.samples, rb.samples)

    def test_beta_boost_raises_beta_welch_power(self):
        # class 0 boosted only in the Beta band; oracle = per-class mean Welch
        # power integrated over 13-30 Hz
        cfg = SynthConfig(
            subjects_per_class=(6, 6),
            duration_s=4.0,
            channels=("c1", "c2", "c3"),
            band_gains=((0.5, 0.5, 0.5, 2.0, 0.5), (0.5, 0.5, 0.5, 0.5, 0.5)),
            class_severity=(1.0, 1.0),
            severity_jitter_sd=0.0,
            noise_sd=0.5,
            seed=3,
        )
        recs = synthesize_dataset(cfg)

        def beta_power(rec):
            f, psd = sps.welch(rec.samples.astype(np.float64), fs=rec.fs,
                               nperseg=256, axis=1)
            mask = (f >= 13) & (f < 30)
            return np.trapezoid(psd[:, mask], f[mask], axis=1).mean()

        p0 = np.mean([beta_power(r) for r in recs if r.class_label == 0])
        p1 = np.mean([beta_power(r) for r in recs if r.class_label == 1])
        assert p0 > 2.0 * p1

    def test_zero_gains_zero_noise_constant_zero(self):
        cfg = SynthConfig(
            subjects_per_class=(1,), duration_s=3.0,
            band_gains=((0.0,) * 5,), class_severity=(1.0,),
            severity_jitter_sd=0.0, noise_sd=0.0, seed=0,
            channels=("c1", "c2"),
        )
        recs = synthesize_dataset(cfg)
        assert np.all(recs[0].samples == 0.0)

    def test_mmse_clipped_and_linked(self):
        cfg = SynthConfig(subjects_per_class=(4, 4, 4), duration_s=3.0, seed=2,
                          mmse_link=MmseLink(intercept=30, slope=5, noise_sd=1))
        recs = synthesize_dataset(cfg)
        assert all(0.0 <= r.mmse <= 30.0 for r in recs)
        means = [np.mean([r.mmse for r in recs if r.class_label == c])
                 for c in range(3)]
        assert means[0] > means[1] > means[2]

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SynthConfig(subjects_per_class=(2, 2), duration_s=1.0).validate()
        with pytest.raises(ConfigError):
            SynthConfig(band_gains=((1.0,) * 5, (-0.1,) * 5, (1.0,) * 5)).validate()


class TestFolds:
    def test_partition_arithmetic(self):
        subjects = [f"s{i}" for i in range(10)]
        folds = make_folds(subjects, 5, seed=1)
        assert len(folds) == 5
        tests = [set(f.test) for f in folds]
        assert all(len(t) == 2 for t in tests)
        assert set().union(*tests) == set(subjects)
        for f in folds:
            assert not (set(f.train) & set(f.val))
            assert not (set(f.train) & set(f.test))
            assert set(f.train) | set(f.val) | set(f.test) == set(subjects)

    def test_deterministic(self):
        subjects = [f"s{i}" for i in range(17)]
        a = make_folds(subjects, 5, seed=9)
        b = make_folds(subjects, 5, seed=9)
        assert a == b

    def test_k_exceeds_pool(self):
        with pytest.raises(ConfigError):
            make_folds(["a", "b", "c", "d"], 5, seed=0)

    def test_stratified_test_sets_cover_classes(self):
        subjects = [f"s{i}" for i in range(24)]
        labels = {s: i % 3 for i, s in enumerate(subjects)}
        folds = make_folds(subjects, 5, seed=4, labels=labels)
        for f in folds:
            assert {labels[s] for s in f.test} == {0, 1, 2}

    def test_manifest_round_trip(self, tmp_path):
        subjects = [f"s{i}" for i in range(12)]
        folds = make_folds(subjects, 3, seed=2)
        path = tmp_path / "splits.json"
        save_split_manifest(folds, path)
        loaded = load_split_manifest(path, seed=2)
        assert loaded == folds

    def test_overlapping_split_rejected(self):
        with pytest.raises(DataError):
            DatasetSplit(0, ("a", "b"), ("b",), ("c",), seed=0).validate()
