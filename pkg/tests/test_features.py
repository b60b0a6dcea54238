import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgsn.data import RawRecording, SynthConfig, synthesize_dataset
from tgsn.errors import (
    BandOutOfNyquist,
    EmptyEpochs,
    TooShort,
    ZeroPower,
    ZeroVariance,
)
from tgsn.features import (
    DEFAULT_BANDS,
    FeatureConfig,
    FeatureTensor,
    extract_features,
    fit_feature_stats,
    hjorth_complexity,
    hjorth_mobility,
    load_feature_tensor,
    preprocess,
    relative_spectral_density,
    sample_entropy,
    save_feature_tensor,
    welch_band_power,
)

FS = 200.0


def _sinusoid(freq, fs=FS, n=400, amp=1.0, phase=0.0):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


class TestHjorth:
    def test_constant_epoch_rejected(self):
        with pytest.raises(ZeroVariance):
            hjorth_mobility(np.full(400, 3.2))

    def test_sinusoid_closed_form(self):
        # oracle: first difference of a sampled sinusoid scales variance by
        # (2 sin(pi f / fs))^2, so HM = 2 sin(pi f / fs)
        x = _sinusoid(10.0, n=400)  # 20 full periods
        expected = 2.0 * math.sin(math.pi * 10.0 / FS)
        assert hjorth_mobility(x) == pytest.approx(expected, rel=0.01)

    def test_white_noise_sqrt2(self):
        # Monte-Carlo oracle: lag-1 autocorrelation of white noise is 0, so
        # Var(diff) = 2 Var and HM = sqrt(2)
        rng = np.random.default_rng(7)
        x = rng.normal(size=100_000)
        assert hjorth_mobility(x) == pytest.approx(math.sqrt(2.0), rel=0.02)

    def test_complexity_sinusoid_is_one(self):
        x = _sinusoid(10.0, n=400)
        assert hjorth_complexity(x) == pytest.approx(1.0, rel=0.01)

    def test_complexity_ramp_rejected(self):
        with pytest.raises(ZeroVariance):
            hjorth_complexity(np.linspace(0.0, 1.0, 400))

    def test_complexity_white_noise_above_one(self):
        # oracle value sqrt(3)/sqrt(2) ~ 1.2247; committed contract is > 1
        rng = np.random.default_rng(8)
        x = rng.normal(size=100_000)
        hc = hjorth_complexity(x)
        assert hc > 1.0
        assert hc == pytest.approx(math.sqrt(3.0) / math.sqrt(2.0), rel=0.02)


def _sampen_bruteforce(x, m, r_factor):
    """O(n^2) loop oracle with the same template convention."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    r = r_factor * np.std(x)
    nt = n - m
    count_m = count_m1 = 0
    for i in range(nt):
        for j in range(nt):
            if i == j:
                continue
            dm = max(abs(x[i + k] - x[j + k]) for k in range(m))
            if dm <= r:
                count_m += 1
                dm1 = max(dm, abs(x[i + m] - x[j + m]))
                if dm1 <= r:
                    count_m1 += 1
    return -math.log(count_m1 / count_m)


class TestSampleEntropy:
    def test_periodic_near_zero(self):
        x = _sinusoid(20.0, n=400)
        assert sample_entropy(x, m=2, r_factor=0.5) == pytest.approx(0.0, abs=0.05)

    def test_too_short(self):
        with pytest.raises(TooShort):
            sample_entropy(np.arange(3.0), m=2, r_factor=0.2)

    def test_constant_rejected(self):
        with pytest.raises(ZeroVariance):
            sample_entropy(np.zeros(50), m=2, r_factor=0.2)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bruteforce_equality(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=150)
        got = sample_entropy(x, m=2, r_factor=0.2)
        want = _sampen_bruteforce(x, 2, 0.2)
        assert got == pytest.approx(want, abs=1e-12)

    def test_uniform_noise_range(self):
        # frozen interval from the brute-force oracle's distribution at n=400
        vals = []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            vals.append(sample_entropy(rng.uniform(size=400), 2, 0.2))
        assert 2.0 <= np.median(vals) <= 2.6


class TestWelch:
    def test_white_noise_parseval(self):
        # at fs=100 the five default bands tile [1, 50) of the [0, 50) axis,
        # so summed band powers must recover the variance
        rng = np.random.default_rng(5)
        x = rng.normal(size=4000)
        x = (x - x.mean()) / x.std()
        cfg = FeatureConfig()
        total = sum(
            welch_band_power(x, b.lo_hz, b.hi_hz, 100.0, cfg) for b in cfg.bands
        )
        assert total == pytest.approx(1.0, rel=0.05)

    def test_zero_signal(self):
        cfg = FeatureConfig()
        assert welch_band_power(np.zeros(400), 8, 13, FS, cfg) == 0.0

    def test_sinusoid_band_power(self):
        # analytic oracle: unit-amplitude sinusoid carries power 1/2 at 10 Hz
        cfg = FeatureConfig()
        x = _sinusoid(10.0, n=400)
        alpha = welch_band_power(x, 8, 13, FS, cfg)
        assert alpha == pytest.approx(0.5, rel=0.05)
        for lo, hi in ((1, 4), (4, 8), (13, 30), (30, 50)):
            assert welch_band_power(x, lo, hi, FS, cfg) < 0.01


class TestRsd:
    def test_uniform(self):
        out = relative_spectral_density(np.ones(5))
        assert np.allclose(out, 0.2)

    def test_single_band(self):
        out = relative_spectral_density(np.array([2.0, 0, 0, 0, 0]))
        assert np.allclose(out, [1, 0, 0, 0, 0])

    def test_zero_power_rejected(self):
        with pytest.raises(ZeroPower):
            relative_spectral_density(np.zeros(5))

    @given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=2,
                    max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_sums_to_one(self, powers):
        out = relative_spectral_density(np.array(powers))
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out >= 0) and np.all(out <= 1)


def _tiny_recording(freq=None, n_ch=2, secs=10.0, fs=FS, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    n = int(fs * secs)
    t = np.arange(n) / fs
    rows = []
    for _ in range(n_ch):
        row = rng.normal(0, noise, n)
        if freq is not None:
            row = row + np.sin(2 * np.pi * freq * t)
        rows.append(row)
    return RawRecording(
        subject_id="s000", channels=tuple(f"c{i}" for i in range(n_ch)),
        samples=np.array(rows, dtype=np.float32), fs=fs, class_label=0,
        mmse=25.0)


class TestPreprocess:
    def test_epoch_arithmetic(self):
        rec = _tiny_recording(secs=10.0)
        s = preprocess(rec, FeatureConfig())
        assert s.shape == (5, 2, 5, 400)

    def test_band_isolation_of_sinusoid(self):
        # Welch-power oracle on filtered vs raw: Alpha keeps >= 90% of a
        # 10 Hz tone, Delta keeps <= 1%
        rec = _tiny_recording(freq=10.0, n_ch=1, noise=0.0)
        cfg = FeatureConfig()
        s = preprocess(rec, cfg)
        raw_epoch = rec.samples[0, :400].astype(np.float64)
        p_in = welch_band_power(raw_epoch, 8, 13, FS, cfg)
        p_alpha = welch_band_power(s[2, 0, 0], 8, 13, FS, cfg)
        p_delta = welch_band_power(s[0, 0, 0], 1, 4, FS, cfg)
        assert p_alpha >= 0.9 * p_in
        assert p_delta <= 0.01 * p_in

    def test_short_recording_empty_epochs(self):
        rec = _tiny_recording(secs=10.0)
        rec.samples = rec.samples[:, :399]
        with pytest.raises(EmptyEpochs):
            preprocess(rec, FeatureConfig())

    def test_nyquist_guard(self):
        rec = _tiny_recording(secs=10.0, fs=80.0)
        with pytest.raises(BandOutOfNyquist):
            preprocess(rec, FeatureConfig())


class TestExtract:
    def test_feature_count_and_order(self):
        rec = _tiny_recording(secs=4.0)
        ft = extract_features(rec, FeatureConfig())
        assert ft.shape == (25, 2, 2)
        assert ft.feature_names[0] == "Delta.HM"
        assert ft.feature_names[4] == "Delta.RSD"
        assert ft.feature_names[5] == "Theta.HM"
        assert len(ft.feature_names) == 25

    def test_deterministic(self):
        rec = _tiny_recording(secs=4.0)
        a = extract_features(rec, FeatureConfig())
        b = extract_features(rec, FeatureConfig())
        assert np.array_equal(a.values, b.values)

    def test_rsd_simplex(self):
        rec = _tiny_recording(secs=6.0)
        ft = extract_features(rec, FeatureConfig())
        rsd_rows = [4 + 5 * b for b in range(5)]
        sums = ft.values[rsd_rows].sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-6)  # float32 storage

    def test_offset_invariance(self):
        # HM, HC, SampEn, PSD invariant to adding a constant to the raw signal
        rec = _tiny_recording(secs=4.0, seed=3)
        shifted = RawRecording(
            subject_id=rec.subject_id, channels=rec.channels,
            samples=rec.samples + 57.0, fs=rec.fs,
            class_label=rec.class_label, mmse=rec.mmse)
        a = extract_features(rec, FeatureConfig())
        b = extract_features(shifted, FeatureConfig())
        assert np.allclose(a.values, b.values, rtol=1e-3, atol=1e-4)

    @given(st.floats(min_value=0.5, max_value=20.0))
    @settings(max_examples=5, deadline=None)
    def test_amplitude_scaling_laws(self, scale):
        rng = np.random.default_rng(11)
        x = rng.normal(size=400)
        cfg = FeatureConfig()
        hm1, hm2 = hjorth_mobility(x), hjorth_mobility(scale * x)
        hc1, hc2 = hjorth_complexity(x), hjorth_complexity(scale * x)
        se1, se2 = sample_entropy(x, 2, 0.2), sample_entropy(scale * x, 2, 0.2)
        p1 = welch_band_power(x, 8, 13, FS, cfg)
        p2 = welch_band_power(scale * x, 8, 13, FS, cfg)
        assert hm2 == pytest.approx(hm1, rel=1e-9)
        assert hc2 == pytest.approx(hc1, rel=1e-9)
        assert se2 == pytest.approx(se1, rel=1e-9)
        assert p2 == pytest.approx(scale**2 * p1, rel=1e-9)

    def test_beta_boosted_class_rsd_separates(self):
        # generator construction + RSD oracle, t-test over subjects
        from scipy.stats import ttest_ind

        cfg = SynthConfig(
            subjects_per_class=(20, 20), duration_s=4.0,
            channels=("c1", "c2", "c3", "c4"),
            band_gains=((0.5, 0.5, 0.5, 1.8, 0.5), (0.5, 0.5, 0.5, 0.5, 0.5)),
            class_severity=(1.0, 1.0), severity_jitter_sd=0.05,
            noise_sd=0.5, seed=6)
        recs = synthesize_dataset(cfg)
        fcfg = FeatureConfig()
        beta_rsd_row = fcfg.feature_names().index("Beta.RSD")
        vals = {0: [], 1: []}
        for rec in recs:
            ft = extract_features(rec, fcfg)
            vals[rec.class_label].append(ft.values[beta_rsd_row].mean())
        stat, p = ttest_ind(vals[0], vals[1])
        assert np.mean(vals[0]) > np.mean(vals[1])
        assert p < 0.01


class TestStatsAndIO:
    def test_zscore_fit_apply(self):
        rng = np.random.default_rng(1)
        tensors = [
            FeatureTensor(values=rng.normal(3.0, 2.0, size=(4, 2, 3)).astype(np.float32),
                          feature_names=("a", "b", "c", "d"), subject_id=f"s{i}",
                          class_label=0, mmse=20.0)
            for i in range(6)
        ]
        stats = fit_feature_stats(tensors)
        z = np.concatenate([stats.apply(t.values).reshape(4, -1) for t in tensors],
                           axis=1)
        assert np.allclose(z.mean(axis=1), 0.0, atol=1e-5)
        assert np.allclose(z.std(axis=1), 1.0, atol=1e-3)
        back = stats.invert(stats.apply(tensors[0].values))
        assert np.allclose(back, tensors[0].values, rtol=1e-5, atol=1e-5)

    def test_feature_file_round_trip(self, tmp_path):
        rec = _tiny_recording(secs=4.0)
        ft = extract_features(rec, FeatureConfig())
        path = tmp_path / "t.feat"
        save_feature_tensor(ft, path)
        loaded = load_feature_tensor(path)
        assert loaded.subject_id == ft.subject_id
        assert loaded.feature_names == ft.feature_names
        assert loaded.origin == "real"
        assert loaded.mmse == pytest.approx(ft.mmse)
        assert np.array_equal(loaded.values, ft.values)
