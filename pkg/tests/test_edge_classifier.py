import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seizban.features import (
    ECG_FEATURE_NAMES,
    EEG_BANDS,
    FeatureVector,
    detect_r_peaks,
    extract_features_ecg,
    extract_features_eeg,
    periodogram,
)
from seizban.neuralnet import (
    KV260,
    MODEL_BUDGET_BYTES,
    BudgetExceededError,
    ModelSpec,
    TrainConfig,
    check_budget,
    fits_profile,
    header_size,
    infer,
    load_model,
    loss_and_grad,
    param_count,
    save_model,
    serialized_size,
    train,
)
from seizban.signal_io import ChannelInfo, Window


def make_window(samples_by_kind, fs=256.0):
    """samples_by_kind: list of (kind, array)."""
    channels = tuple(
        ChannelInfo(name=f"{kind.lower()}{i}", kind=kind)
        for i, (kind, _) in enumerate(samples_by_kind)
    )
    data = np.stack([np.asarray(x, dtype=np.float32) for _, x in samples_by_kind])
    return Window(start_us=0, duration_s=data.shape[1] / fs, samples=data,
                  channels=channels)


class TestEegFeatures:
    def test_all_zero_window_gives_zero_band_powers(self):
        w = make_window([("EEG", np.zeros(1024))])
        fv = extract_features_eeg(w)
        assert np.all(fv.values == 0.0)
        assert len(fv.values) == 5

    def test_pure_6hz_tone_theta_dominates(self):
        fs = 256.0
        t = np.arange(1024) / fs
        w = make_window([("EEG", np.sin(2 * np.pi * 6.0 * t))], fs=fs)
        fv = extract_features_eeg(w)
        powers = dict(zip(fv.names, fv.values))
        theta = powers["eeg0:theta"]
        for name, val in powers.items():
            if not name.endswith("theta"):
                assert theta > val * 100

    def test_parseval_band_sum_matches_time_domain_energy(self):
        # time-domain energy oracle: band-limit the signal by FFT masking,
        # then compare its mean square against the summed band powers
        rng = np.random.default_rng(17)
        fs = 256.0
        x = rng.standard_normal(1024)
        w = make_window([("EEG", x)], fs=fs)
        fv = extract_features_eeg(w)
        total_band_power = float(fv.values.sum())

        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(len(x), 1.0 / fs)
        spec[(freqs < 0.5) | (freqs > 45.0)] = 0.0
        limited = np.fft.irfft(spec, n=len(x))
        oracle = float(np.mean(limited**2))
        assert total_band_power == pytest.approx(oracle, rel=1e-6)

    def test_two_channels_give_ten_features_in_order(self):
        w = make_window([("EEG", np.ones(512)), ("EEG", np.ones(512))])
        fv = extract_features_eeg(w)
        assert len(fv.values) == 10
        assert fv.names[0].startswith("eeg0") and fv.names[5].startswith("eeg1")

    def test_no_eeg_channels_rejected(self):
        w = make_window([("ECG", np.zeros(512))])
        with pytest.raises(ValueError, match="no EEG"):
            extract_features_eeg(w)


def impulse_train(rate_hz, fs=256.0, dur_s=4.0, start_s=0.3, amp=1.0):
    n = int(dur_s * fs)
    x = np.zeros(n)
    t = start_s
    while t < dur_s:
        x[int(round(t * fs))] = amp
        t += 1.0 / rate_hz
    return x


class TestEcgFeatures:
    def test_one_hz_impulse_train(self):
        w = make_window([("ECG", impulse_train(1.0))])
        fv = extract_features_ecg(w)
        vals = dict(zip(fv.names, fv.values))
        assert vals["mean_rr_ms"] == pytest.approx(1000.0)
        assert vals["sdnn_ms"] == pytest.approx(0.0)
        assert vals["hr_bpm"] == pytest.approx(60.0)
        assert not fv.low_confidence

    def test_1p5_hz_impulse_train(self):
        w = make_window([("ECG", impulse_train(1.5))])
        fv = extract_features_ecg(w)
        mean_rr = dict(zip(fv.names, fv.values))["mean_rr_ms"]
        assert mean_rr == pytest.approx(666.7, abs=5.0)

    def test_fewer_than_two_peaks_flags_low_confidence(self):
        x = np.zeros(1024)
        x[300] = 1.0
        fv = extract_features_ecg(make_window([("ECG", x)]))
        assert fv.low_confidence
        assert np.all(fv.values == -1.0)

    def test_all_zero_window_low_confidence(self):
        fv = extract_features_ecg(make_window([("ECG", np.zeros(1024))]))
        assert fv.low_confidence

    def test_refractory_suppresses_double_detection(self):
        fs = 256.0
        x = np.zeros(1024)
        x[100] = 1.0
        x[110] = 0.9  # 39 ms later: inside the 200 ms refractory
        x[400] = 1.0
        peaks = detect_r_peaks(x, fs)
        assert list(peaks) == [100, 400]

    def test_no_ecg_channel_rejected(self):
        with pytest.raises(ValueError, match="no ECG"):
            extract_features_ecg(make_window([("EEG", np.zeros(512))]))

    def test_generated_preictal_rr_shortening_visible_in_features(self):
        from seizban.signal_io import SignatureConfig, SyntheticConfig, generate_synthetic, segment

        cfg = SyntheticConfig(seed=4, duration_s=900.0, seizure_onsets_s=(600.0,),
                              preictal_horizon_s=300.0,
                              signature=SignatureConfig(rr_shortening_fraction=0.2),
                              ecg_rr_jitter_frac=0.0)
        wins = segment(generate_synthetic(cfg), 4.0, 2.0, horizon_s=300.0)
        pre = [w for w in wins if w.label == "preictal" and w.start_us > 320e6
               and w.end_us < 590e6]
        inter = [w for w in wins if w.label == "interictal" and w.end_us < 290e6]
        rr_pre = np.mean([extract_features_ecg(w).values[0] for w in pre[:20]])
        rr_base = np.mean([extract_features_ecg(w).values[0] for w in inter[:20]])
        assert rr_pre == pytest.approx(0.8 * rr_base, rel=0.02)


class TestInference:
    def test_all_zero_weights_give_half(self):
        m = ModelSpec(layer_sizes=(4, 3, 1), weights=np.zeros(param_count((4, 3, 1))))
        assert infer(m, np.array([1.0, 2.0, 3.0, 4.0])) == 0.5

    def test_hand_set_single_layer(self):
        # w=[1,0], b=0, f=[2,7] -> sigmoid(2)
        m = ModelSpec(layer_sizes=(2, 1), weights=np.array([1.0, 0.0, 0.0]))
        p = infer(m, np.array([2.0, 7.0]))
        assert p == pytest.approx(0.8808, abs=1e-4)

    def test_dimension_mismatch_rejected(self):
        m = ModelSpec(layer_sizes=(3, 1), weights=np.zeros(4))
        with pytest.raises(ValueError, match="dimension"):
            infer(m, np.array([1.0, 2.0]))

    def test_output_in_open_unit_interval(self):
        rng = np.random.default_rng(6)
        m = ModelSpec(layer_sizes=(5, 4, 1),
                      weights=rng.standard_normal(param_count((5, 4, 1))))
        for _ in range(50):
            p = infer(m, rng.standard_normal(5))
            assert 0.0 < p < 1.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_monotonic_in_features_for_nonnegative_single_layer(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.random(3)  # non-negative weights
        m = ModelSpec(layer_sizes=(3, 1), weights=np.concatenate([w, [0.0]]))
        f = rng.standard_normal(3)
        base = infer(m, f)
        for j in range(3):
            bumped = f.copy()
            bumped[j] += abs(rng.standard_normal()) + 0.1
            assert infer(m, bumped) >= base


class TestBudget:
    def test_exact_budget_boundary(self):
        # 8703 inputs -> 1 output: 8704 parameters = 34,816 B payload
        m = ModelSpec(layer_sizes=(8703, 1), weights=np.zeros(8704))
        size = check_budget(m, MODEL_BUDGET_BYTES)
        assert size == header_size(m) + 34_816

    def test_one_param_over_budget_fails(self):
        m = ModelSpec(layer_sizes=(8704, 1), weights=np.zeros(8705))
        with pytest.raises(BudgetExceededError, match="34820.*34816"):
            check_budget(m, MODEL_BUDGET_BYTES)

    def test_zero_parameter_model_is_header_only(self):
        m = ModelSpec(layer_sizes=(7,), weights=np.zeros(0))
        assert check_budget(m) == header_size(m)
        assert serialized_size(m) == header_size(m)

    def test_over_budget_model_refused_at_save_and_load(self, tmp_path):
        ok = ModelSpec(layer_sizes=(8703, 1), weights=np.zeros(8704))
        p = str(tmp_path / "m.szm")
        save_model(ok, p)
        load_model(p)
        big = ModelSpec(layer_sizes=(8704, 1), weights=np.zeros(8705))
        with pytest.raises(BudgetExceededError):
            save_model(big, str(tmp_path / "big.szm"))
        save_model(big, str(tmp_path / "big.szm"), budget_bytes=10**9)
        with pytest.raises(BudgetExceededError):
            load_model(str(tmp_path / "big.szm"))

    def test_kv260_profile_accepts_budget_model(self):
        m = ModelSpec(layer_sizes=(8703, 1), weights=np.zeros(8704))
        assert fits_profile(m, KV260)
        assert KV260.logic_cells == 256_000
        assert KV260.dsp_slices == 1_200


class TestModelContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        m = ModelSpec(layer_sizes=(10, 8, 1),
                      weights=rng.standard_normal(param_count((10, 8, 1))).astype(np.float32),
                      version="v2-test")
        p = str(tmp_path / "m.szm")
        save_model(m, p)
        back = load_model(p)
        assert back.layer_sizes == m.layer_sizes
        assert back.version == m.version
        assert back.weights.tobytes() == m.weights.tobytes()

    def test_serialized_file_size_matches_accounting(self, tmp_path):
        m = ModelSpec(layer_sizes=(6, 4, 1), weights=np.zeros(param_count((6, 4, 1))))
        p = str(tmp_path / "m.szm")
        save_model(m, p)
        import os
        assert os.path.getsize(p) == serialized_size(m)


def toy_separable(n=20, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    neg = rng.normal(loc=(-1.0, -1.0), scale=0.3, size=(half, 2))
    pos = rng.normal(loc=(1.0, 1.0), scale=0.3, size=(n - half, 2))
    x = np.vstack([neg, pos])
    y = np.array([0.0] * half + [1.0] * (n - half))
    return x, y


class TestTrainer:
    def test_linearly_separable_reaches_perfect_accuracy(self):
        x, y = toy_separable()
        m = train(x, y, TrainConfig(hidden=(4,), lr=0.5, epochs=200, seed=1))
        preds = np.array([infer(m, xi) >= 0.5 for xi in x])
        assert np.mean(preds == y.astype(bool)) == 1.0

    def test_gradient_matches_central_finite_differences(self):
        # finite-difference oracle, eps = 1e-4, random small nets
        rng = np.random.default_rng(12)
        for layer_sizes in [(3, 1), (3, 4, 1), (2, 3, 2, 1)]:
            n_params = param_count(layer_sizes)
            params = rng.standard_normal(n_params) * 0.5
            x = rng.standard_normal((8, layer_sizes[0]))
            y = rng.integers(0, 2, 8).astype(np.float64)
            _, grad = loss_and_grad(params, layer_sizes, x, y)
            eps = 1e-4
            fd = np.empty(n_params)
            for i in range(n_params):
                up, dn = params.copy(), params.copy()
                up[i] += eps
                dn[i] -= eps
                lu, _ = loss_and_grad(up, layer_sizes, x, y)
                ld, _ = loss_and_grad(dn, layer_sizes, x, y)
                fd[i] = (lu - ld) / (2 * eps)
            scale = np.maximum(np.abs(fd), 1e-8)
            rel = np.abs(grad - fd) / scale
            assert rel.max() < 1e-3, f"layers {layer_sizes}: max rel err {rel.max()}"

    def test_same_seed_identical_weights(self):
        x, y = toy_separable(seed=2)
        a = train(x, y, TrainConfig(seed=7, epochs=50))
        b = train(x, y, TrainConfig(seed=7, epochs=50))
        assert a.weights.tobytes() == b.weights.tobytes()

    def test_single_class_rejected(self):
        x = np.zeros((10, 2))
        y = np.ones(10)
        with pytest.raises(ValueError, match="degenerate labels"):
            train(x, y)

    def test_trained_model_fits_budget(self):
        x, y = toy_separable()
        m = train(x, y, TrainConfig(hidden=(8,), epochs=10))
        check_budget(m)

    def test_normalization_folding_preserves_decision_function(self):
        # training standardizes features; inference on raw features must agree
        rng = np.random.default_rng(5)
        x = rng.standard_normal((40, 3)) * np.array([100.0, 0.01, 5.0]) + 7.0
        y = (x[:, 0] / 100.0 + x[:, 2] / 5.0 > 0.07).astype(float)
        if len(np.unique(y)) < 2:
            pytest.skip("degenerate draw")
        m = train(x, y, TrainConfig(hidden=(6,), lr=0.3, epochs=300, seed=3))
        preds = np.array([infer(m, xi) >= 0.5 for xi in x])
        assert np.mean(preds == y.astype(bool)) >= 0.95
