import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import fft, signal

from shared.dsp_features import (
    MFCC_PREEMPHASIS,
    AudioRecording,
    EegRecording,
    FeatureKind,
    apply_filter,
    design_bandpass,
    design_notch,
    extract_eeg_features,
    extract_mfcc,
    frame_windows,
    log_mel_energies,
    mel_filterbank,
    stat_features,
    window_stats,
    _audio_frames,
)
from shared.errors import DataError, ParameterError

windows = arrays(
    np.float64,
    st.integers(2, 64),
    elements=st.floats(-100, 100, allow_nan=False, allow_infinity=False),
)


def impulse_by_long_division(b: np.ndarray, a: np.ndarray, taps: int) -> np.ndarray:
    """First taps of B(z)/A(z) expanded as a power series in z^-1."""
    h = np.zeros(taps)
    for n in range(taps):
        acc = b[n] if n < len(b) else 0.0
        for k in range(1, min(n, len(a) - 1) + 1):
            acc -= a[k] * h[n - k]
        h[n] = acc / a[0]
    return h


class TestFilterDesign:
    def test_bandpass_passband_and_stopband(self):
        bp = design_bandpass(4, 0.1, 70.0, 1000)
        assert bp.magnitude(10.0, 1000)[0] >= 0.95
        assert bp.magnitude(200.0, 1000)[0] <= 0.03

    def test_bandpass_is_three_db_down_at_both_cutoffs(self):
        bp = design_bandpass(4, 0.1, 70.0, 1000)
        np.testing.assert_allclose(bp.magnitude([0.1, 70.0], 1000), np.sqrt(0.5), atol=1e-3)

    @pytest.mark.parametrize("low, high", [(10.0, 10.0), (20.0, 10.0), (0.0, 10.0), (10.0, 500.0)])
    def test_bandpass_rejects_bad_edges(self, low, high):
        with pytest.raises(ParameterError):
            design_bandpass(4, low, high, 1000)

    def test_notch_removes_mains(self):
        notch = design_notch(60.0, 1000, 30.0)
        assert notch.magnitude(60.0, 1000)[0] <= 0.1
        assert notch.magnitude(10.0, 1000)[0] >= 0.95

    def test_notch_above_nyquist_is_rejected(self):
        with pytest.raises(ParameterError):
            design_notch(600.0, 1000)

    def test_notch_needs_positive_q(self):
        with pytest.raises(ParameterError):
            design_notch(60.0, 1000, 0.0)

    @pytest.mark.parametrize("design", [lambda: design_bandpass(), lambda: design_notch()])
    def test_every_section_decays(self, design):
        impulse = np.zeros(100_000)
        impulse[0] = 1.0
        for section in design().sos:
            response = signal.sosfilt(section[None, :], impulse)
            assert np.max(np.abs(response[-1000:])) < 1e-6


class TestApplyFilter:
    def test_zero_in_zero_out(self):
        assert np.all(apply_filter(np.zeros(50), design_bandpass()) == 0)

    def test_impulse_matches_long_division(self):
        bp = design_bandpass()
        b, a = signal.sos2tf(bp.sos)
        impulse = np.zeros(8)
        impulse[0] = 1.0
        np.testing.assert_allclose(
            apply_filter(impulse, bp), impulse_by_long_division(b, a, 8), rtol=1e-6, atol=1e-12
        )

    def test_output_length_matches_input(self):
        assert apply_filter(np.ones(37), design_notch()).shape == (37,)

    def test_non_finite_input_is_rejected(self):
        with pytest.raises(DataError):
            apply_filter(np.array([0.0, np.nan, 1.0]), design_notch())

    @given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 200))
        f = design_bandpass()
        combined = apply_filter(a * x + b * y, f)
        separate = a * apply_filter(x, f) + b * apply_filter(y, f)
        np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-9)


class TestFrameWindows:
    @pytest.mark.parametrize("n, frames", [(1000, 100), (1001, 101), (5, 1), (0, 0)])
    def test_frame_count(self, n, frames):
        assert frame_windows(np.ones(n)).shape == (frames, 100)

    def test_final_window_is_zero_padded(self):
        out = frame_windows(np.arange(1, 6, dtype=float))
        assert out.shape == (1, 100)
        assert list(out[0, :5]) == [1, 2, 3, 4, 5]
        assert np.all(out[0, 5:] == 0)

    def test_hop_is_ten_samples(self):
        out = frame_windows(np.arange(30, dtype=float))
        assert out[1, 0] == 10 and out[2, 0] == 20

    def test_rate_must_divide_sample_rate(self):
        with pytest.raises(ParameterError):
            frame_windows(np.ones(10), 1000, 300)


class TestStatFeatures:
    def test_two_sample_window(self):
        rms, zcr, mwa, _, _ = stat_features(np.array([3.0, -4.0]))
        assert rms == pytest.approx(3.5355, abs=1e-4)
        assert zcr == 1.0
        assert mwa == -0.5

    def test_constant_window_is_degenerate(self):
        feats, degenerate = window_stats(np.full((1, 20), -2.5))
        rms, zcr, mwa, kurt, pse = feats[0]
        assert (rms, zcr, mwa, kurt, pse) == (2.5, 0.0, -2.5, 0.0, 0.0)
        assert degenerate[0]

    def test_single_bin_sinusoid_has_zero_entropy(self):
        n = np.arange(100)
        assert stat_features(np.sin(2 * np.pi * 5 * n / 100))[4] == pytest.approx(0.0, abs=1e-6)

    def test_kurtosis_is_pearson(self):
        w = np.array([1.0, -1.0, 1.0, -1.0])
        assert stat_features(w)[3] == pytest.approx(1.0)

    def test_zeros_inherit_previous_sign(self):
        # + 0 - : one crossing; + 0 + : none
        assert stat_features(np.array([1.0, 0.0, -1.0]))[1] == pytest.approx(0.5)
        assert stat_features(np.array([1.0, 0.0, 1.0]))[1] == 0.0

    def test_window_must_have_two_samples(self):
        with pytest.raises(ParameterError):
            stat_features(np.array([1.0]))

    @given(windows)
    def test_sign_flip(self, w):
        pos, neg = stat_features(w), stat_features(-w)
        np.testing.assert_allclose(neg[[0, 3, 4]], pos[[0, 3, 4]], rtol=1e-9, atol=1e-9)
        assert neg[2] == pytest.approx(-pos[2], abs=1e-9)


class TestEegFeatures:
    def test_pipeline_shape(self, rng):
        r = EegRecording(rng.standard_normal((31, 2000)))
        feats = extract_eeg_features(r, design_bandpass(), design_notch())
        assert feats.frames.shape == (200, 155)
        assert feats.frame_rate_hz == 100
        assert feats.feature_kind is FeatureKind.EEG_STAT

    @pytest.mark.parametrize("channels", [1, 2, 7])
    def test_width_is_five_per_channel(self, rng, channels):
        r = EegRecording(rng.standard_normal((channels, 300)))
        assert extract_eeg_features(r, design_bandpass(), design_notch()).dim == 5 * channels

    def test_silent_recording(self):
        feats = extract_eeg_features(EegRecording(np.zeros((3, 500))), design_bandpass(), design_notch())
        stat_columns = [c * 5 + j for c in range(3) for j in range(3)]
        assert np.all(feats.frames[:, stat_columns] == 0)
        assert feats.degenerate_frames.all()

    def test_channel_lengths_must_match(self):
        with pytest.raises(DataError):
            EegRecording.from_channels([np.zeros(10), np.zeros(11)])


class TestMfcc:
    def test_one_second_gives_about_a_hundred_frames(self, rng):
        feats = extract_mfcc(AudioRecording(rng.standard_normal(16000)))
        assert feats.frames.shape == (98, 13)
        assert feats.frame_rate_hz == 100

    @pytest.mark.parametrize("n", [400, 401, 560, 8000])
    def test_frame_count_formula(self, rng, n):
        feats = extract_mfcc(AudioRecording(rng.standard_normal(n)))
        assert feats.length == (n - 400) // 160 + 1
        assert np.all(np.isfinite(feats.frames))

    def test_silence_is_dct_of_log_floor(self):
        feats = extract_mfcc(AudioRecording(np.zeros(4000)))
        expected = fft.dct(np.full(26, np.log(1e-10)), type=2, norm="ortho")[:13]
        np.testing.assert_allclose(feats.frames, np.broadcast_to(expected, feats.frames.shape))

    def test_tone_lands_in_its_mel_band(self):
        t = np.arange(16000) / 16000
        energies = log_mel_energies(AudioRecording(np.sin(2 * np.pi * 1000 * t)))
        bank = mel_filterbank()
        tone_bin = int(round(1000 * 512 / 16000))
        assert np.argmax(energies.mean(axis=0)) == np.argmax(bank[:, tone_bin])

    def test_wrong_sample_rate_is_rejected(self):
        with pytest.raises(ParameterError):
            extract_mfcc(AudioRecording(np.zeros(8000), 8000))

    def test_analysis_window_is_symmetric_hamming(self):
        # after pre-emphasis a constant signal is flat from the second sample on
        frames = _audio_frames(AudioRecording(np.ones(560)))
        window = frames[1] / (1 - MFCC_PREEMPHASIS)
        np.testing.assert_allclose(window, np.hamming(400), rtol=1e-12)
        assert window[0] == pytest.approx(window[-1])
        assert window[0] == pytest.approx(0.08)
