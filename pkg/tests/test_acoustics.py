import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refspeech.acoustics import (AudioBuffer, ExcludedLowEnergy, ExcludedUnstableF0,
                                 NoFormantsFound, NoSpeechDetected, NoStableSegment,
                                 NoVoicingDetected, PeriodTrack, TooFewPeriods,
                                 check_f0_stability, extract_period_track, find_stable_segment,
                                 formant_features, read_wav, rhythm_features, segment_vowel,
                                 voice_quality_features, write_wav)
from refspeech.acoustics import formants as formants_mod
from refspeech.errors import ValidationError
from refspeech.synth import pulse_signal, synth_speech, synth_vowel, tone_bursts

import oracles

FS = 16000


def sine(amp, duration, freq=150.0, fs=FS):
    t = np.arange(int(duration * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


class TestAudio:
    def test_validation(self):
        with pytest.raises(ValidationError):
            AudioBuffer(np.zeros((2, 2)), FS)
        with pytest.raises(ValidationError):
            AudioBuffer(np.array([np.nan]), FS)
        with pytest.raises(ValidationError):
            AudioBuffer(np.zeros(3), 0)

    @pytest.mark.parametrize("pcm16", [True, False])
    def test_wav_round_trip(self, tmp_path, pcm16):
        a = AudioBuffer(sine(0.5, 0.1), FS)
        write_wav(tmp_path / "a.wav", a, pcm16=pcm16)
        b = read_wav(tmp_path / "a.wav")
        assert b.sample_rate == FS
        np.testing.assert_allclose(b.samples, a.samples, atol=1e-4 if pcm16 else 1e-7)

    def test_stereo_downmix(self, tmp_path):
        from scipy.io import wavfile
        data = np.stack([np.full(100, 0.5), np.full(100, -0.1)], axis=1).astype(np.float32)
        wavfile.write(tmp_path / "s.wav", FS, data)
        np.testing.assert_allclose(read_wav(tmp_path / "s.wav").samples, 0.2, atol=1e-7)


class TestSegmentation:
    def test_long_sine_is_chunked(self):
        rep = segment_vowel(AudioBuffer(sine(0.2, 5.0), FS))
        assert rep.decision == "kept_whole"
        assert rep.chunks == ((0.0, 3.0), (2.0, 5.0))

    def test_silence_excluded(self):
        with pytest.raises(ExcludedLowEnergy) as exc:
            segment_vowel(AudioBuffer(np.zeros(FS), FS))
        assert exc.value.report.decision == "excluded"

    def test_amplitude_drop_keeps_stretch_before_it(self):
        x = sine(0.5, 6.0)
        x[2 * FS:] *= 0.2
        rep = segment_vowel(AudioBuffer(x, FS))
        assert rep.decision == "segmented"
        assert len(rep.chunks) == 1
        start, end = rep.chunks[0]
        assert start == 0.0 and 1.9 <= end <= 2.0

    def test_idempotent_on_kept_chunks(self):
        x = sine(0.3, 7.0)
        audio = AudioBuffer(x, FS)
        for start, end in segment_vowel(audio).chunks:
            chunk = audio.slice(start, end)
            again = segment_vowel(chunk)
            assert again.decision == "kept_whole"
            assert again.chunks == ((0.0, pytest.approx(chunk.duration)),)


class TestPeriodTrack:
    def test_pulse_train_periods(self):
        audio, _ = synth_vowel(f0=100.0, duration=2.0)
        track = extract_period_track(audio)
        assert abs(track.periods.size - 199) <= 1
        np.testing.assert_allclose(track.periods, 0.01, atol=2e-4)

    def test_white_noise_unvoiced(self):
        noise = np.random.default_rng(0).normal(0, 0.1, 2 * FS)
        with pytest.raises(NoVoicingDetected):
            extract_period_track(AudioBuffer(noise, FS))

    def test_gap_is_a_voice_break(self):
        times = np.concatenate([np.arange(0.005, 1.0, 0.01), np.arange(1.05, 2.0, 0.01)])
        x = pulse_signal(times, np.ones(times.size), 2.0, FS)
        track = extract_period_track(AudioBuffer(x / np.abs(x).max() * 0.5, FS))
        br = np.flatnonzero(track.breaks)
        assert br.size == 1
        assert track.periods[br[0]] == pytest.approx(0.055, abs=2e-3)

    def test_stable_segment_runs(self):
        assert find_stable_segment(PeriodTrack.from_periods(np.full(200, 0.01))) == (0, 200)
        with pytest.raises(NoStableSegment):
            find_stable_segment(PeriodTrack.from_periods(np.full(100, 0.01)))
        p = np.concatenate([np.full(60, 0.01), [0.05], np.full(150, 0.01)])
        assert find_stable_segment(PeriodTrack.from_periods(p)) == (61, 211)


class TestVoiceQuality:
    def test_zero_perturbation(self):
        feats = voice_quality_features(PeriodTrack.from_periods(np.full(150, 0.008)))
        for name in ("localJitter", "localabsoluteJitter", "rapJitter", "ppq5Jitter",
                     "localShimmer", "localdbShimmer", "apq3Shimmer", "aqpq5Shimmer",
                     "apq11Shimmer", "stdevF0"):
            assert feats[name] == pytest.approx(0.0, abs=1e-12)
        assert feats["meanF0"] == pytest.approx(125.0)

    def test_hand_jitter(self):
        track = PeriodTrack.from_periods([0.010, 0.011, 0.010])
        feats = voice_quality_features(track, min_periods=2)
        assert feats["localJitter"] == pytest.approx(100 / 10.333333, rel=1e-4)
        assert feats["localJitter"] == pytest.approx(oracles.local_jitter([10, 11, 10]))

    def test_db_shimmer(self):
        track = PeriodTrack.from_periods([0.01, 0.01], amplitudes=[1.0, 0.5])
        feats = voice_quality_features(track, min_periods=2)
        assert feats["localdbShimmer"] == pytest.approx(6.0206, abs=1e-4)

    def test_too_few_periods(self):
        with pytest.raises(TooFewPeriods):
            voice_quality_features(PeriodTrack.from_periods(np.full(50, 0.01)))

    def test_unstable_f0_excluded(self):
        with pytest.raises(ExcludedUnstableF0):
            check_f0_stability({"stdevF0": 120.0})
        check_f0_stability({"stdevF0": 20.0})

    @given(st.integers(0, 10 ** 6), st.floats(0.25, 2.0))
    def test_jitter_scale_invariant_and_nonnegative(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = 0.008 * (1 + 0.02 * rng.standard_normal(130))
        a = 1 + 0.05 * rng.standard_normal(130)
        f1 = voice_quality_features(PeriodTrack.from_periods(p, a))
        f2 = voice_quality_features(PeriodTrack.from_periods(p * scale, a))
        for k in ("localJitter", "rapJitter", "ppq5Jitter"):
            assert f1[k] >= 0
            assert f2[k] == pytest.approx(f1[k], rel=1e-9)
        assert all(f1[k] >= 0 for k in f1 if "Shimmer" in k)

    @pytest.mark.parametrize("jitter", [1.0, 2.0, 4.0])
    def test_synthesized_jitter_recovered(self, jitter):
        audio, truth = synth_vowel(f0=120.0, jitter=jitter, seed=1)
        track = extract_period_track(audio)
        feats = voice_quality_features(track, [find_stable_segment(track)])
        assert abs(feats["localJitter"] - jitter) <= 0.4
        assert feats["localJitter"] == pytest.approx(truth["localJitter"], abs=0.1)

    def test_synthesized_shimmer_recovered(self):
        audio, truth = synth_vowel(f0=120.0, shimmer=5.0, seed=2)
        track = extract_period_track(audio)
        feats = voice_quality_features(track, [find_stable_segment(track)])
        assert feats["localShimmer"] == pytest.approx(truth["localShimmer"], abs=0.5)

    def test_hnr_decreases_with_noise(self):
        values = []
        for snr in (30, 20, 10):
            audio, _ = synth_vowel(f0=120.0, snr_db=snr, formants=(700, 1200), seed=3)
            track = extract_period_track(audio)
            values.append(voice_quality_features(track, [find_stable_segment(track)])["HNR"])
        assert values[0] > values[1] > values[2]

    def test_hnr_capped(self):
        audio, _ = synth_vowel(f0=120.0)
        track = extract_period_track(audio)
        assert voice_quality_features(track)["HNR"] <= 40.0


class TestFormants:
    def test_two_formant_vowel(self):
        audio, _ = synth_vowel(f0=100.0, formants=(700, 1200))
        feats = formant_features(audio)
        assert abs(feats["F1_mean"] - 700) <= 50
        assert abs(feats["F2_mean"] - 1200) <= 75

    def test_silence(self):
        with pytest.raises(NoFormantsFound):
            formant_features(AudioBuffer(np.zeros(FS), FS))

    def test_median_below_mean_for_right_skew(self, monkeypatch):
        col = np.array([500.0, 505.0, 510.0, 515.0, 900.0])
        tracks = np.column_stack([col, col + 800, np.full(5, np.nan), np.full(5, np.nan)])
        monkeypatch.setattr(formants_mod, "formant_tracks", lambda audio, n: tracks)
        feats = formants_mod.formant_features(None)
        assert feats["F1_median"] <= feats["F1_mean"]
        assert feats["F1_median"] == 510.0 and feats["F1_mean"] == pytest.approx(586.0)
        assert "F3_mean" not in feats


class TestRhythm:
    def test_four_syllables(self):
        onsets = 0.5 + np.arange(4) * 0.6
        audio = tone_bursts(onsets, 0.2, 3.5)
        feats = rhythm_features(audio)
        assert feats["speech_rate"] == pytest.approx(2.0, rel=0.05)
        assert feats["mean_silence_count"] * 2.0 == pytest.approx(3, rel=0.05)
        assert feats["silence_to_speech_ratio"] == pytest.approx(3 / 4)
        assert feats["mean_pause_duration"] == pytest.approx(0.4, abs=0.03)

    def test_continuous_tone(self):
        audio = tone_bursts([0.3], 2.0, 2.6)
        feats = rhythm_features(audio)
        assert feats["articulation_rate"] == pytest.approx(feats["speech_rate"])
        assert feats["silence_rate"] == 0.0

    def test_silence(self):
        with pytest.raises(NoSpeechDetected):
            rhythm_features(AudioBuffer(np.zeros(2 * FS), FS))

    @settings(max_examples=10)
    @given(st.integers(0, 1000))
    def test_speech_rate_at_most_articulation_rate(self, seed):
        audio, _ = synth_speech(seed=seed)
        feats = rhythm_features(audio)
        assert feats["speech_rate"] <= feats["articulation_rate"] + 1e-12
