"""Synthetic speech-like signals, transcripts and feature corpora.

Every generator returns the exact ground truth of what it synthesized, so
measurements can be checked against construction rather than against
another estimator.
"""

import csv
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .acoustics.audio import AudioBuffer, write_wav
from .corpus import (FeatureTable, SampleRecord, VOCAL_TRACT_FEATURES, VOICE_QUALITY_FEATURES,
                     save_feature_table)
from .rng import derive_rng, derive_seed
from .text import Transcript, type_token_ratio, write_transcripts

PULSE_WIDTH = 0.0003


def _local_ratio(v):
    return np.mean(np.abs(np.diff(v))) / np.mean(v)


def perturbed_sequence(n, centre, target, rng, max_iter=8):
    """``n`` positive values around ``centre`` whose local perturbation
    (mean absolute successive difference over the mean) equals ``target``.
    """
    if target <= 0:
        return np.full(n, float(centre))
    dev = rng.standard_normal(n)
    v = centre * (1 + dev * target * np.sqrt(np.pi) / 2)
    for _ in range(max_iter):
        d = v - v.mean()
        v = v.mean() + d * (target / _local_ratio(v))
    return v


def pulse_signal(times, amplitudes, duration, fs, width=PULSE_WIDTH):
    """Pulses centred at ``times`` (seconds, sub-sample exact).

    ``width`` > 0 gives Gaussian pulses of that standard deviation; ``None``
    gives band-limited impulses (Hann-windowed sinc), whose spectrum is flat.
    """
    n = int(round(duration * fs))
    x = np.zeros(n)
    half = int(np.ceil(5 * width * fs)) if width else 24
    for t, a in zip(times, amplitudes):
        c = t * fs
        i0, i1 = max(0, int(np.floor(c)) - half), min(n, int(np.ceil(c)) + half + 1)
        if i0 >= i1:
            continue
        d = np.arange(i0, i1) - c
        if width:
            x[i0:i1] += a * np.exp(-0.5 * (d / (width * fs)) ** 2)
        else:
            win = 0.5 * (1 + np.cos(np.pi * np.clip(d / (half + 1), -1, 1)))
            x[i0:i1] += a * np.sinc(d) * win
    return x


def resonator(x, freq, bandwidth, fs):
    """Two-pole resonance with unit gain at DC."""
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([sum(a)], a, x)


def synth_vowel(f0=120.0, duration=2.0, fs=16000, jitter=0.0, shimmer=0.0,
                snr_db=None, formants=(), bandwidths=None, peak=0.5, seed=0,
                label="vowel"):
    """Sustained vowel: jittered/shimmered glottal pulses, optional formants and noise.

    ``jitter`` and ``shimmer`` are local perturbations in percent. The
    returned truth holds the exact perturbation of the synthesized pulse
    sequence and the mean F0.
    """
    rng = derive_rng(seed, f"synth:{label}")
    n_est = int(duration * f0) + 2
    periods = perturbed_sequence(n_est, 1.0 / f0, jitter / 100.0, rng)
    amps = perturbed_sequence(n_est + 1, 1.0, shimmer / 100.0, rng)
    start = 0.005
    times = start + np.concatenate([[0.0], np.cumsum(periods)])
    keep = times < duration - 0.005
    times, amps = times[keep], amps[: keep.sum()]
    x = pulse_signal(times, amps, duration, fs, None if formants else PULSE_WIDTH)
    if formants:
        bandwidths = bandwidths or [80.0 + 0.05 * f for f in formants]
        for f, b in zip(formants, bandwidths):
            x = resonator(x, f, b, fs)
    if snr_db is not None:
        noise = rng.standard_normal(x.size)
        p_sig = np.mean(x ** 2)
        x = x + noise * np.sqrt(p_sig / 10 ** (snr_db / 10))
    x *= peak / np.max(np.abs(x))
    P = np.diff(times)
    A = amps[:-1]
    truth = {
        "localJitter": 100 * _local_ratio(P) if P.size > 1 else 0.0,
        "localShimmer": 100 * _local_ratio(A) if A.size > 1 else 0.0,
        "meanF0": float(np.mean(1 / P)),
        "n_periods": int(P.size),
    }
    return AudioBuffer(x, float(fs)), truth


def tone_bursts(onsets, burst, duration, fs=16000, freq=150.0, level_db=-10.0):
    """Harmonic-rich tone bursts (``burst`` s long) starting at ``onsets``."""
    t = np.arange(int(round(duration * fs))) / fs
    amp = 10 ** (level_db / 20) * np.sqrt(2)
    wave = sum(np.sin(2 * np.pi * k * freq * t) / k for k in (1, 2, 3))
    wave = wave / np.max(np.abs(wave)) * amp
    env = np.zeros_like(t)
    ramp = 0.005
    for on in onsets:
        inside = (t >= on) & (t < on + burst)
        env[inside] = 1.0
        up = inside & (t < on + ramp)
        env[up] = (t[up] - on) / ramp
        down = inside & (t > on + burst - ramp)
        env[down] = (on + burst - t[down]) / ramp
    return AudioBuffer(wave * env, float(fs))


def synth_speech(n_syllables=8, syllable=0.18, pause=0.35, lead=0.5, fs=16000,
                 f0=130.0, seed=0):
    """Connected-speech stand-in: voiced syllables with pauses between groups."""
    rng = derive_rng(seed, "synth:speech")
    onsets, t = [], lead
    for i in range(n_syllables):
        onsets.append(t)
        t += syllable + (pause if rng.random() < 0.4 else 0.06)
    duration = t + lead
    audio = tone_bursts(onsets, syllable, duration, fs, freq=f0 * (1 + 0.05 * rng.standard_normal()))
    return audio, {"n_syllables": n_syllables}


_WORDS = (
    "boy girl mother cookie jar stool sink water window kitchen plate dish curtain "
    "cup tree garden floor cabinet shelf falling reaching drying taking standing "
    "overflowing looking open big small happy little young"
).split()


def synth_tokens(n_tokens, n_types, seed=0):
    """Token stream with exactly ``n_types`` distinct words out of ``n_tokens``."""
    if not 1 <= n_types <= n_tokens:
        raise ValueError("need 1 <= n_types <= n_tokens")
    rng = derive_rng(seed, "synth:tokens")
    vocab = [f"{_WORDS[i % len(_WORDS)]}{i // len(_WORDS) or ''}" for i in range(n_types)]
    extra = rng.choice(n_types, size=n_tokens - n_types)
    seq = np.concatenate([np.arange(n_types), extra])
    rng.shuffle(seq)
    return [vocab[i] for i in seq]


# -- feature-level corpora ---------------------------------------------------

VOWEL_FEATURES = VOICE_QUALITY_FEATURES + VOCAL_TRACT_FEATURES

# plausible centre/scale per feature (female, male)
_CENTRES = {
    "meanF0": ((205.0, 20.0), (120.0, 15.0)),
    "stdevF0": ((3.0, 1.0), (2.5, 0.8)),
    "HNR": ((20.0, 3.0), (18.0, 3.0)),
    "localJitter": ((0.5, 0.15), (0.6, 0.2)),
    "localabsoluteJitter": ((2.5e-5, 8e-6), (5e-5, 1.5e-5)),
    "rapJitter": ((0.28, 0.08), (0.32, 0.1)),
    "ppq5Jitter": ((0.3, 0.09), (0.35, 0.1)),
    "localShimmer": ((3.5, 1.0), (4.0, 1.2)),
    "localdbShimmer": ((0.3, 0.09), (0.35, 0.1)),
    "apq3Shimmer": ((1.8, 0.5), (2.1, 0.6)),
    "aqpq5Shimmer": ((2.1, 0.6), (2.4, 0.7)),
    "apq11Shimmer": ((2.8, 0.8), (3.2, 0.9)),
}
for _k, (_f, _m) in zip(range(1, 5), ((850, 730), (1550, 1200), (2900, 2500), (4000, 3500))):
    _CENTRES[f"F{_k}_mean"] = ((_f, 0.08 * _f), (_m, 0.08 * _m))
    _CENTRES[f"F{_k}_median"] = _CENTRES[f"F{_k}_mean"]

# correlated groups share a latent factor, mirroring jitter/shimmer/formant redundancy
_GROUPS = {
    "jitter": ("localJitter", "localabsoluteJitter", "rapJitter", "ppq5Jitter"),
    "shimmer": ("localShimmer", "localdbShimmer", "apq3Shimmer", "aqpq5Shimmer", "apq11Shimmer"),
    **{f"F{k}": (f"F{k}_mean", f"F{k}_median") for k in range(1, 5)},
}


def _feature_draws(rng, n, features, gender):
    g = 0 if gender == "F" else 1
    z = rng.standard_normal((n, len(features)))
    index = {f: i for i, f in enumerate(features)}
    for members in _GROUPS.values():
        cols = [index[m] for m in members if m in index]
        if len(cols) > 1:
            latent = rng.standard_normal(n)
            z[:, cols] = 0.9 * latent[:, None] + np.sqrt(1 - 0.81) * z[:, cols]
    out = np.empty_like(z)
    for f, j in index.items():
        mu, sd = _CENTRES.get(f, ((0.0, 1.0), (0.0, 1.0)))[g]
        out[:, j] = mu + sd * z[:, j]
    return out


def reference_population(n_per_gender=500, seed=0, features=VOWEL_FEATURES,
                         task="sustained_vowel", dataset_id="ref"):
    """Healthy reference population: one sample per speaker, both genders."""
    rng = derive_rng(seed, f"synth:reference:{task}")
    rows = []
    for gender in ("F", "M"):
        X = _feature_draws(rng, n_per_gender, features, gender)
        ages = rng.integers(20, 80, size=n_per_gender)
        for i in range(n_per_gender):
            sid = f"{dataset_id}-{gender}{i:04d}"
            rows.append(SampleRecord(
                sample_id=f"{sid}-{task[:3]}", speaker_id=sid, dataset_id=dataset_id,
                task=task, gender=gender, age=int(ages[i]), label="control",
                features=dict(zip(features, map(float, X[i]))),
            ))
    return FeatureTable(features, rows)


def disease_corpus(n_speakers_per_class=40, samples_per_speaker=3, shifted=None,
                   shift_sd=4.0, seed=0, features=VOWEL_FEATURES,
                   task="sustained_vowel", dataset_id="dis"):
    """Balanced two-class corpus where patients shift chosen features upward.

    Speakers alternate control/patient and gender; each shifted feature is
    moved by ``shift_sd`` of its control standard deviation in patients.
    """
    if shifted is None:
        shifted = ("localJitter", "stdevF0", "localShimmer")
    rng = derive_rng(seed, f"synth:disease:{task}")
    rows = []
    index = {f: i for i, f in enumerate(features)}
    for s in range(2 * n_speakers_per_class):
        label = "control" if s % 2 == 0 else "patient"
        gender = "F" if (s // 2) % 2 == 0 else "M"
        g = 0 if gender == "F" else 1
        age = int(rng.integers(45, 85))
        # speaker offset keeps repeated samples of one speaker correlated
        centre = np.array([_CENTRES.get(f, ((0, 1), (0, 1)))[g][0] for f in features])
        base = _feature_draws(rng, 1, features, gender)[0] - centre
        X = _feature_draws(rng, samples_per_speaker, features, gender) - centre
        X = centre + np.sqrt(0.5) * (X + base)
        if label == "patient":
            for f in shifted:
                X[:, index[f]] += shift_sd * _CENTRES.get(f, ((0, 1), (0, 1)))[g][1]
        spk = f"{dataset_id}-{s:03d}"
        for k in range(samples_per_speaker):
            rows.append(SampleRecord(
                sample_id=f"{spk}-{k}", speaker_id=spk, dataset_id=dataset_id,
                task=task, gender=gender, age=age, label=label,
                features=dict(zip(features, map(float, X[k]))),
            ))
    return FeatureTable(features, rows)


# -- on-disk profiles -------------------------------------------------------

PROFILES = ("vowel", "silence", "speech", "two_class", "transcripts")
METADATA_COLUMNS = ("file", "speaker_id", "dataset_id", "gender", "age", "label")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _meta_row(name, i, label="control"):
    return [name, f"syn-{i:03d}", "synth", "F" if i % 2 == 0 else "M", 40 + i % 40, label]


def write_profile(profile, out_dir, seed=0, n=3, jitter=1.0, shimmer=3.0, snr_db=None,
                  f0=120.0, formants=()):
    """Write a synthetic corpus to ``out_dir``; returns the file names written.

    ``vowel`` and ``silence`` write WAV files with metadata.csv and
    ground_truth.csv; ``speech`` adds transcripts.jsonl; ``two_class``
    writes reference.csv and disease.csv feature tables; ``transcripts``
    writes token streams of growing lexical variety with their truth.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if profile in ("vowel", "silence", "speech"):
        meta, truth_rows, transcripts = [], [], []
        for i in range(n):
            name = f"{profile}_{i:03d}.wav"
            if profile == "vowel":
                audio, truth = synth_vowel(f0=f0, jitter=jitter, shimmer=shimmer, snr_db=snr_db,
                                           formants=tuple(formants), seed=seed,
                                           label=f"vowel:{i}")
                truth_rows.append([name, truth["localJitter"], truth["localShimmer"],
                                   truth["meanF0"], truth["n_periods"]])
            elif profile == "silence":
                audio = AudioBuffer(np.zeros(32000), 16000.0)
                truth_rows.append([name, "", "", "", 0])
            else:
                audio, truth = synth_speech(seed=derive_seed(seed, f"speech:{i}"), f0=f0)
                words = synth_tokens(40, 20 + i, seed=seed + i)
                transcripts.append(Transcript.from_words(f"speech_{i:03d}", words))
                truth_rows.append([name, "", "", "", truth["n_syllables"]])
            write_wav(out / name, audio, pcm16=False)
            meta.append(_meta_row(name, i))
            written.append(name)
        _write_csv(out / "metadata.csv", METADATA_COLUMNS, meta)
        _write_csv(out / "ground_truth.csv",
                   ("file", "localJitter", "localShimmer", "meanF0",
                    "n_syllables" if profile == "speech" else "n_periods"), truth_rows)
        written += ["metadata.csv", "ground_truth.csv"]
        if transcripts:
            write_transcripts(transcripts, out / "transcripts.jsonl")
            written.append("transcripts.jsonl")
    elif profile == "two_class":
        save_feature_table(reference_population(seed=seed), out / "reference.csv")
        save_feature_table(disease_corpus(seed=seed), out / "disease.csv")
        written += ["disease.csv", "reference.csv"]
    else:
        transcripts, truth_rows = [], []
        for i in range(n):
            n_tokens = 60
            n_types = max(1, int(round(n_tokens * (i + 1) / (n + 1))))
            words = synth_tokens(n_tokens, n_types, seed=seed + i)
            sid = f"text_{i:03d}"
            transcripts.append(Transcript.from_words(sid, words))
            truth_rows.append([sid, n_tokens, n_types, type_token_ratio(n_tokens, n_types),
                               (n_tokens - n_types) / n_tokens])
        write_transcripts(transcripts, out / "transcripts.jsonl")
        _write_csv(out / "ground_truth.csv",
                   ("sample_id", "N", "V", "type_token_ratio", "repetition_ratio"), truth_rows)
        written += ["ground_truth.csv", "transcripts.jsonl"]
    return sorted(written)
