"""Formant frequencies from frame-wise linear prediction."""

import numpy as np
from scipy.linalg import solve_toeplitz

from ..errors import DataError
from .audio import frame_signal

ANALYSIS_RATE = 10000.0
LPC_ORDER = 12
MAX_BANDWIDTH = 400.0
MIN_FORMANT = 90.0
PREEMPHASIS_FROM = 50.0
FRAME = 0.025
HOP = 0.010


class NoFormantsFound(DataError):
    pass


def lpc(frame, order):
    """Autocorrelation-method predictor polynomial [1, a1, ..., a_order]."""
    r = np.correlate(frame, frame, mode="full")[frame.size - 1: frame.size + order]
    if r[0] <= 0:
        return None
    r = r.copy()
    r[0] *= 1.0 + 1e-9
    a = solve_toeplitz(r[:order], -r[1:order + 1])
    return np.concatenate([[1.0], a])


def frame_formants(frame, fs, order=LPC_ORDER, max_bw=MAX_BANDWIDTH):
    """Ascending resonance frequencies with bandwidth below ``max_bw``."""
    a = lpc(frame, order)
    if a is None or not np.all(np.isfinite(a)):
        return np.empty(0)
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * fs / (2 * np.pi)
    bws = -np.log(np.abs(roots)) * fs / np.pi
    keep = (bws < max_bw) & (freqs > MIN_FORMANT) & (freqs < fs / 2 - MIN_FORMANT)
    return np.sort(freqs[keep])


def formant_tracks(audio, n_formants=4, order=LPC_ORDER):
    """(n_frames, n_formants) array of formant frequencies, NaN where absent."""
    x = audio.resample(ANALYSIS_RATE).samples if audio.sample_rate != ANALYSIS_RATE else audio.samples
    fs = ANALYSIS_RATE
    alpha = np.exp(-2 * np.pi * PREEMPHASIS_FROM / fs)
    y = np.append(x[0], x[1:] - alpha * x[:-1])
    frames, _ = frame_signal(y, fs, FRAME, HOP)
    if frames.shape[0] == 0:
        return np.full((0, n_formants), np.nan)
    energy = np.sqrt(np.mean(frames ** 2, axis=1))
    loud = energy > max(0.03 * energy.max(), 1e-6)
    window = np.hamming(frames.shape[1])
    out = np.full((frames.shape[0], n_formants), np.nan)
    for k in np.flatnonzero(loud):
        f = frame_formants(frames[k] * window, fs, order)[:n_formants]
        out[k, : f.size] = f
    return out


def formant_features(audio, n_formants=4):
    """Mean and median of F1..F4 over analysed frames."""
    tracks = formant_tracks(audio, n_formants)
    if tracks.size == 0 or np.all(np.isnan(tracks[:, 0])):
        raise NoFormantsFound("no frame produced a formant")
    feats = {}
    for k in range(n_formants):
        col = tracks[:, k]
        col = col[~np.isnan(col)]
        if col.size:
            feats[f"F{k + 1}_mean"] = float(col.mean())
            feats[f"F{k + 1}_median"] = float(np.median(col))
    return feats
