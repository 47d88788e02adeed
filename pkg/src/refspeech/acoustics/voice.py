"""Jitter, shimmer, F0 statistics and harmonics-to-noise ratio.

All perturbation quotients are computed only over consecutive periods that
belong to the same break-free run. Ratios are reported in percent, the
absolute jitter in seconds and the dB shimmer in decibels.
"""

import numpy as np

from ..errors import DataError
from .pitch import MIN_STABLE_PERIODS

HNR_CAP_DB = 40.0
MAX_F0_STDEV = 100.0


class TooFewPeriods(DataError):
    pass


class ExcludedUnstableF0(DataError):
    reason = "step12_unstable_f0"


def _local_terms(v):
    return np.abs(np.diff(v))


def _quotient_terms(v, width):
    """|v_i - mean(v_{i-h..i+h})| for every i with a full neighbourhood."""
    h = width // 2
    if v.size < width:
        return np.empty(0)
    kernel = np.ones(width) / width
    smooth = np.convolve(v, kernel, mode="valid")
    return np.abs(v[h:v.size - h] - smooth)


def _pooled(runs, fn):
    parts = [fn(r) for r in runs]
    parts = [p for p in parts if p.size]
    return np.concatenate(parts) if parts else np.empty(0)


def _safe_mean(v):
    return float(v.mean()) if v.size else 0.0


def harmonicity(audio, t_start, t_end, period):
    """Normalized autocorrelation of ``audio[t_start:t_end]`` at one period.

    The lag is refined by a parabola through the integer lags around the
    mean period. Returns the numerator and the two energy terms so several
    stretches can be pooled.
    """
    fs = audio.sample_rate
    x = audio.samples[int(round(t_start * fs)):int(round(t_end * fs))]
    lag0 = int(round(period * fs))
    vals = []
    for lag in (lag0 - 1, lag0, lag0 + 1):
        if lag <= 0 or lag >= x.size:
            vals.append((0.0, 0.0, 0.0))
            continue
        a, b = x[:-lag], x[lag:]
        vals.append((float(a @ b), float(a @ a), float(b @ b)))
    return vals


def _r_from(vals):
    rs = []
    for num, e1, e2 in vals:
        rs.append(num / np.sqrt(e1 * e2) if e1 > 0 and e2 > 0 else 0.0)
    a, b, c = rs
    den = a - 2 * b + c
    if den < 0:
        d = 0.5 * (a - c) / den
        if abs(d) <= 1:
            return b - 0.25 * (a - c) * d
    return max(rs)


def hnr_from_r(r, cap=HNR_CAP_DB):
    r_max = 10 ** (cap / 10) / (1 + 10 ** (cap / 10))
    r = float(np.clip(r, 1e-10, r_max))
    return min(10 * np.log10(r / (1 - r)), cap)


def voice_quality_features(track, runs=None, audio=None, min_periods=MIN_STABLE_PERIODS):
    """Perturbation measures over the given break-free period runs.

    ``runs`` defaults to every break-free run of the track (pooled voiced
    frames); pass ``[find_stable_segment(track)]`` for sustained vowels.
    HNR needs audio, taken from ``audio`` or the track's source; without
    audio it is omitted.
    """
    periods = track.periods
    amps = track.amplitudes
    if runs is None:
        runs = track.runs()
    runs = [(a, b) for a, b in runs if b > a]
    n_periods = sum(b - a for a, b in runs)
    if n_periods < max(min_periods, 2):
        raise TooFewPeriods(f"{n_periods} periods, need {max(min_periods, 2)}")

    T = [periods[a:b] for a, b in runs]
    A = [amps[a:b] for a, b in runs]
    all_T = np.concatenate(T)
    all_A = np.concatenate(A)
    mean_T = all_T.mean()
    mean_A = all_A.mean()
    f0 = 1.0 / all_T

    abs_jitter = _safe_mean(_pooled(T, _local_terms))
    feats = {
        "meanF0": float(f0.mean()),
        "stdevF0": float(f0.std(ddof=1)) if f0.size > 1 else 0.0,
        "localJitter": 100.0 * abs_jitter / mean_T,
        "localabsoluteJitter": abs_jitter,
        "rapJitter": 100.0 * _safe_mean(_pooled(T, lambda v: _quotient_terms(v, 3))) / mean_T,
        "ppq5Jitter": 100.0 * _safe_mean(_pooled(T, lambda v: _quotient_terms(v, 5))) / mean_T,
    }
    if mean_A > 0:
        feats["localShimmer"] = 100.0 * _safe_mean(_pooled(A, _local_terms)) / mean_A
        with np.errstate(divide="ignore"):
            db = _pooled(A, lambda v: np.abs(np.diff(20.0 * np.log10(np.maximum(v, 1e-12)))))
        feats["localdbShimmer"] = _safe_mean(db)
        for name, width in (("apq3Shimmer", 3), ("aqpq5Shimmer", 5), ("apq11Shimmer", 11)):
            feats[name] = 100.0 * _safe_mean(_pooled(A, lambda v: _quotient_terms(v, width))) / mean_A

    audio = audio if audio is not None else track.source
    if audio is not None:
        sums = np.zeros((3, 3))
        for a, b in runs:
            sums += np.array(harmonicity(audio, track.pulse_times[a], track.pulse_times[b], mean_T))
        feats["HNR"] = hnr_from_r(_r_from(sums))
    return feats


def check_f0_stability(features, limit=MAX_F0_STDEV):
    """Raise if the F0 standard deviation marks the sample as unusable."""
    if features.get("stdevF0", 0.0) > limit:
        raise ExcludedUnstableF0(f"stdevF0 {features['stdevF0']:.1f} Hz exceeds {limit} Hz")
