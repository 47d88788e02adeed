"""Frame-wise F0 by normalized autocorrelation and glottal period marking."""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .audio import FRAME_HOP, FRAME_LENGTH, frame_rms, frame_signal

VOICING_THRESHOLD = 0.45
OCTAVE_TOLERANCE = 0.85
MAX_PHONATION_PERIOD = 0.02
MIN_STABLE_PERIODS = 110
# frames quieter than this fraction of the loudest frame are never voiced
SILENCE_FRACTION = 0.03
MAX_BRIDGE = 0.1


class NoVoicingDetected(DataError):
    pass


class NoStableSegment(DataError):
    reason = "step11_no_stable_segment"


@dataclass(frozen=True, eq=False)
class PeriodTrack:
    """Glottal pulse marks and the per-period peak amplitudes.

    ``amplitudes[i]`` belongs to the period starting at ``pulse_times[i]``.
    ``source`` keeps the analysed audio so harmonicity can be measured on
    exactly the marked stretch.
    """

    pulse_times: np.ndarray
    amplitudes: np.ndarray
    max_period: float = MAX_PHONATION_PERIOD
    source: object = None

    def __post_init__(self):
        t = np.asarray(self.pulse_times, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("pulse times must be strictly increasing")
        if a.size != max(t.size - 1, 0):
            raise ValueError("need one amplitude per period")
        object.__setattr__(self, "pulse_times", t)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def from_periods(cls, periods, amplitudes=None, start=0.0, **kw):
        periods = np.asarray(periods, dtype=float)
        times = start + np.concatenate([[0.0], np.cumsum(periods)])
        if amplitudes is None:
            amplitudes = np.ones(periods.size)
        return cls(times, np.asarray(amplitudes, dtype=float), **kw)

    @property
    def periods(self):
        return np.diff(self.pulse_times)

    @property
    def breaks(self):
        """True where a period is longer than the maximum phonation period."""
        return self.periods > self.max_period

    def runs(self):
        """Maximal [start, stop) period-index ranges without voice breaks."""
        ok = ~self.breaks
        runs, start = [], None
        for i, good in enumerate(ok):
            if good and start is None:
                start = i
            elif not good and start is not None:
                runs.append((start, i))
                start = None
        if start is not None:
            runs.append((start, ok.size))
        return runs


def _parabolic(y, i):
    """Vertex offset and height of the parabola through y[i-1], y[i], y[i+1]."""
    if i <= 0 or i >= len(y) - 1:
        return 0.0, y[i]
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    if den >= 0:
        return 0.0, b
    delta = 0.5 * (a - c) / den
    return delta, b - 0.25 * (a - c) * delta


def normalized_autocorrelation(frames, max_lag):
    """r[k, tau] = <x[:-tau], x[tau:]> / sqrt(|x[:-tau]|^2 |x[tau:]|^2)."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : max_lag + 1]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]                       # sum x[0 : n-tau]^2
    tail = csum[:, n:n + 1] - csum[:, lags]        # sum x[tau : n]^2
    den = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, acf / den, 0.0)
    return r


def track_f0(audio, f0_floor=60.0, f0_ceil=600.0, threshold=VOICING_THRESHOLD,
             length=FRAME_LENGTH, hop=FRAME_HOP):
    """Per-frame F0 (0 for unvoiced), voicing strength and frame start times."""
    fs = audio.sample_rate
    frames, starts = frame_signal(audio.samples, fs, length, hop)
    if frames.shape[0] == 0:
        return np.zeros(0), np.zeros(0), starts
    frames = frames - frames.mean(axis=1, keepdims=True)
    min_lag = max(2, int(np.floor(fs / f0_ceil)))
    max_lag = min(frames.shape[1] - 2, int(np.ceil(fs / f0_floor)))
    r = normalized_autocorrelation(frames, max_lag + 1)
    energy = np.sqrt(np.mean(frames ** 2, axis=1))
    loud = energy > SILENCE_FRACTION * energy.max() if energy.max() > 0 else np.zeros_like(energy, bool)

    f0 = np.zeros(len(frames))
    strength = np.zeros(len(frames))
    for k in range(len(frames)):
        if not loud[k]:
            continue
        rk = r[k]
        seg = rk[min_lag:max_lag + 1]
        peaks = np.flatnonzero((seg[1:-1] >= seg[:-2]) & (seg[1:-1] > seg[2:])) + 1 + min_lag
        if peaks.size == 0:
            continue
        best = rk[peaks].max()
        if best < threshold:
            continue
        # shortest lag close to the best peak avoids octave-down errors
        lag = peaks[np.flatnonzero(rk[peaks] >= OCTAVE_TOLERANCE * best)[0]]
        f0[k], strength[k] = _refined(rk, lag, fs)
    _fix_octave_errors(f0, strength, r, fs, threshold, min_lag, max_lag)
    return f0, strength, starts


def _refined(rk, lag, fs):
    delta, height = _parabolic(rk, lag)
    return fs / (lag + delta), min(height, 1.0)


def _fix_octave_errors(f0, strength, r, fs, threshold, min_lag, max_lag, tolerance=0.15):
    """Re-pick frames more than 0.75 octave away from the median F0.

    The replacement is the best autocorrelation peak within ``tolerance``
    of the median period, if that peak itself passes the voicing threshold.
    """
    voiced = np.flatnonzero(f0 > 0)
    if voiced.size < 3:
        return
    ref_lag = fs / np.median(f0[voiced])
    lo = max(min_lag, int(np.floor(ref_lag * (1 - tolerance))))
    hi = min(max_lag, int(np.ceil(ref_lag * (1 + tolerance))))
    if hi <= lo:
        return
    for k in voiced:
        if abs(np.log2(f0[k] * ref_lag / fs)) <= 0.75:
            continue
        lag = lo + int(np.argmax(r[k, lo:hi + 1]))
        if r[k, lag] >= threshold and lo < lag < hi:
            f0[k], strength[k] = _refined(r[k], lag, fs)


def _voiced_intervals(f0, starts, length):
    out, begin = [], None
    for k, v in enumerate(f0 > 0):
        if v and begin is None:
            begin = k
        elif not v and begin is not None:
            out.append((begin, k - 1))
            begin = None
    if begin is not None:
        out.append((begin, len(f0) - 1))
    return [(starts[a], starts[b] + length, a, b) for a, b in out]


def _peak_time(x, i):
    delta, _ = _parabolic(x, i)
    return i + delta


def _mark_interval(x, fs, lo, hi, period_at, min_ratio=0.25):
    """Pulse sample positions (fractional) inside x[lo:hi]."""
    pulses = []
    pending = [(lo, hi)]
    floor = 0.2 * x[lo:hi].max() if hi > lo else 0.0
    while pending:
        a, b = pending.pop()
        if b - a < 3:
            continue
        anchor = a + int(np.argmax(x[a:b]))
        t_anchor = anchor / fs
        if x[anchor] <= max(floor, 0.0) or b - a < 1.5 * period_at(t_anchor) * fs:
            continue
        if (anchor == a and a > lo) or (anchor == b - 1 and b < hi):
            # maximum on a boundary is the flank of an already marked pulse
            continue
        chain = [anchor]
        for direction in (1, -1):
            cur, last_T = anchor, None
            while True:
                # the last marked period predicts the next one better than frame F0
                T = last_T if last_T is not None else period_at(cur / fs) * fs
                if direction > 0:
                    s, e = int(np.ceil(cur + 0.7 * T)), int(np.floor(cur + 1.3 * T)) + 1
                else:
                    s, e = int(np.ceil(cur - 1.3 * T)), int(np.floor(cur - 0.7 * T)) + 1
                s, e = max(s, a), min(e, b)
                if e - s < 1:
                    break
                nxt = s + int(np.argmax(x[s:e]))
                if x[nxt] < min_ratio * x[cur] or x[nxt] <= 0:
                    break
                chain.append(nxt)
                last_T = abs(nxt - cur)
                cur = nxt
        chain.sort()
        pulses.extend(chain)
        T0 = period_at(chain[0] / fs) * fs
        T1 = period_at(chain[-1] / fs) * fs
        pending.append((a, int(chain[0] - 0.5 * T0)))
        pending.append((int(chain[-1] + 0.5 * T1) + 1, b))
    return sorted(set(pulses))


def _bridge_weak_gaps(f0, audio, max_gap=MAX_BRIDGE):
    """Treat short unvoiced stretches that are still loud as voiced.

    Strong jitter lowers the autocorrelation peak below the voicing
    threshold in isolated frames; silent gaps are never bridged.
    """
    rms, _ = frame_rms(audio)
    loud = rms > SILENCE_FRACTION * rms.max() if rms.size and rms.max() > 0 else np.zeros(f0.size, bool)
    out = f0.copy()
    voiced = np.flatnonzero(f0 > 0)
    limit = int(round(max_gap / FRAME_HOP))
    for a, b in zip(voiced[:-1], voiced[1:]):
        if 1 < b - a <= limit + 1 and loud[a + 1:b].all():
            out[a + 1:b] = np.interp(np.arange(a + 1, b), [a, b], [f0[a], f0[b]])
    return out


def _merge_close(marks, x, fs, period_at):
    """Drop the weaker of two marks closer than half a local period."""
    kept = []
    for m in marks:
        if kept and m - kept[-1] < 0.5 * period_at(m / fs) * fs:
            if x[m] > x[kept[-1]]:
                kept[-1] = m
            continue
        kept.append(m)
    return np.array(kept, dtype=int)


def extract_period_track(audio, f0_floor=60.0, f0_ceil=600.0,
                         max_period=MAX_PHONATION_PERIOD):
    """Mark one glottal pulse per cycle in the voiced parts of ``audio``.

    Frame F0 predicts where the next cycle's maximum should fall; the
    largest sample within +-20% of that prediction becomes the next pulse,
    refined to sub-sample precision. Each period's amplitude is the peak
    absolute value over the cycle centred on its opening pulse.
    """
    x = audio.samples
    fs = audio.sample_rate
    f0, _, starts = track_f0(audio, f0_floor, f0_ceil)
    f0 = _bridge_weak_gaps(f0, audio)
    voiced = f0 > 0
    if not voiced.any():
        raise NoVoicingDetected("no frame passes the voicing criterion")
    centres = starts + FRAME_LENGTH / 2
    vc, vf = centres[voiced], f0[voiced]

    def period_at(t):
        return 1.0 / np.interp(t, vc, vf)

    marks = []
    for t0, t1, _, _ in _voiced_intervals(f0, starts, FRAME_LENGTH):
        lo, hi = int(round(t0 * fs)), min(len(x), int(round(t1 * fs)))
        marks.extend(_mark_interval(x, fs, lo, hi, period_at))
    marks = _merge_close(sorted(set(marks)), x, fs, period_at)
    if marks.size < 3:
        raise NoVoicingDetected("fewer than three glottal pulses found")

    times = np.array([_peak_time(x, i) for i in marks]) / fs
    ax = np.abs(x)
    amps = []
    for i in range(marks.size - 1):
        T = min(times[i + 1] - times[i], max_period) * fs
        s = max(0, int(np.ceil(marks[i] - 0.5 * T)))
        e = min(len(x), int(np.ceil(marks[i] + 0.5 * T)))
        j = s + int(np.argmax(ax[s:e]))
        amps.append(_parabolic(ax, j)[1])
    return PeriodTrack(times, np.array(amps), max_period=max_period, source=audio)


def find_stable_segment(track, min_periods=MIN_STABLE_PERIODS):
    """Longest break-free run of periods, as a [start, stop) index range."""
    if track.periods.size == 0:
        raise NoStableSegment("empty period track")
    runs = track.runs()
    if not runs:
        raise NoStableSegment("every period is a voice break")
    start, stop = max(runs, key=lambda r: (r[1] - r[0], -r[0]))
    if stop - start < min_periods:
        raise NoStableSegment(
            f"longest break-free run has {stop - start} periods, need {min_periods}"
        )
    return start, stop
