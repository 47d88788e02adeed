"""Speech/pause timing and syllable-rate measures from the intensity contour."""

import numpy as np

from ..errors import DataError
from .audio import FRAME_HOP, FRAME_LENGTH, frame_signal
from .pitch import track_f0

SILENCE_DB = -25.0
MIN_DIP_DB = 2.0
MIN_SEGMENT = 0.1
ABS_FLOOR_DB = -90.0


class NoSpeechDetected(DataError):
    pass


def intensity_db(audio, length=FRAME_LENGTH, hop=FRAME_HOP):
    frames, starts = frame_signal(audio.samples, audio.sample_rate, length, hop)
    power = np.mean(frames ** 2, axis=1)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(power)
    return np.maximum(db, -300.0), starts + length / 2


def _runs(mask):
    """(start, stop) index pairs of True runs."""
    edges = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def speech_segments(db, hop=FRAME_HOP, threshold=None, min_segment=MIN_SEGMENT):
    """Speech mask after removing too-short pauses and then too-short speech."""
    if threshold is None:
        threshold = np.percentile(db, 99) + SILENCE_DB
    speech = db >= threshold
    min_frames = int(round(min_segment / hop))
    runs = _runs(~speech)
    for a, b in runs:
        interior = a > 0 and b < speech.size
        if interior and b - a < min_frames:
            speech[a:b] = True
    for a, b in _runs(speech):
        if b - a < min_frames:
            speech[a:b] = False
    return speech, threshold


def syllable_nuclei(db, voiced, threshold, min_dip=MIN_DIP_DB):
    """Indices of intensity peaks separated by dips of at least ``min_dip`` dB."""
    k = np.arange(1, db.size - 1)
    is_peak = (db[k] >= db[k - 1]) & (db[k] > db[k + 1])
    cands = [i for i in k[is_peak] if db[i] >= threshold and voiced[i]]
    accepted = []
    for c in cands:
        if not accepted:
            accepted.append(c)
            continue
        p = accepted[-1]
        dip = db[p:c + 1].min()
        if db[c] - dip >= min_dip and db[p] - dip >= min_dip:
            accepted.append(c)
        elif db[c] > db[p]:
            accepted[-1] = c
    return np.array(accepted, dtype=int)


def rhythm_features(audio):
    """Rate and pause measures over the span from first to last speech frame."""
    db, centres = intensity_db(audio)
    if db.size < 3 or db.max() < ABS_FLOOR_DB:
        raise NoSpeechDetected("recording is silent")
    speech, threshold = speech_segments(db)
    if not speech.any():
        raise NoSpeechDetected("no frame above the silence threshold")
    f0, _, _ = track_f0(audio)
    voiced = np.zeros(db.size, bool)
    voiced[: f0.size] = f0[: db.size] > 0
    nuclei = syllable_nuclei(db, voiced & speech, threshold)
    if nuclei.size == 0:
        raise NoSpeechDetected("no syllable nuclei found")

    # frame k stands for [centre - hop/2, centre + hop/2]
    half = FRAME_HOP / 2
    sp = [(centres[a] - half, centres[b - 1] + half) for a, b in _runs(speech)]
    first, last = sp[0][0], sp[-1][1]
    pauses = [(sp[i][1], sp[i + 1][0]) for i in range(len(sp) - 1)]
    total = last - first
    phonation = sum(e - s for s, e in sp)
    pause_total = sum(e - s for s, e in pauses)
    n = float(nuclei.size)
    return {
        "speech_rate": n / total,
        "articulation_rate": n / phonation,
        "avg_syllable_duration": phonation / n,
        "mean_pause_duration": pause_total / len(pauses) if pauses else 0.0,
        "mean_speech_duration": phonation / len(sp),
        "silence_rate": pause_total / total,
        "silence_to_speech_ratio": len(pauses) / len(sp),
        "mean_silence_count": len(pauses) / total,
    }
