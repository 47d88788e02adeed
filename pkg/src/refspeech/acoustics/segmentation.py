"""Sustained-vowel screening and chunking.

Recordings with too little energy are dropped; recordings whose frame
energy jumps abruptly are cut down to their longest stable stretch (the
stretch after the last jump is discarded, as it usually reflects a gain
drop); anything longer than 4 s is split into 3 s chunks every 2 s.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .audio import FRAME_LENGTH, frame_rms

MIN_MAX_RMS = 0.005
ABRUPT_CHANGE = 0.15
MAX_UNCHUNKED = 4.0
CHUNK = 3.0
CHUNK_HOP = 2.0
MIN_SEGMENT = 0.25


@dataclass(frozen=True)
class SegmentationReport:
    decision: str  # kept_whole | segmented | excluded
    reason: str
    chunks: tuple = field(default_factory=tuple)


class SegmentationExcluded(DataError):
    reason = "excluded"

    def __init__(self, message):
        super().__init__(message)
        self.report = SegmentationReport("excluded", self.reason, ())


class ExcludedLowEnergy(SegmentationExcluded):
    reason = "step1_low_energy"


class ExcludedNoStableSegment(SegmentationExcluded):
    reason = "step8_no_stable_segment"


def split_chunks(start, end, chunk=CHUNK, hop=CHUNK_HOP, max_len=MAX_UNCHUNKED):
    """Chunks of ``chunk`` seconds every ``hop`` seconds for long segments.

    A trailing remainder shorter than a full chunk is dropped.
    """
    if end - start <= max_len + 1e-9:
        return [(start, end)]
    out = []
    t = start
    while t + chunk <= end + 1e-9:
        out.append((round(t, 6), round(min(t + chunk, end), 6)))
        t += hop
    return out


def _change_runs(rms, threshold):
    """Group consecutive above-threshold frame-to-frame jumps into events.

    Returns (first_frame, last_frame) pairs: frames first..last straddle the
    change.
    """
    jumps = np.flatnonzero(np.abs(np.diff(rms)) > threshold)
    runs = []
    for j in jumps:
        if runs and j <= runs[-1][1]:
            runs[-1][1] = j + 1
        else:
            runs.append([j, j + 1])
    return [tuple(r) for r in runs]


def segment_vowel(audio, min_rms=MIN_MAX_RMS, change=ABRUPT_CHANGE):
    """Screen a sustained-vowel recording; raise if it must be excluded."""
    rms, starts = frame_rms(audio)
    if len(rms) == 0 or rms.max() < min_rms:
        raise ExcludedLowEnergy(
            f"maximum frame RMS {rms.max() if len(rms) else 0.0:.4g} below {min_rms}"
        )
    signal_rms = float(np.sqrt(np.mean(audio.samples ** 2)))
    runs = _change_runs(rms, change * signal_rms)
    duration = audio.duration
    if not runs:
        return SegmentationReport("kept_whole", "step4_no_abrupt_change",
                                  tuple(split_chunks(0.0, duration)))

    # Stable stretches lie between change events; the one after the last
    # change is not a candidate.
    # Frame ``first`` is the last frame untouched by a change, so the
    # stretch ends where it ends; frame ``last`` is the first settled one.
    segments = []
    seg_start = 0.0
    for first, last in runs:
        segments.append((seg_start, min(starts[first] + FRAME_LENGTH, starts[last])))
        seg_start = starts[last]
    segments = [(a, b) for a, b in segments if b - a >= MIN_SEGMENT]
    if not segments:
        raise ExcludedNoStableSegment("no stable stretch between abrupt energy changes")
    start, end = max(segments, key=lambda s: (s[1] - s[0], -s[0]))
    return SegmentationReport("segmented", "step8_longest_stable_segment",
                              tuple(split_chunks(round(start, 6), round(end, 6))))
