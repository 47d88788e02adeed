"""Vowel screening and acoustic feature extraction."""

from .audio import AudioBuffer, read_wav, write_wav
from .formants import NoFormantsFound, formant_features
from .pitch import (NoStableSegment, NoVoicingDetected, PeriodTrack, extract_period_track,
                    find_stable_segment, track_f0)
from .rhythm import NoSpeechDetected, rhythm_features
from .segmentation import (ExcludedLowEnergy, ExcludedNoStableSegment, SegmentationExcluded,
                           SegmentationReport, segment_vowel)
from .voice import ExcludedUnstableF0, TooFewPeriods, check_f0_stability, voice_quality_features

__all__ = [
    "AudioBuffer", "read_wav", "write_wav", "formant_features", "NoFormantsFound",
    "PeriodTrack", "extract_period_track", "find_stable_segment", "track_f0",
    "NoStableSegment", "NoVoicingDetected", "rhythm_features", "NoSpeechDetected",
    "segment_vowel", "SegmentationReport", "SegmentationExcluded", "ExcludedLowEnergy",
    "ExcludedNoStableSegment", "voice_quality_features", "check_f0_stability",
    "TooFewPeriods", "ExcludedUnstableF0",
]
