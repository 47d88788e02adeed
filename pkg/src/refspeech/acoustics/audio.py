"""Audio container, WAV I/O and short-time framing."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from ..errors import ValidationError

FRAME_LENGTH = 0.040
FRAME_HOP = 0.010


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValidationError("AudioBuffer expects mono samples")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("audio contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def slice(self, start, end):
        i0 = max(0, int(round(start * self.sample_rate)))
        i1 = min(len(self.samples), int(round(end * self.sample_rate)))
        return AudioBuffer(self.samples[i0:i1], self.sample_rate)

    def resample(self, rate):
        if rate == self.sample_rate:
            return self
        ratio = Fraction(int(round(rate)), int(round(self.sample_rate))).limit_denominator(1000)
        y = resample_poly(self.samples, ratio.numerator, ratio.denominator)
        return AudioBuffer(y, float(rate))


def read_wav(path):
    """Read PCM16/PCM32/float WAV; stereo is averaged to mono."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioBuffer(x, float(rate))


def write_wav(path, audio, pcm16=True):
    x = np.clip(audio.samples, -1.0, 1.0)
    if pcm16:
        data = np.round(x * 32767.0).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, int(round(audio.sample_rate)), data)


def frame_signal(x, rate, length=FRAME_LENGTH, hop=FRAME_HOP):
    """Frames as a (n_frames, frame_len) view plus frame start times."""
    n = int(round(length * rate))
    h = int(round(hop * rate))
    if len(x) < n:
        return np.empty((0, n)), np.empty(0)
    count = 1 + (len(x) - n) // h
    idx = np.arange(n)[None, :] + h * np.arange(count)[:, None]
    return x[idx], np.arange(count) * h / rate


def frame_rms(audio, length=FRAME_LENGTH, hop=FRAME_HOP):
    frames, starts = frame_signal(audio.samples, audio.sample_rate, length, hop)
    return np.sqrt(np.mean(frames ** 2, axis=1)), starts
