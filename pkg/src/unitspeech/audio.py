"""Waveform container, 16-bit PCM WAV I/O and resampling."""

import wave
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .exceptions import ContractError


@dataclass
class Waveform:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def rms(self):
        return float(np.sqrt(np.mean(self.samples ** 2))) if self.samples.size else 0.0


def resample(w, sample_rate):
    """Polyphase resampling to ``sample_rate`` (identity when rates match)."""
    if w.sample_rate == sample_rate:
        return w
    if len(w) == 0:
        return Waveform(sample_rate, np.zeros(0))
    g = gcd(w.sample_rate, sample_rate)
    up, down = sample_rate // g, w.sample_rate // g
    return Waveform(sample_rate, resample_poly(w.samples, up, down))


def write_wav(path, w):
    """Write mono 16-bit PCM; samples are clipped to [-1, 1]."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


def read_wav(path):
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ContractError(f"{path}: only 16-bit PCM is supported")
        channels = fh.getnchannels()
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return Waveform(sr, data)
