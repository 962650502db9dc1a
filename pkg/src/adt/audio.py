"""Waveform <-> log-mel-spectrogram frontend and 16-bit PCM WAV files.

Fixed acoustic configuration: 16 kHz mono audio, 640-point STFT with hop 160
(100 frames per second), Hann window, reflect-centered framing, and an
80-band triangular mel filterbank on the HTK scale spanning 0..8 kHz with
unit-peak filters. Log compression clips magnitudes at 1e-5 from below.
"""

from __future__ import annotations

import math
import wave

import numpy as np

from .errors import FormatError, InputError

SAMPLE_RATE = 16_000
N_FFT = 640
HOP = 160
N_MELS = 80
FMIN = 0.0
FMAX = 8_000.0
LOG_FLOOR = 1e-5

FRAME_RATE = SAMPLE_RATE // HOP  # 100 mel frames per second


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank() -> np.ndarray:
    """(N_MELS, N_FFT//2 + 1) triangular filters, each with peak value 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))
    freqs = np.linspace(0.0, SAMPLE_RATE / 2.0, N_FFT // 2 + 1)
    bank = np.zeros((N_MELS, freqs.size))
    for i in range(N_MELS):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def frame_count(n_samples: int) -> int:
    """Frames produced for a waveform of `n_samples` samples."""
    return math.ceil(n_samples / HOP)


_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)
_BANK = mel_filterbank()


def stft_magnitude(wave_data: np.ndarray) -> np.ndarray:
    """(T, N_FFT//2 + 1) magnitude spectrogram, reflect-centered frames."""
    x = np.asarray(wave_data, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"waveform must be 1-d, got shape {x.shape}")
    if x.size == 0:
        raise InputError("waveform is empty")
    t = frame_count(x.size)
    pad = N_FFT // 2
    xp = np.pad(x, pad, mode="reflect")
    starts = np.arange(t) * HOP
    frames = xp[starts[:, None] + np.arange(N_FFT)] * _WINDOW
    return np.abs(np.fft.rfft(frames, axis=-1))


def log_mel(wave_data: np.ndarray) -> np.ndarray:
    """(T, N_MELS) float32 log-mel features with T = ceil(len / hop)."""
    mag = stft_magnitude(wave_data)
    mel = mag @ _BANK.T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


def write_wav(path: str, samples: np.ndarray) -> None:
    """Write mono 16-bit PCM at the fixed sample rate; values clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def read_wav(path: str) -> np.ndarray:
    """Read a mono 16-bit PCM WAV written at the fixed sample rate."""
    with wave.open(path, "rb") as w:
        if w.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise FormatError(
                f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}"
            )
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32767.0
