"""Mono 16-bit PCM WAV reading/writing at the pipeline sample rate."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


class AudioError(Exception):
    """Raised when a waveform file cannot be read or written."""


def write_wav(path: Path | str, waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write a float waveform in [-1, 1] as mono 16-bit PCM."""
    samples = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(samples * 32767.0).astype("<i2")
    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(sample_rate)
            fh.writeframes(pcm.tobytes())
    except OSError as exc:
        raise AudioError(f"cannot write waveform to {path}: {exc}") from exc


def read_wav(path: Path | str, expect_rate: int | None = SAMPLE_RATE) -> np.ndarray:
    """Read a mono PCM WAV file into float64 samples in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (OSError, wave.Error) as exc:
        raise AudioError(f"cannot read waveform from {path}: {exc}") from exc
    if n_channels != 1:
        raise AudioError(f"{path}: expected mono audio, got {n_channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if expect_rate is not None and rate != expect_rate:
        raise AudioError(f"{path}: expected {expect_rate} Hz, got {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
