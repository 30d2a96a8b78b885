"""Noise mixing at controlled SNR, multi-crop sampling, and SpecAugment.

All randomness comes through an explicit ``numpy.random.Generator`` so
augmentation is reproducible and parallelizable with per-utterance streams.
Draw order is part of each function's contract (documented per function) so
tests can replay decisions with a twin generator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, read_wav

LONG_CROP_S = 6.0
SHORT_CROP_S = 4.0
NOISE_PROB = 0.5
SNR_MIN_DB = 6.0
SNR_MAX_DB = 40.0
FREQ_MASK_MAX = 8
TIME_MASK_MAX = 10


class AugmentError(Exception):
    """Raised for augmentation precondition failures."""


class SilentNoiseWarning(UserWarning):
    """Emitted when mixing is requested against an all-zero noise signal."""


@dataclass
class CropPlan:
    """Sampled view windows: start times in seconds for long and short crops."""

    long_starts_s: list[float]
    short_starts_s: list[float]
    long_crop_s: float = LONG_CROP_S
    short_crop_s: float = SHORT_CROP_S


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Return speech + g·noise with gain g chosen to hit ``snr_db`` exactly.

    Powers are mean squared amplitudes.  ``snr_db = inf`` is the no-noise
    sentinel and returns the speech unchanged.  Noise shorter than the speech
    is tiled; longer noise is cropped from the start.
    """
    speech = np.asarray(speech, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return speech.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < len(speech):
        reps = int(np.ceil(len(speech) / len(noise)))
        noise = np.tile(noise, reps)
    noise = noise[: len(speech)]

    p_speech = float(np.mean(speech**2))
    p_noise = float(np.mean(noise**2))
    if p_speech <= 0:
        raise AugmentError("cannot mix: speech signal is silent (SNR undefined)")
    if p_noise <= 0:
        warnings.warn("noise signal is silent; returning speech unchanged", SilentNoiseWarning)
        return speech.copy()
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return speech + gain * noise


def reflect_pad_to(waveform: np.ndarray, min_samples: int) -> np.ndarray:
    """Reflection-pad a waveform (both ends) up to at least ``min_samples``."""
    waveform = np.asarray(waveform)
    if len(waveform) >= min_samples:
        return waveform
    deficit = min_samples - len(waveform)
    left = deficit // 2
    right = deficit - left
    return np.pad(waveform, (left, right), mode="reflect")


def sample_crops(
    utterance_len_s: float,
    n_long: int,
    n_short: int,
    rng: np.random.Generator,
    long_crop_s: float = LONG_CROP_S,
    short_crop_s: float = SHORT_CROP_S,
) -> CropPlan:
    """Uniformly random crop windows; draws n_long long starts then n_short short starts."""
    if n_long < 1:
        raise AugmentError("need at least one long crop")
    if utterance_len_s < long_crop_s - 1e-9:
        raise AugmentError(
            f"utterance {utterance_len_s:.2f}s shorter than long crop {long_crop_s}s "
            "(reflection-pad before cropping)"
        )
    long_starts = [
        float(rng.uniform(0.0, max(utterance_len_s - long_crop_s, 0.0)))
        for _ in range(n_long)
    ]
    short_starts = [
        float(rng.uniform(0.0, max(utterance_len_s - short_crop_s, 0.0)))
        for _ in range(n_short)
    ]
    return CropPlan(long_starts, short_starts, long_crop_s, short_crop_s)


def cut_crop(waveform: np.ndarray, start_s: float, crop_s: float) -> np.ndarray:
    start = int(round(start_s * SAMPLE_RATE))
    length = int(round(crop_s * SAMPLE_RATE))
    if start + length > len(waveform):
        start = max(len(waveform) - length, 0)
    return waveform[start : start + length]


class NoiseBank:
    """Source of noise waveforms: synthetic generators and optional audio files.

    Synthetic kinds: ``white`` (flat), ``pink`` (1/f), and ``babble`` (speech-band
    filtered noise with slow amplitude modulation).  File entries are tiled to
    the requested length from a random offset.
    """

    SYNTHETIC_KINDS = ("white", "pink", "babble")

    def __init__(
        self,
        kinds: tuple[str, ...] = SYNTHETIC_KINDS,
        noise_files: list | None = None,
    ) -> None:
        self.kinds = list(kinds)
        self.file_waves = [read_wav(p) for p in (noise_files or [])]
        if not self.kinds and not self.file_waves:
            raise AugmentError("noise bank is empty")

    def __len__(self) -> int:
        return len(self.kinds) + len(self.file_waves)

    def sample(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Draw one entry uniformly, then render/crop it to ``n_samples``."""
        index = int(rng.integers(0, len(self)))
        if index < len(self.kinds):
            return self._synthesize(self.kinds[index], n_samples, rng)
        wave = self.file_waves[index - len(self.kinds)]
        if len(wave) < n_samples:
            wave = np.tile(wave, int(np.ceil(n_samples / len(wave))))
        offset = int(rng.integers(0, len(wave) - n_samples + 1))
        return wave[offset : offset + n_samples]

    @staticmethod
    def _synthesize(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
        white = rng.standard_normal(n)
        if kind == "white":
            return white
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
        if kind == "pink":
            shaping = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
        elif kind == "babble":
            shaping = np.exp(-0.5 * ((np.log(np.maximum(freqs, 1.0)) - np.log(500.0)) / 1.0) ** 2)
        else:
            raise AugmentError(f"unknown synthetic noise kind {kind!r}")
        shaped = np.fft.irfft(spectrum * shaping, n=n)
        if kind == "babble":
            mod_hz = 3.0 + rng.uniform(0.0, 2.0)
            t = np.arange(n) / SAMPLE_RATE
            shaped = shaped * (0.6 + 0.4 * np.sin(2.0 * np.pi * mod_hz * t))
        rms = np.sqrt(np.mean(shaped**2))
        return shaped / max(rms, 1e-12)


def apply_noise_policy(
    crop: np.ndarray,
    bank: NoiseBank,
    rng: np.random.Generator,
    noise_prob: float = NOISE_PROB,
    snr_min_db: float = SNR_MIN_DB,
    snr_max_db: float = SNR_MAX_DB,
) -> np.ndarray:
    """With probability ``noise_prob`` mix a random noise at SNR ~ U[min, max] dB.

    Draw order: mix decision, then (if mixing) SNR, then the bank's draws.
    """
    if len(bank) == 0:
        raise AugmentError("noise bank is empty")
    if rng.random() >= noise_prob:
        return np.asarray(crop, dtype=np.float64).copy()
    snr_db = float(rng.uniform(snr_min_db, snr_max_db))
    noise = bank.sample(len(crop), rng)
    return mix_at_snr(crop, noise, snr_db)


def spec_augment(
    mel_values: np.ndarray,
    rng: np.random.Generator,
    freq_mask_max: int = FREQ_MASK_MAX,
    time_mask_max: int = TIME_MASK_MAX,
) -> np.ndarray:
    """One frequency mask (width ~ U{0..freq_mask_max}) and one time mask
    (width ~ U{0..time_mask_max}), masked cells set to the per-band mean.

    Draw order: freq width, freq start, time width, time start.
    """
    values = np.asarray(mel_values, dtype=np.float64).copy()
    n_bands, n_frames = values.shape
    band_means = values.mean(axis=1)

    f_width = int(rng.integers(0, freq_mask_max + 1))
    f_start = int(rng.integers(0, max(n_bands - f_width, 0) + 1))
    t_width = int(rng.integers(0, time_mask_max + 1))
    t_width = min(t_width, n_frames)
    t_start = int(rng.integers(0, max(n_frames - t_width, 0) + 1))

    if f_width > 0:
        values[f_start : f_start + f_width, :] = band_means[
            f_start : f_start + f_width, None
        ]
    if t_width > 0:
        values[:, t_start : t_start + t_width] = band_means[:, None]
    return values
