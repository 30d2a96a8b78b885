"""Waveform → feature extraction: log-Mel, pitch, energy, discrete units.

Rates used throughout the pipeline (all at 16 kHz input):

* Mel-spectrogram: 80 bands, 25 ms window (400 samples), 10 ms hop (160).
* Pitch and energy tracks: every 5 ms (hop 80).
* Discrete units: 20 ms steps (Mel frames mean-pooled in pairs), then
  run-length deduplicated into (unit, duration) pairs.

Frame-scale prosody moves to reduced-unit scale by averaging over each
unit's span (4 five-ms frames per 20 ms unit step).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .audio import SAMPLE_RATE

N_MELS = 80
WIN_LENGTH = 400     # 25 ms
HOP_LENGTH = 160     # 10 ms
N_FFT = 512
TRACK_HOP = 80       # 5 ms pitch/energy hop
ENERGY_WIN = 560     # 35 ms Hanning window
LOG_FLOOR = 1e-5
FRAMES_PER_UNIT = 4  # 5 ms track frames per 20 ms unit step
MELS_PER_UNIT = 2    # 10 ms Mel frames per 20 ms unit step

DEFAULT_LOG_F0 = float(np.log(100.0))  # fill value for fully unvoiced utterances


class FeatureError(Exception):
    """Raised when feature extraction preconditions fail."""


@dataclass
class MelSpectrogram:
    """Log-Mel magnitudes, shape [80, T], hop 10 ms."""

    values: np.ndarray
    hop_s: float = 0.010
    win_s: float = 0.025
    norm: tuple[np.ndarray, np.ndarray] | None = None  # (mean[80], std[80]) if normalized

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class UnitSequence:
    """Reduced (deduplicated) discrete units with per-unit durations in 20 ms frames."""

    units: np.ndarray      # int, values in [0, vocab_size)
    durations: np.ndarray  # int, positive; sums to the original frame count
    vocab_size: int

    def __len__(self) -> int:
        return len(self.units)

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())


@dataclass
class ProsodyTrack:
    """Per-reduced-unit prosody: continuous log-F0, binary VUV, log-energy."""

    log_f0: np.ndarray
    vuv: np.ndarray
    log_energy: np.ndarray

    def __len__(self) -> int:
        return len(self.log_f0)


def mel_frame_count(n_samples: int) -> int:
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def _frame(waveform: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(waveform) - win) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    return waveform[idx]


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular Mel filterbank, shape [n_mels, n_fft // 2 + 1]."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bins)))
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bins - left) / (center - left)
        down = (right - bins) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def band_centers_hz(n_mels: int = N_MELS, fmax: float = SAMPLE_RATE / 2.0) -> np.ndarray:
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2)
    return np.asarray(mel_to_hz(mel_points[1:-1]))


_FILTERBANK: np.ndarray | None = None


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def extract_mel(waveform: np.ndarray, log_floor: float = LOG_FLOOR) -> MelSpectrogram:
    """80-band log-Mel with T = 1 + floor((len - 400) / 160) frames."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if len(waveform) < WIN_LENGTH:
        raise FeatureError(
            f"waveform too short for Mel analysis: {len(waveform)} < {WIN_LENGTH} samples"
        )
    frames = _frame(waveform, WIN_LENGTH, HOP_LENGTH) * np.hanning(WIN_LENGTH)
    power = np.abs(np.fft.rfft(frames, n=N_FFT)) ** 2  # [T, bins]
    mel_energy = power @ _filterbank().T               # [T, 80]
    values = np.log(np.maximum(mel_energy, log_floor)).T
    return MelSpectrogram(values=values)


def fit_norm_stats(mels: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and std over all frames of all given [80, T] matrices."""
    count = 0
    total = np.zeros(N_MELS)
    total_sq = np.zeros(N_MELS)
    for values in mels:
        count += values.shape[1]
        total += values.sum(axis=1)
        total_sq += (values**2).sum(axis=1)
    if count == 0:
        raise FeatureError("no frames to fit normalization statistics")
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-8)
    return mean, std


def normalize_mel(mel: MelSpectrogram, stats: tuple[np.ndarray, np.ndarray]) -> MelSpectrogram:
    mean, std = stats
    std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)
    values = (mel.values - np.asarray(mean)[:, None]) / std[:, None]
    return MelSpectrogram(values=values, hop_s=mel.hop_s, win_s=mel.win_s, norm=(mean, std))


def denormalize_mel(mel: MelSpectrogram, stats: tuple[np.ndarray, np.ndarray] | None = None) -> MelSpectrogram:
    if stats is None:
        stats = mel.norm
    if stats is None:
        raise FeatureError("no normalization statistics attached or supplied")
    mean, std = stats
    values = mel.values * np.asarray(std)[:, None] + np.asarray(mean)[:, None]
    return MelSpectrogram(values=values, hop_s=mel.hop_s, win_s=mel.win_s, norm=None)


class PitchExtractor(Protocol):
    """Interface for pluggable pitch extractors operating at the 5 ms track rate."""

    def extract(self, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (log_f0, vuv) per 5 ms frame; unvoiced log_f0 filled by interpolation."""
        ...


class AutocorrPitchExtractor:
    """Normalized-autocorrelation pitch extractor.

    A frame is voiced when the peak normalized autocorrelation in the F0
    search range exceeds ``voicing_threshold``.  Among near-maximal peaks the
    smallest lag wins (avoids octave-down errors on harmonic-rich signals);
    the winning lag is refined by parabolic interpolation.
    """

    def __init__(
        self,
        f0_min: float = 60.0,
        f0_max: float = 400.0,
        voicing_threshold: float = 0.45,
        window: int = 640,
        hop: int = TRACK_HOP,
        default_log_f0: float = DEFAULT_LOG_F0,
    ) -> None:
        self.f0_min = f0_min
        self.f0_max = f0_max
        self.voicing_threshold = voicing_threshold
        self.window = window
        self.hop = hop
        self.default_log_f0 = default_log_f0

    def extract(self, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        waveform = np.asarray(waveform, dtype=np.float64)
        if len(waveform) < self.window:
            raise FeatureError(
                f"waveform too short for pitch analysis: {len(waveform)} < {self.window}"
            )
        frames = _frame(waveform, self.window, self.hop)
        frames = frames - frames.mean(axis=1, keepdims=True)
        lag_min = int(SAMPLE_RATE // self.f0_max)
        lag_max = int(np.ceil(SAMPLE_RATE / self.f0_min))

        f0 = np.zeros(len(frames))
        vuv = np.zeros(len(frames), dtype=np.int8)
        for i, frame in enumerate(frames):
            est = self._frame_f0(frame, lag_min, lag_max)
            if est is not None:
                f0[i] = est
                vuv[i] = 1
        log_f0 = self._interpolate_unvoiced(f0, vuv)
        return log_f0, vuv

    def _frame_f0(self, frame: np.ndarray, lag_min: int, lag_max: int) -> float | None:
        n = len(frame)
        # Full autocorrelation via FFT, normalized per lag by segment energies.
        fft = np.fft.rfft(frame, n=2 * n)
        acorr = np.fft.irfft(fft * np.conj(fft))[: lag_max + 2]
        energy = np.r_[0.0, np.cumsum(frame**2)]  # energy[i] = sum of first i squares
        lags = np.arange(lag_min, min(lag_max + 1, n - 1))
        e_head = energy[n - lags]                  # energy of frame[: n - lag]
        e_tail = energy[n] - energy[lags]          # energy of frame[lag :]
        denom = np.sqrt(np.maximum(e_head * e_tail, 1e-20))
        r = acorr[lags] / denom

        peak = float(r.max())
        if peak < self.voicing_threshold:
            return None
        # Smallest local maximum within 15% of the global peak.
        near = r >= peak - 0.15 * abs(peak)
        candidates = np.flatnonzero(
            near
            & (np.r_[True, r[1:] >= r[:-1]])
            & (np.r_[r[:-1] >= r[1:], True])
        )
        j = int(candidates[0]) if len(candidates) else int(np.argmax(r))
        lag = float(lags[j])
        if 0 < j < len(r) - 1:
            curvature = r[j - 1] - 2.0 * r[j] + r[j + 1]
            if abs(curvature) > 1e-12:
                delta = 0.5 * (r[j - 1] - r[j + 1]) / curvature
                lag += float(np.clip(delta, -1.0, 1.0))
        f0 = SAMPLE_RATE / lag
        if not self.f0_min <= f0 <= self.f0_max + 1.0:
            return None
        return f0

    def _interpolate_unvoiced(self, f0: np.ndarray, vuv: np.ndarray) -> np.ndarray:
        if not vuv.any():
            return np.full(len(f0), self.default_log_f0)
        voiced = np.flatnonzero(vuv)
        filled = np.interp(np.arange(len(f0)), voiced, f0[voiced])
        return np.log(filled)


def extract_energy(waveform: np.ndarray, log_floor: float = LOG_FLOOR) -> np.ndarray:
    """Log RMS energy every 5 ms under a 35 ms Hanning window."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if len(waveform) < ENERGY_WIN:
        raise FeatureError(
            f"waveform too short for energy analysis: {len(waveform)} < {ENERGY_WIN}"
        )
    window = np.hanning(ENERGY_WIN)
    frames = _frame(waveform, ENERGY_WIN, TRACK_HOP) * window
    rms = np.sqrt((frames**2).sum(axis=1) / (window**2).sum())
    return np.log(np.maximum(rms, log_floor))


def pool_pairs(mel_values: np.ndarray) -> np.ndarray:
    """Average 10 ms Mel frames in pairs → 20 ms unit-rate frames (odd tail dropped)."""
    n = mel_values.shape[1] // 2
    if n == 0:
        raise FeatureError("need at least 2 Mel frames to pool to unit rate")
    return mel_values[:, : 2 * n].reshape(mel_values.shape[0], n, 2).mean(axis=2)


def train_codebook(frames: np.ndarray, vocab_size: int, seed: int = 0) -> np.ndarray:
    """K-means codebook over unit-rate feature frames [N, d] → centroids [V, d]."""
    from sklearn.cluster import KMeans

    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < vocab_size:
        raise FeatureError(
            f"need at least vocab_size={vocab_size} frames to train a codebook, "
            f"got {frames.shape[0]}"
        )
    km = KMeans(
        n_clusters=vocab_size,
        init="k-means++",
        n_init=1,
        max_iter=100,
        tol=1e-4,
        random_state=seed,
    ).fit(frames)
    return km.cluster_centers_


def quantize_units(pooled: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment of unit-rate frames [d, T20] → raw unit ids [T20]."""
    codebook = np.asarray(codebook, dtype=np.float64)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise FeatureError("codebook is empty")
    if pooled.shape[0] != codebook.shape[1]:
        raise FeatureError(
            f"feature dimension {pooled.shape[0]} does not match codebook {codebook.shape[1]}"
        )
    x = pooled.T  # [T, d]
    d2 = (x**2).sum(axis=1, keepdims=True) - 2.0 * x @ codebook.T + (codebook**2).sum(axis=1)
    return np.argmin(d2, axis=1).astype(np.int64)


def deduplicate(raw_units: np.ndarray, vocab_size: int | None = None) -> UnitSequence:
    """Run-length encode a raw unit sequence into (units, durations)."""
    raw = np.asarray(raw_units, dtype=np.int64)
    if raw.size == 0:
        raise FeatureError("cannot deduplicate an empty unit sequence")
    boundaries = np.flatnonzero(np.r_[True, raw[1:] != raw[:-1]])
    units = raw[boundaries]
    durations = np.diff(np.r_[boundaries, raw.size])
    if vocab_size is None:
        vocab_size = int(raw.max()) + 1
    return UnitSequence(units=units, durations=durations.astype(np.int64), vocab_size=vocab_size)


def expand(units: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Inverse of deduplicate: repeat each unit by its duration."""
    return np.repeat(np.asarray(units, dtype=np.int64), np.asarray(durations, dtype=np.int64))


def pool_to_units(frame_feature: np.ndarray, unit_seq: UnitSequence) -> np.ndarray:
    """Average a 5 ms track over each unit's span (4 frames per unit-rate step)."""
    expected = FRAMES_PER_UNIT * unit_seq.total_frames
    if len(frame_feature) != expected:
        raise FeatureError(
            f"track length mismatch: expected {expected} frames "
            f"(= 4 × {unit_seq.total_frames} unit frames), got {len(frame_feature)}"
        )
    spans = np.asarray(unit_seq.durations, dtype=np.int64) * FRAMES_PER_UNIT
    ends = np.cumsum(spans)
    sums = np.add.reduceat(np.asarray(frame_feature, dtype=np.float64), np.r_[0, ends[:-1]])
    return sums / spans


def pool_vuv_to_units(vuv_frames: np.ndarray, unit_seq: UnitSequence) -> np.ndarray:
    """Pool VUV flags to unit scale, thresholding the mean at 0.5 (ties → voiced)."""
    pooled = pool_to_units(vuv_frames.astype(np.float64), unit_seq)
    return (pooled >= 0.5).astype(np.int8)


def fit_to_length(track: np.ndarray, length: int) -> np.ndarray:
    """Crop or edge-pad a 1-D track to an exact frame count."""
    if len(track) >= length:
        return track[:length]
    return np.concatenate([track, np.full(length - len(track), track[-1])])


def extract_utterance_features(
    waveform: np.ndarray,
    codebook: np.ndarray,
    pitch_extractor: PitchExtractor | None = None,
) -> tuple[MelSpectrogram, UnitSequence, ProsodyTrack]:
    """Full clean-feature extraction for one utterance.

    The Mel matrix is cropped to an even frame count so that Mel frames,
    20 ms unit steps, and 5 ms prosody frames stay aligned (2 Mel frames and
    4 track frames per unit step).  Returned Mel is unnormalized.
    """
    mel = extract_mel(waveform)
    n_units = mel.n_frames // 2
    if n_units == 0:
        raise FeatureError("utterance too short: fewer than 2 Mel frames")
    mel = MelSpectrogram(values=mel.values[:, : 2 * n_units])

    pooled = pool_pairs(mel.values)
    raw_units = quantize_units(pooled, codebook)
    unit_seq = deduplicate(raw_units, vocab_size=codebook.shape[0])

    if pitch_extractor is None:
        pitch_extractor = AutocorrPitchExtractor()
    log_f0_frames, vuv_frames = pitch_extractor.extract(waveform)
    energy_frames = extract_energy(waveform)

    track_len = FRAMES_PER_UNIT * n_units
    log_f0_frames = fit_to_length(log_f0_frames, track_len)
    vuv_frames = fit_to_length(vuv_frames.astype(np.float64), track_len)
    energy_frames = fit_to_length(energy_frames, track_len)

    prosody = ProsodyTrack(
        log_f0=pool_to_units(log_f0_frames, unit_seq),
        vuv=pool_vuv_to_units(vuv_frames, unit_seq),
        log_energy=pool_to_units(energy_frames, unit_seq),
    )
    return mel, unit_seq, prosody
