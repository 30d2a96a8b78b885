"""Versioned binary container for per-utterance feature records.

Layout (little-endian):

    magic   4 bytes  b"UMFC"
    version 1 byte   (currently 1)
    header  uint32 length + UTF-8 JSON: sample rate, Mel geometry, vocab
            size, Mel mean/std, prosody target statistics
    codebook float32 [vocab_size, 80]
    records, repeated to EOF:
        uint32 payload length, then payload:
            uint32 meta length + UTF-8 JSON meta
            mel        float32 [80 * n_mel_frames]   (normalized)
            units      int32   [n_units]
            durations  int32   [n_units]
            log_f0     float32 [n_units]
            vuv        uint8   [n_units]
            log_energy float32 [n_units]

Mel-only records (inference outputs) use n_units = 0.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from .audio import read_wav
from .corpus import ManifestEntry
from .features import (
    MelSpectrogram,
    PitchExtractor,
    ProsodyTrack,
    UnitSequence,
)

MAGIC = b"UMFC"
FORMAT_VERSION = 1


class CacheError(Exception):
    """Raised for feature-container format or I/O problems."""


@dataclass
class FeatureRecord:
    utterance_id: str
    language_id: str
    split: str
    mel: np.ndarray        # [80, F] normalized log-Mel
    units: np.ndarray      # [U] int
    durations: np.ndarray  # [U] int, Σ durations == F // 2
    log_f0: np.ndarray     # [U]
    vuv: np.ndarray        # [U] in {0, 1}
    log_energy: np.ndarray  # [U]
    speaker: str | None = None
    style: str | None = None

    @property
    def n_units(self) -> int:
        return len(self.units)


@dataclass
class FeatureCache:
    mel_mean: np.ndarray
    mel_std: np.ndarray
    codebook: np.ndarray
    prosody_stats: dict[str, float]
    records: list[FeatureRecord] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return self.codebook.shape[0]

    def by_id(self) -> dict[str, FeatureRecord]:
        return {rec.utterance_id: rec for rec in self.records}


def _pack_record(rec: FeatureRecord) -> bytes:
    meta = {
        "utterance_id": rec.utterance_id,
        "language_id": rec.language_id,
        "split": rec.split,
        "speaker": rec.speaker,
        "style": rec.style,
        "n_units": int(rec.n_units),
        "n_mel_frames": int(rec.mel.shape[1]),
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    payload = struct.pack("<I", len(meta_bytes)) + meta_bytes
    payload += np.ascontiguousarray(rec.mel, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(rec.units, dtype="<i4").tobytes()
    payload += np.ascontiguousarray(rec.durations, dtype="<i4").tobytes()
    payload += np.ascontiguousarray(rec.log_f0, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(rec.vuv, dtype=np.uint8).tobytes()
    payload += np.ascontiguousarray(rec.log_energy, dtype="<f4").tobytes()
    return struct.pack("<I", len(payload)) + payload


def _unpack_record(payload: bytes) -> FeatureRecord:
    (meta_len,) = struct.unpack_from("<I", payload, 0)
    meta = json.loads(payload[4 : 4 + meta_len].decode("utf-8"))
    n_units = meta["n_units"]
    n_frames = meta["n_mel_frames"]
    offset = 4 + meta_len

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    mel = take("<f4", features.N_MELS * n_frames).reshape(features.N_MELS, n_frames)
    units = take("<i4", n_units).astype(np.int64)
    durations = take("<i4", n_units).astype(np.int64)
    log_f0 = take("<f4", n_units).astype(np.float64)
    vuv = take("u1", n_units).astype(np.int8)
    log_energy = take("<f4", n_units).astype(np.float64)
    if offset != len(payload):
        raise CacheError(f"record for {meta['utterance_id']!r} has trailing bytes")
    return FeatureRecord(
        utterance_id=meta["utterance_id"],
        language_id=meta["language_id"],
        split=meta["split"],
        mel=mel.astype(np.float64),
        units=units,
        durations=durations,
        log_f0=log_f0,
        vuv=vuv,
        log_energy=log_energy,
        speaker=meta.get("speaker"),
        style=meta.get("style"),
    )


def write_feature_cache(path: Path | str, cache: FeatureCache) -> None:
    header = {
        "sample_rate": 16000,
        "n_mels": features.N_MELS,
        "win_length": features.WIN_LENGTH,
        "hop_length": features.HOP_LENGTH,
        "vocab_size": int(cache.vocab_size),
        "mel_mean": [float(x) for x in cache.mel_mean],
        "mel_std": [float(x) for x in cache.mel_std],
        "prosody_stats": cache.prosody_stats,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<B", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(np.ascontiguousarray(cache.codebook, dtype="<f4").tobytes())
            for rec in cache.records:
                fh.write(_pack_record(rec))
        tmp.replace(path)
    except OSError as exc:
        raise CacheError(f"cannot write feature cache {path}: {exc}") from exc


def read_feature_cache(path: Path | str) -> FeatureCache:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CacheError(f"cannot read feature cache {path}: {exc}") from exc
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise CacheError(f"{path}: not a feature cache (bad magic)")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise CacheError(
            f"{path}: container version {version} unsupported (expected {FORMAT_VERSION})"
        )
    try:
        (header_len,) = struct.unpack_from("<I", blob, 5)
        header = json.loads(blob[9 : 9 + header_len].decode("utf-8"))
        offset = 9 + header_len
        vocab = header["vocab_size"]
        codebook_bytes = vocab * header["n_mels"] * 4
        codebook = np.frombuffer(
            blob, dtype="<f4", count=vocab * header["n_mels"], offset=offset
        ).reshape(vocab, header["n_mels"]).astype(np.float64)
        offset += codebook_bytes

        records = []
        while offset < len(blob):
            (rec_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            if offset + rec_len > len(blob):
                raise CacheError(f"{path}: truncated record at byte {offset}")
            records.append(_unpack_record(blob[offset : offset + rec_len]))
            offset += rec_len
    except (struct.error, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CacheError(f"{path}: corrupt feature cache: {exc}") from exc
    return FeatureCache(
        mel_mean=np.asarray(header["mel_mean"], dtype=np.float64),
        mel_std=np.asarray(header["mel_std"], dtype=np.float64),
        codebook=codebook,
        prosody_stats=header["prosody_stats"],
        records=records,
    )


def collect_codebook_frames(entries: list[ManifestEntry]) -> np.ndarray:
    """Pooled unit-rate raw log-Mel frames from the train split, for K-means."""
    frames = []
    for entry in entries:
        if entry.split != "train":
            continue
        mel = features.extract_mel(read_wav(entry.audio_path))
        frames.append(features.pool_pairs(mel.values).T)
    if not frames:
        raise CacheError("no train entries to collect codebook frames from")
    return np.concatenate(frames, axis=0)


def build_feature_cache(
    entries: list[ManifestEntry],
    codebook: np.ndarray,
    pitch_extractor: PitchExtractor | None = None,
) -> FeatureCache:
    """Extract and normalize features for all manifest entries.

    Mel normalization statistics and prosody target statistics are fitted on
    the train split only; units are always computed from the clean waveform.
    """
    extracted: list[tuple[ManifestEntry, MelSpectrogram, UnitSequence, ProsodyTrack]] = []
    train_mels = []
    for entry in entries:
        waveform = read_wav(entry.audio_path)
        mel, unit_seq, prosody = features.extract_utterance_features(
            waveform, codebook, pitch_extractor
        )
        extracted.append((entry, mel, unit_seq, prosody))
        if entry.split == "train":
            train_mels.append(mel.values)

    mel_mean, mel_std = features.fit_norm_stats(train_mels)

    f0_all = np.concatenate(
        [p.log_f0 for e, _, _, p in extracted if e.split == "train"]
    )
    energy_all = np.concatenate(
        [p.log_energy for e, _, _, p in extracted if e.split == "train"]
    )
    prosody_stats = {
        "log_f0_mean": float(f0_all.mean()),
        "log_f0_std": float(max(f0_all.std(), 1e-8)),
        "log_energy_mean": float(energy_all.mean()),
        "log_energy_std": float(max(energy_all.std(), 1e-8)),
    }

    records = []
    for entry, mel, unit_seq, prosody in extracted:
        normalized = features.normalize_mel(mel, (mel_mean, mel_std))
        records.append(
            FeatureRecord(
                utterance_id=entry.utterance_id,
                language_id=entry.language_id,
                split=entry.split,
                mel=normalized.values,
                units=unit_seq.units,
                durations=unit_seq.durations,
                log_f0=prosody.log_f0,
                vuv=prosody.vuv,
                log_energy=prosody.log_energy,
                speaker=entry.speaker,
                style=entry.style,
            )
        )
    return FeatureCache(
        mel_mean=mel_mean,
        mel_std=mel_std,
        codebook=np.asarray(codebook, dtype=np.float64),
        prosody_stats=prosody_stats,
        records=records,
    )
