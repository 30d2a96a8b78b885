"""Dataset manifests, synthetic corpus generation, and language-balanced sampling.

The synthetic corpus stands in for studio speech: each utterance is a harmonic
source (piecewise-varying fundamental and amplitude, optional short pauses)
shaped by a speaker-specific formant filter, over a low noise floor.  Speaker
labels control the voice (base pitch, formants); style labels control the
prosody (pitch range, vibrato, pausing), so (speaker, style) clusters are
separable by design.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, write_wav


class CorpusError(Exception):
    """Raised for manifest or corpus-generation failures."""


MIN_TRAIN_DURATION_S = 6.0

VALID_SPLITS = ("train", "dev", "test")


@dataclass
class ManifestEntry:
    utterance_id: str
    audio_path: Path
    language_id: str
    split: str = "train"
    speaker: str | None = None
    style: str | None = None

    def to_json(self) -> dict:
        rec = {
            "utterance_id": self.utterance_id,
            "audio_path": str(self.audio_path),
            "language_id": self.language_id,
            "split": self.split,
        }
        if self.speaker is not None:
            rec["speaker"] = self.speaker
        if self.style is not None:
            rec["style"] = self.style
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "ManifestEntry":
        return cls(
            utterance_id=rec["utterance_id"],
            audio_path=Path(rec["audio_path"]),
            language_id=rec["language_id"],
            split=rec.get("split", "train"),
            speaker=rec.get("speaker"),
            style=rec.get("style"),
        )


@dataclass
class SyntheticUtteranceSpec:
    """Parameters for one synthetic utterance."""

    fundamental_hz: float
    formant_profile: list[tuple[float, float]]  # (center_hz, width_hz) pairs
    noise_floor_db: float
    duration_s: float
    style_label: str
    speaker_label: str

    def __post_init__(self) -> None:
        if not 60.0 <= self.fundamental_hz <= 400.0:
            raise CorpusError(
                f"fundamental_hz must lie in [60, 400], got {self.fundamental_hz}"
            )
        if self.duration_s <= 0:
            raise CorpusError(f"duration_s must be positive, got {self.duration_s}")


# Prosodic behaviour per style: pitch excursion, vibrato, amplitude range,
# pause probability between segments, and segment duration range.
@dataclass(frozen=True)
class _StyleParams:
    name: str
    f0_scale: float
    f0_jitter: float          # relative excursion of segment pitch targets
    vibrato_depth: float      # relative depth
    vibrato_hz: float
    amp_range: tuple[float, float]
    pause_prob: float
    seg_range: tuple[float, float]


_STYLES = (
    _StyleParams("calm", 1.0, 0.04, 0.003, 4.5, (0.75, 1.0), 0.10, (0.5, 0.9)),
    _StyleParams("excited", 1.08, 0.18, 0.025, 6.0, (0.45, 1.0), 0.25, (0.25, 0.5)),
    _StyleParams("low", 0.85, 0.02, 0.0, 0.0, (0.85, 1.0), 0.05, (0.6, 1.0)),
    _StyleParams("wavering", 1.0, 0.10, 0.05, 3.0, (0.6, 1.0), 0.15, (0.4, 0.7)),
)


def _speaker_voice(speaker_index: int) -> tuple[float, list[tuple[float, float]]]:
    base_f0 = min(100.0 * (1.25 ** speaker_index), 330.0)
    formants = [
        (420.0 + 90.0 * speaker_index, 90.0),
        (1300.0 + 220.0 * speaker_index, 120.0),
        (2500.0 + 250.0 * speaker_index, 160.0),
    ]
    return base_f0, formants


def _formant_response(freqs: np.ndarray, profile: list[tuple[float, float]]) -> np.ndarray:
    resp = 0.06 / (1.0 + freqs / 1000.0)  # gentle spectral tilt
    for center, width in profile:
        resp = resp + np.exp(-0.5 * ((freqs - center) / width) ** 2)
    return resp


def synthesize_utterance(spec: SyntheticUtteranceSpec, rng: np.random.Generator) -> np.ndarray:
    """Render one utterance waveform at 16 kHz from its spec."""
    style = next(s for s in _STYLES if s.name == spec.style_label)
    n = int(round(spec.duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    # Piecewise segment targets for pitch and amplitude, with optional pauses.
    knot_times = [0.0]
    f0_targets = [spec.fundamental_hz]
    amp_targets = [rng.uniform(*style.amp_range)]
    pos = 0.0
    while pos < spec.duration_s:
        seg = rng.uniform(*style.seg_range)
        pos = min(pos + seg, spec.duration_s)
        f0 = spec.fundamental_hz * (1.0 + rng.uniform(-style.f0_jitter, style.f0_jitter))
        amp = rng.uniform(*style.amp_range)
        if rng.random() < style.pause_prob and pos < spec.duration_s - 0.3:
            pause = rng.uniform(0.06, 0.12)
            knot_times += [pos, pos + 0.02, pos + pause - 0.02, pos + pause]
            f0_targets += [f0, f0, f0, f0]
            amp_targets += [amp, 0.0, 0.0, amp]
            pos += pause
        else:
            knot_times.append(pos)
            f0_targets.append(f0)
            amp_targets.append(amp)

    f0_track = np.interp(t, knot_times, f0_targets)
    if style.vibrato_depth > 0:
        f0_track = f0_track * (
            1.0 + style.vibrato_depth * np.sin(2.0 * np.pi * style.vibrato_hz * t)
        )
    amp_track = np.interp(t, knot_times, amp_targets)

    phase = 2.0 * np.pi * np.cumsum(f0_track) / SAMPLE_RATE
    wave_sum = np.zeros(n)
    max_harmonics = int(7000.0 // spec.fundamental_hz)
    for k in range(1, max_harmonics + 1):
        harm_freq = k * f0_track
        gain = _formant_response(harm_freq, spec.formant_profile) / k
        gain[harm_freq > 7600.0] = 0.0
        wave_sum += gain * np.sin(k * phase)

    wave_sum *= amp_track
    peak = np.max(np.abs(wave_sum))
    if peak > 0:
        wave_sum *= 0.45 / peak
    rms = np.sqrt(np.mean(wave_sum**2))
    noise = rng.standard_normal(n) * rms * 10.0 ** (spec.noise_floor_db / 20.0)
    return np.clip(wave_sum + noise, -1.0, 1.0)


def generate_synthetic_corpus(
    n_utterances: int,
    seed: int,
    out_dir: Path | str,
    n_speakers: int = 4,
    n_styles: int = 2,
    languages: tuple[str, ...] = ("en", "es"),
    duration_range_s: tuple[float, float] = (6.2, 7.4),
    noise_floor_db: float = -45.0,
) -> Path:
    """Write ``n_utterances`` waveforms plus a JSON-lines manifest; returns the manifest path.

    (speaker, style) pairs are assigned round-robin over utterance index, so
    the first ``n_speakers * n_styles`` utterances cover every pair exactly
    once.  Deterministic given ``seed``.
    """
    if n_utterances < 1:
        raise CorpusError("n_utterances must be ≥ 1")
    if not 1 <= n_styles <= len(_STYLES):
        raise CorpusError(f"n_styles must lie in [1, {len(_STYLES)}]")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    try:
        audio_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create corpus directory {audio_dir}: {exc}") from exc

    entries = []
    for i in range(n_utterances):
        pair = i % (n_speakers * n_styles)
        speaker_index = pair // n_styles
        style = _STYLES[pair % n_styles]
        language = languages[i % len(languages)]
        rng = np.random.default_rng([seed, i])

        base_f0, formants = _speaker_voice(speaker_index)
        spec = SyntheticUtteranceSpec(
            fundamental_hz=float(np.clip(base_f0 * style.f0_scale, 60.0, 400.0)),
            formant_profile=formants,
            noise_floor_db=noise_floor_db,
            duration_s=float(rng.uniform(*duration_range_s)),
            style_label=style.name,
            speaker_label=f"spk{speaker_index}",
        )
        waveform = synthesize_utterance(spec, rng)

        utt_id = f"utt{i:05d}"
        wav_path = audio_dir / f"{utt_id}.wav"
        try:
            write_wav(wav_path, waveform)
        except Exception as exc:
            raise CorpusError(f"failed writing {wav_path}: {exc}") from exc
        entries.append(
            ManifestEntry(
                utterance_id=utt_id,
                audio_path=wav_path,
                language_id=language,
                split="train",
                speaker=spec.speaker_label,
                style=spec.style_label,
            )
        )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(entries, manifest_path)
    return manifest_path


def write_manifest(entries: list[ManifestEntry], path: Path | str) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps(entry.to_json()) + "\n")
    except OSError as exc:
        raise CorpusError(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path: Path | str) -> list[ManifestEntry]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return entries


def validate_manifest(
    entries: list[ManifestEntry],
    languages: tuple[str, ...] | None = None,
    min_train_duration_s: float = MIN_TRAIN_DURATION_S,
) -> None:
    """Check manifest invariants; raises CorpusError on the first violation."""
    seen: set[str] = set()
    for entry in entries:
        if entry.utterance_id in seen:
            raise CorpusError(f"duplicate utterance_id {entry.utterance_id!r}")
        seen.add(entry.utterance_id)
        if entry.split not in VALID_SPLITS:
            raise CorpusError(
                f"{entry.utterance_id}: split {entry.split!r} not in {VALID_SPLITS}"
            )
        if languages is not None and entry.language_id not in languages:
            raise CorpusError(
                f"{entry.utterance_id}: language {entry.language_id!r} not in {languages}"
            )
        if not entry.audio_path.exists():
            raise CorpusError(f"{entry.utterance_id}: missing audio {entry.audio_path}")
        with wave.open(str(entry.audio_path), "rb") as fh:
            duration = fh.getnframes() / fh.getframerate()
        if entry.split == "train" and duration < min_train_duration_s:
            raise CorpusError(
                f"{entry.utterance_id}: train audio {duration:.2f}s shorter than "
                f"minimum {min_train_duration_s}s"
            )


def language_counts(entries: list[ManifestEntry]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for entry in entries:
        counts[entry.language_id] = counts.get(entry.language_id, 0) + 1
    return counts


def temperature_resample(
    counts: dict[str, int], temperature: float
) -> dict[str, float]:
    """Language sampling probabilities with probability ∝ (share)^(1/temperature)."""
    if temperature <= 0:
        raise CorpusError(f"temperature must be > 0, got {temperature}")
    total = sum(counts.values())
    if total <= 0:
        raise CorpusError("all language counts are zero")
    weights = {
        lang: (count / total) ** (1.0 / temperature) for lang, count in counts.items()
    }
    norm = sum(weights.values())
    return {lang: w / norm for lang, w in weights.items()}
