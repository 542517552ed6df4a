"""Deterministic synthetic multi-language corpus.

Each "language" is a recipe: an inventory of formant resonators plus a
syllable-rate range and a pitch range. An utterance is a sequence of
syllables; every syllable picks one resonator from the inventory (its
phone class), excites it with a pitch-pulse train that glides downward
across the syllable, and is separated from the next syllable by a short
near-silent gap. Sample-resolution phone segments ride along in the
manifest so frame-level training targets need no external aligner.

Phone class 0 is silence; recipe phones are numbered consecutively
across the recipe list.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from lidkit.audio import Waveform, read_wav, write_wav
from lidkit.errors import LidKitError
from lidkit.features import FrameConfig

CORE_SPLITS = ("train", "dev", "test")
TRUNCATED_VARIANTS = {"test_1s": 1.0, "test_3s": 3.0}
SILENCE_CLASS = 0


@dataclass(frozen=True)
class SynthLanguageRecipe:
    name: str
    formant_centers_hz: tuple[float, ...]
    formant_bandwidths_hz: tuple[float, ...]
    syllable_rate_range: tuple[float, float]
    pitch_range_hz: tuple[float, float]
    seed: int

    def __post_init__(self):
        if len(self.formant_centers_hz) != len(self.formant_bandwidths_hz):
            raise LidKitError("formant centers/bandwidths length mismatch",
                              code="bad-recipe")
        if self.syllable_rate_range[0] <= 0:
            raise LidKitError("syllable rate must be positive", code="bad-recipe")

    @property
    def num_phones(self) -> int:
        return len(self.formant_centers_hz)


@dataclass
class ManifestEntry:
    utterance_id: str
    path: str  # relative to the corpus directory
    language: str
    split: str
    duration_s: float
    phone_segments: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    languages: list[str]
    num_phone_classes: int
    sample_rate: int
    master_seed: int
    root: Path

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def wav_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def default_recipes() -> list[SynthLanguageRecipe]:
    """Three separable but overlapping toy languages."""
    return [
        SynthLanguageRecipe(
            name="alfa",
            formant_centers_hz=(420.0, 1150.0, 2300.0),
            formant_bandwidths_hz=(70.0, 110.0, 170.0),
            syllable_rate_range=(3.0, 4.5),
            pitch_range_hz=(95.0, 150.0),
            seed=101,
        ),
        SynthLanguageRecipe(
            name="bravo",
            formant_centers_hz=(750.0, 1800.0, 3250.0),
            formant_bandwidths_hz=(90.0, 130.0, 200.0),
            syllable_rate_range=(5.5, 7.5),
            pitch_range_hz=(185.0, 280.0),
            seed=202,
        ),
        SynthLanguageRecipe(
            name="kilo",
            formant_centers_hz=(560.0, 1150.0, 2750.0),
            formant_bandwidths_hz=(80.0, 110.0, 180.0),
            syllable_rate_range=(4.0, 6.0),
            pitch_range_hz=(130.0, 200.0),
            seed=303,
        ),
    ]


def _resonator(excitation: np.ndarray, center_hz: float, bandwidth_hz: float,
               sample_rate: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth_hz / sample_rate)
    theta = 2.0 * np.pi * center_hz / sample_rate
    return lfilter([1.0], [1.0, -2.0 * r * np.cos(theta), r * r], excitation)


def _pulse_train(f0: np.ndarray, sample_rate: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Impulses wherever the accumulated pitch phase crosses an integer;
    amplitudes carry a little shimmer."""
    phase = np.cumsum(f0) / sample_rate
    ticks = np.diff(np.floor(np.concatenate([[0.0], phase]))) >= 1.0
    train = np.zeros(len(f0))
    idx = np.flatnonzero(ticks)
    train[idx] = rng.uniform(0.9, 1.1, size=len(idx))
    return train


def synth_syllable(recipe: SynthLanguageRecipe, phone: int, length: int,
                   base_f0: float, sample_rate: int,
                   rng: np.random.Generator) -> np.ndarray:
    f0_start = base_f0 * rng.uniform(1.0, 1.15)
    f0_end = f0_start * rng.uniform(0.72, 0.88)
    f0 = np.linspace(f0_start, f0_end, length)
    excitation = _pulse_train(f0, sample_rate, rng)
    voiced = _resonator(excitation, recipe.formant_centers_hz[phone],
                        recipe.formant_bandwidths_hz[phone], sample_rate)

    ramp = min(int(0.015 * sample_rate), max(1, length // 4))
    envelope = np.ones(length)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    envelope[:ramp] = fade
    envelope[length - ramp :] = fade[::-1]
    return voiced * envelope


def synth_utterance(recipe: SynthLanguageRecipe, phone_base: int,
                    num_samples: int, sample_rate: int,
                    rng: np.random.Generator):
    """One utterance plus its sample-resolution phone segments."""
    rate = rng.uniform(*recipe.syllable_rate_range)
    base_f0 = rng.uniform(*recipe.pitch_range_hz)
    samples = np.zeros(num_samples)
    segments: list[tuple[int, int, int]] = []

    pos = 0
    while pos < num_samples:
        period = sample_rate / rate
        voiced_len = int(round(period * 0.7 * rng.uniform(0.85, 1.15)))
        gap_len = int(round(period * 0.3 * rng.uniform(0.85, 1.15)))
        voiced_len = min(voiced_len, num_samples - pos)
        if voiced_len < int(0.02 * sample_rate):
            break
        phone = int(rng.integers(recipe.num_phones))
        syllable = synth_syllable(recipe, phone, voiced_len, base_f0,
                                  sample_rate, rng)
        samples[pos : pos + voiced_len] = syllable
        segments.append((pos, pos + voiced_len, phone_base + phone))
        pos += voiced_len + gap_len

    peak = np.abs(samples).max()
    if peak > 0:
        samples *= rng.uniform(0.22, 0.32) / peak
    samples += 1e-4 * rng.standard_normal(num_samples)
    return samples, segments


def _clip_segments(segments, limit: int):
    out = []
    for start, end, cls in segments:
        if start >= limit:
            break
        out.append((start, min(end, limit), cls))
    return out


def synth_corpus(recipes: list[SynthLanguageRecipe],
                 per_split_counts: dict[str, int], duration_s: float,
                 master_seed: int, out_dir: str | os.PathLike,
                 sample_rate: int = 16000) -> CorpusManifest:
    """Generate WAVs, phone segments, manifest, and the truncated 1 s /
    3 s test variants. Byte-deterministic in all arguments."""
    if len(recipes) < 2:
        raise LidKitError("need at least 2 language recipes", code="bad-corpus-config")
    if duration_s <= 0:
        raise LidKitError("duration must be positive", code="bad-corpus-config")
    for split in CORE_SPLITS:
        if per_split_counts.get(split, 0) <= 0:
            raise LidKitError(f"split {split} needs a positive count",
                              code="bad-corpus-config")
    for recipe in recipes:
        if max(recipe.formant_centers_hz) >= sample_rate / 2:
            raise LidKitError(
                f"recipe {recipe.name} has a formant above Nyquist",
                code="bad-corpus-config")

    root = Path(out_dir)
    num_samples = int(round(duration_s * sample_rate))
    phone_base = 1
    entries: list[ManifestEntry] = []

    for r_idx, recipe in enumerate(recipes):
        for s_idx, split in enumerate(CORE_SPLITS):
            (root / "wav" / split).mkdir(parents=True, exist_ok=True)
            for u_idx in range(per_split_counts[split]):
                rng = np.random.default_rng(
                    np.random.SeedSequence((master_seed, recipe.seed, s_idx, u_idx)))
                samples, segments = synth_utterance(
                    recipe, phone_base, num_samples, sample_rate, rng)
                utt_id = f"{recipe.name}_{split}_{u_idx:03d}"
                rel = f"wav/{split}/{utt_id}.wav"
                write_wav(Waveform(samples=samples, sample_rate=sample_rate),
                          root / rel)
                entries.append(ManifestEntry(
                    utterance_id=utt_id, path=rel, language=recipe.name,
                    split=split, duration_s=num_samples / sample_rate,
                    phone_segments=segments))
        phone_base += recipe.num_phones

    # truncated test variants, cut from utterance start
    test_entries = [e for e in entries if e.split == "test"]
    for variant, keep_s in TRUNCATED_VARIANTS.items():
        (root / "wav" / variant).mkdir(parents=True, exist_ok=True)
        keep = min(int(round(keep_s * sample_rate)), num_samples)
        for entry in test_entries:
            wave = read_wav(root / entry.path)
            short = wave.samples[:keep]
            utt_id = f"{entry.utterance_id}_{variant.split('_')[1]}"
            rel = f"wav/{variant}/{utt_id}.wav"
            write_wav(Waveform(samples=short, sample_rate=sample_rate), root / rel)
            entries.append(ManifestEntry(
                utterance_id=utt_id, path=rel, language=entry.language,
                split=variant, duration_s=keep / sample_rate,
                phone_segments=_clip_segments(entry.phone_segments, keep)))

    manifest = CorpusManifest(
        entries=entries, languages=[r.name for r in recipes],
        num_phone_classes=phone_base, sample_rate=sample_rate,
        master_seed=master_seed, root=root)
    save_manifest(manifest)
    return manifest


def save_manifest(manifest: CorpusManifest) -> None:
    with open(manifest.root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(json.dumps({
                "utterance_id": e.utterance_id, "path": e.path,
                "language": e.language, "split": e.split,
                "duration_s": e.duration_s,
                "phone_segments": [list(s) for s in e.phone_segments],
            }, sort_keys=True) + "\n")
    with open(manifest.root / "corpus_meta.json", "w", encoding="utf-8") as fh:
        json.dump({
            "languages": manifest.languages,
            "num_phone_classes": manifest.num_phone_classes,
            "sample_rate": manifest.sample_rate,
            "master_seed": manifest.master_seed,
        }, fh, sort_keys=True, indent=2)


def load_manifest(corpus_dir: str | os.PathLike) -> CorpusManifest:
    root = Path(corpus_dir)
    try:
        with open(root / "corpus_meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise LidKitError(f"no corpus at {root}", code="missing-corpus") from None
    entries = []
    with open(root / "manifest.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            entries.append(ManifestEntry(
                utterance_id=rec["utterance_id"], path=rec["path"],
                language=rec["language"], split=rec["split"],
                duration_s=rec["duration_s"],
                phone_segments=[tuple(s) for s in rec["phone_segments"]]))
    return CorpusManifest(entries=entries, languages=meta["languages"],
                          num_phone_classes=meta["num_phone_classes"],
                          sample_rate=meta["sample_rate"],
                          master_seed=meta["master_seed"], root=root)


def frame_labels(segments: list[tuple[int, int, int]], num_frames: int,
                 cfg: FrameConfig) -> np.ndarray:
    """Phone class of each analysis frame, read at the frame centre."""
    labels = np.full(num_frames, SILENCE_CLASS, dtype=np.int64)
    centers = cfg.frame_step * np.arange(num_frames) + cfg.frame_length // 2
    for start, end, cls in segments:
        labels[(centers >= start) & (centers < end)] = cls
    return labels
