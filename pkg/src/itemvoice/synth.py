"""Synthetic two-class corpus used for end-to-end learnability checks.

Half of the speakers produce a low, slowly modulated harmonic voice
(110 Hz fundamental, about 3 Hz amplitude modulation) and are given
positive item scores; the other half produce a higher, faster modulated
voice (220 Hz, about 7 Hz) with all-zero scores. Every recording gets its
own pitch, modulation and noise jitter so no two recordings are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff.optim import make_rng
from .corpus import (
    SAMPLE_RATE_HZ,
    Manifest,
    ManifestRow,
    ScaleDefinition,
    get_scale,
    write_functionals,
    write_manifest,
    write_wav,
)
from .dsp import FeatureExtractor
from .segmentation import window_count, window_values

N_FUNCTIONALS = 88


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 20
    recordings_per_speaker: int = 2
    duration_s: float = 20.0
    seed: int = 0
    scale: str = "MADRS"
    low_f0_hz: float = 110.0
    high_f0_hz: float = 220.0
    low_am_hz: float = 3.0
    high_am_hz: float = 7.0
    n_harmonics: int = 12
    noise_std: float = 0.01
    # speaker fractions for train/val/test
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.n_speakers < 6 or self.n_speakers % 2:
            raise ValueError("n_speakers must be even and at least 6")
        if self.duration_s < 13:
            raise ValueError("recordings must be at least 13 s long")


def speaker_splits(cfg: SynthConfig) -> list[str]:
    """Split per speaker, balanced so every split holds both classes."""
    pairs = cfg.n_speakers // 2
    n_train = max(1, round(pairs * cfg.split_fractions[0]))
    n_val = max(1, round(pairs * cfg.split_fractions[1]))
    out = []
    for pair in range(pairs):
        split = "train" if pair < n_train else "val" if pair < n_train + n_val else "test"
        out += [split, split]
    return out


def voice(rng: np.random.Generator, f0: float, am_hz: float, duration_s: float, cfg: SynthConfig) -> np.ndarray:
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    t = np.arange(n) / SAMPLE_RATE_HZ
    # slow vibrato so harmonics are not perfectly stationary
    vib_hz = rng.uniform(0.3, 0.8)
    inst_f0 = f0 * (1.0 + 0.01 * np.sin(2 * np.pi * vib_hz * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE_HZ
    tilt = rng.uniform(0.8, 1.2)
    x = np.zeros(n)
    for h in range(1, cfg.n_harmonics + 1):
        x += h ** -tilt * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * am_hz * t + rng.uniform(0, 2 * np.pi))
    x *= envelope
    x *= 0.5 / np.max(np.abs(x))
    x += rng.normal(0.0, cfg.noise_std * rng.uniform(0.5, 1.5), size=n)
    return np.clip(x, -1.0, 1.0 - 1.0 / 32768)


def item_scores(rng: np.random.Generator, scale: ScaleDefinition, depressed: bool) -> tuple[int, ...]:
    if not depressed:
        return (0,) * scale.n_items
    lo, hi = scale.item_score_range
    # large enough that every positive recording clears the depression threshold
    floor = max(lo + 1, math.ceil(scale.depression_threshold / scale.n_items))
    return tuple(int(s) for s in rng.integers(floor, hi + 1, size=scale.n_items))


def window_functionals(frames: np.ndarray, dsp: FeatureExtractor) -> np.ndarray:
    """A stand-in for imported eGeMAPS functionals: per 4 s window, the mean
    of all 64 log-mel bands and the standard deviation of the lowest 24."""
    n = window_count(len(frames), dsp)
    out = np.empty((n, N_FUNCTIONALS))
    for k in range(n):
        w = window_values(frames, k, dsp)
        out[k, :64] = w.mean(axis=0)
        out[k, 64:] = w[:, :24].std(axis=0)
    return out


def generate(out_dir: str | Path, cfg: SynthConfig = SynthConfig()) -> Manifest:
    """Write WAVs, ``manifest.csv``, ``functionals.csv`` and ``config.toml``."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    scale = get_scale(cfg.scale)
    rng = make_rng(cfg.seed)
    dsp = FeatureExtractor()
    splits = speaker_splits(cfg)
    rows = []
    functionals = {}
    for s in range(cfg.n_speakers):
        depressed = s % 2 == 0
        base_f0 = cfg.low_f0_hz if depressed else cfg.high_f0_hz
        base_am = cfg.low_am_hz if depressed else cfg.high_am_hz
        speaker_f0 = base_f0 * rng.uniform(0.95, 1.05)
        for r in range(cfg.recordings_per_speaker):
            rid = f"S{s:02d}R{r}"
            f0 = speaker_f0 * rng.uniform(0.98, 1.02)
            am = base_am * rng.uniform(0.9, 1.1)
            samples = voice(rng, f0, am, cfg.duration_s, cfg)
            path = out_dir / "audio" / f"{rid}.wav"
            write_wav(path, samples)
            scores = item_scores(rng, scale, depressed)
            rows.append(ManifestRow(rid, f"S{s:02d}", path, splits[s], scores, sum(scores)))
            # features from the PCM16-quantized samples, as a reader would see them
            quantized = np.clip(np.round(samples * 32768), -32768, 32767) / 32768
            functionals[rid] = window_functionals(dsp.compute(quantized, rid).values, dsp)
    manifest = Manifest(scale, tuple(rows))
    write_manifest(manifest, out_dir / "manifest.csv", relative_to=out_dir)
    write_functionals(out_dir / "functionals.csv", functionals)
    (out_dir / "config.toml").write_text(default_config_text(cfg), encoding="utf-8")
    return manifest


def default_config_text(cfg: SynthConfig) -> str:
    return f"""\
# run configuration for the synthetic corpus
scale = "{cfg.scale}"
manifest = "manifest.csv"
functionals = "functionals.csv"
cache_dir = "cache"
out_dir = "runs"
feature_kind = "spectrogram"
model_kind = "spec_cnn_lstm"
task = "classify"
drop_last = false
voting = "soft"
combination = "mean_prob"

[train]
seed = {cfg.seed}
batch_size = 32
max_epochs = 100
stop_at_perfect = true
n_search_trials = 3
"""
