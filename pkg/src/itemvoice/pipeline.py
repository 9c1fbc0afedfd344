"""Glue between corpus files and models: datasets, batching, grids, reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (
    Manifest,
    RecordingLabels,
    ScaleDefinition,
    binarize_labels,
    load_wav,
    require_nonempty,
)
from .dsp import FeatureExtractor, read_spectrogram_cache, write_spectrogram_cache
from .errors import DimensionMismatch, TooShort
from .models import ItemModel
from .segmentation import (
    HOP_S,
    SEGMENT_SPAN_S,
    SEQ_LEN,
    WINDOW_S,
    GridGeometry,
    grid_geometry,
    window_count,
    window_values,
)
from .voting import (
    CombinationRule,
    EvalReport,
    FScores,
    ItemDecision,
    ReportRow,
    SegmentProbabilityGrid,
    combine_items,
    f_scores,
    vote,
)

FEATURE_KINDS = ("spectrogram", "egemaps")
CACHE_SUFFIX = ".ivlm"
# windows embedded per forward call during inference
PREDICT_CHUNK = 256


@dataclass(frozen=True)
class RecordingData:
    """Model-ready windows of one recording: (n_windows, 200, 64) or (n_windows, F)."""

    recording_id: str
    speaker_id: str
    split: str
    windows: np.ndarray = field(repr=False)
    labels: RecordingLabels | None
    duration_s: float

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]


@dataclass(frozen=True)
class Target:
    """What a model predicts: one item, the depression flag, or all items (multi-task)."""

    kind: str = "item"
    item_index: int | None = None

    def __post_init__(self):
        if self.kind not in ("item", "depression", "all_items"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if (self.kind == "item") != (self.item_index is not None):
            raise ValueError("item_index is required for, and only for, item targets")

    @classmethod
    def item(cls, index: int) -> "Target":
        return cls("item", index)

    def head_keys(self, scale: ScaleDefinition) -> list[str]:
        if self.kind == "item":
            return [str(self.item_index)]
        if self.kind == "depression":
            return ["depression"]
        return [str(i) for i in scale.item_indices]

    def n_heads(self, scale: ScaleDefinition) -> int:
        return len(self.head_keys(scale))

    def present(self, labels: RecordingLabels, scale: ScaleDefinition) -> np.ndarray:
        """Binary label per head."""
        if self.kind == "item":
            return np.array([labels.item(self.item_index).present])
        if self.kind == "depression":
            return np.array([labels.depressed])
        return np.array([labels.item(i).present for i in scale.item_indices])

    def raw(self, labels: RecordingLabels, scale: ScaleDefinition) -> np.ndarray:
        """Regression target per head: raw item scores, or the total for depression."""
        if self.kind == "item":
            return np.array([float(labels.item(self.item_index).raw_score)])
        if self.kind == "depression":
            return np.array([float(labels.total)])
        return np.array([float(labels.item(i).raw_score) for i in scale.item_indices])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "item_index": self.item_index}

    @classmethod
    def from_dict(cls, d: dict) -> "Target":
        return cls(d["kind"], d.get("item_index"))

    def __str__(self) -> str:
        return f"item_{self.item_index}" if self.kind == "item" else self.kind


@dataclass(frozen=True)
class Dataset:
    scale: ScaleDefinition
    feature_kind: str
    recordings: tuple[RecordingData, ...]
    drop_last: bool = False

    def split(self, name: str) -> list[RecordingData]:
        return [r for r in self.recordings if r.split == name]


def _cache_path(cache_dir: Path, rid: str) -> Path:
    return cache_dir / f"{rid}{CACHE_SUFFIX}"


def recording_frames(
    rid: str,
    audio_path: Path,
    dsp: FeatureExtractor,
    cache_dir: str | Path | None = None,
) -> np.ndarray:
    """Whole-recording log-mel frames, always rounded through float32.

    Rounding keeps results identical whether or not a cache file exists.
    """
    if cache_dir is not None:
        path = _cache_path(Path(cache_dir), rid)
        if path.exists():
            return read_spectrogram_cache(path, rid).values
    rec = load_wav(audio_path, recording_id=rid)
    spec = dsp.compute(rec.samples, rid)
    if cache_dir is not None:
        write_spectrogram_cache(_cache_path(Path(cache_dir), rid), spec)
    return spec.values.astype(np.float32).astype(np.float64)


def extract_to_cache(manifest: Manifest, cache_dir: str | Path, dsp: FeatureExtractor | None = None) -> dict[str, int]:
    """Write one spectrogram cache per recording; returns n_frames per recording."""
    require_nonempty(manifest)
    dsp = dsp or FeatureExtractor()
    cache_dir = Path(cache_dir)
    out = {}
    for row in manifest.rows:
        rec = load_wav(row.audio_path, recording_id=row.recording_id, speaker_id=row.speaker_id)
        spec = dsp.compute(rec.samples, rec.id)
        write_spectrogram_cache(_cache_path(cache_dir, rec.id), spec)
        out[rec.id] = spec.n_frames
    return out


def build_dataset(
    manifest: Manifest,
    feature_kind: str = "spectrogram",
    dsp: FeatureExtractor | None = None,
    functionals: dict[str, np.ndarray] | None = None,
    cache_dir: str | Path | None = None,
    drop_last: bool = False,
    splits: Sequence[str] | None = None,
) -> Dataset:
    """Load every manifest recording (optionally only some splits) as model windows."""
    if feature_kind not in FEATURE_KINDS:
        raise ValueError(f"feature kind must be one of {FEATURE_KINDS}, got {feature_kind!r}")
    require_nonempty(manifest)
    dsp = dsp or FeatureExtractor()
    labels = binarize_labels(manifest)
    recs = []
    for row in manifest.rows:
        if splits is not None and row.split not in splits:
            continue
        rid = row.recording_id
        if feature_kind == "spectrogram":
            frames = recording_frames(rid, row.audio_path, dsp, cache_dir)
            n = window_count(len(frames), dsp)
            windows = np.stack([window_values(frames, k, dsp) for k in range(n)]) if n else frames[:0]
            duration = len(frames) / dsp.frames_per_second
        else:
            if functionals is None or rid not in functionals:
                raise DimensionMismatch(f"no functional features for recording {rid}")
            windows = np.asarray(functionals[rid], dtype=np.float64)
            n = windows.shape[0]
            duration = float(WINDOW_S + (n - 1) * HOP_S) if n else 0.0
        if n == 0:
            raise TooShort(f"{rid}: shorter than one {WINDOW_S} s window")
        recs.append(RecordingData(rid, row.speaker_id, row.split, windows, labels[rid], duration))
    return Dataset(manifest.scale, feature_kind, tuple(recs), drop_last)


# ----- samples and batches -----
def n_samples(rec: RecordingData, uses_lstm: bool, drop_last: bool = False) -> int:
    """Segments (CNN-LSTM) or windows (CNN) a recording contributes."""
    return geometry_for(rec, uses_lstm, drop_last).n_segments


def geometry_for(rec: RecordingData, uses_lstm: bool, drop_last: bool = False) -> GridGeometry:
    """Grid geometry: 13 s segments for sequence models, 4 s windows for CNNs.

    Both grids hop 1 s. The count is capped by the windows actually
    available, which only matters for truncated feature files.
    """
    span = SEGMENT_SPAN_S if uses_lstm else WINDOW_S
    if rec.duration_s < span:
        raise TooShort(f"{rec.recording_id}: {rec.duration_s:g} s is shorter than one {span} s segment")
    geom = grid_geometry(rec.duration_s, drop_last, span_s=span, hop_s=HOP_S)
    available = rec.n_windows - (SEQ_LEN - 1 if uses_lstm else 0)
    if available < geom.n_segments:
        geom = GridGeometry(rec.duration_s, span, HOP_S, max(available, 0), drop_last)
    return geom


def assemble(
    recordings: Sequence[RecordingData],
    samples: Sequence[tuple[int, int]],
    uses_lstm: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Stack inputs for (recording position, sample index) pairs.

    For sequence models returns the unique windows plus a (B, 10) index so
    windows shared by overlapping segments are embedded once.
    """
    if not uses_lstm:
        return np.stack([recordings[r].windows[k] for r, k in samples]), None
    slots: dict[tuple[int, int], int] = {}
    index = np.empty((len(samples), SEQ_LEN), dtype=np.intp)
    for b, (r, j) in enumerate(samples):
        for t in range(SEQ_LEN):
            index[b, t] = slots.setdefault((r, j + t), len(slots))
    windows = np.stack([recordings[r].windows[k] for r, k in slots])
    return windows, index


# ----- inference -----
def predict_outputs(model: ItemModel, recordings: Sequence[RecordingData], drop_last: bool = False) -> list[np.ndarray]:
    """Per recording: (n_segments, heads, 2) probabilities or (n_segments, heads) values."""
    uses_lstm = model.spec.uses_lstm
    pending: list[tuple[int, int]] = []
    results: list[list[np.ndarray]] = [[] for _ in recordings]

    def flush():
        if not pending:
            return
        x, index = assemble(recordings, pending, uses_lstm)
        out = model.predict(x, index)
        for r, group in groupby(range(len(pending)), key=lambda b: pending[b][0]):
            rows = list(group)
            results[r].append(out[rows[0]:rows[-1] + 1])
        pending.clear()

    cost = SEQ_LEN if uses_lstm else 1
    for r, rec in enumerate(recordings):
        n = geometry_for(rec, uses_lstm, drop_last).n_segments
        for j in range(n):
            pending.append((r, j))
            if len(pending) * cost >= PREDICT_CHUNK * (2 if uses_lstm else 1):
                flush()
    flush()
    return [np.concatenate(parts) for parts in results]


def outputs_to_probs(outputs: np.ndarray, task: str) -> np.ndarray:
    """(n, heads, 2) probability rows. Regression values q become (1 - q, q)
    with q = clip(value, 0, 1), so a predicted score of 0.5 sits on the tie."""
    if task == "classify":
        return outputs
    q = np.clip(outputs, 0.0, 1.0)
    return np.stack([1.0 - q, q], axis=-1)


def predict_grids(
    model: ItemModel,
    recordings: Sequence[RecordingData],
    head_keys: Sequence[str],
    drop_last: bool = False,
) -> dict[str, list[SegmentProbabilityGrid]]:
    """head key -> one grid per recording (same order as ``recordings``)."""
    outputs = predict_outputs(model, recordings, drop_last)
    grids: dict[str, list[SegmentProbabilityGrid]] = {k: [] for k in head_keys}
    for rec, out in zip(recordings, outputs):
        probs = outputs_to_probs(out, model.spec.task)
        geom = geometry_for(rec, model.spec.uses_lstm, drop_last)
        for h, key in enumerate(head_keys):
            index = int(key) if key.isdigit() else 0
            grids[key].append(SegmentProbabilityGrid(rec.recording_id, index, probs[:, h], geom))
    return grids


def head_scores(grids: Sequence[SegmentProbabilityGrid], labels: Sequence[bool], method: str) -> FScores:
    return f_scores([vote(g, method).present for g in grids], labels)


@dataclass(frozen=True)
class SplitScores:
    """Per-head F-scores on one split with one voting method."""

    per_head: dict[str, FScores]

    @property
    def weighted(self) -> float:
        return float(np.mean([s.weighted for s in self.per_head.values()]))

    @property
    def absent(self) -> float:
        return float(np.mean([s.absent for s in self.per_head.values()]))

    @property
    def present(self) -> float:
        return float(np.mean([s.present for s in self.per_head.values()]))


def score_model(
    model: ItemModel,
    recordings: Sequence[RecordingData],
    target: Target,
    scale: ScaleDefinition,
    method: str = "soft",
    drop_last: bool = False,
) -> SplitScores:
    keys = target.head_keys(scale)
    grids = predict_grids(model, recordings, keys, drop_last)
    labels = np.stack([target.present(r.labels, scale) for r in recordings])
    return SplitScores({k: head_scores(grids[k], labels[:, h], method) for h, k in enumerate(keys)})


# ----- evaluation report -----
def item_decisions(
    grids: dict[str, list[SegmentProbabilityGrid]], method: str
) -> list[list[ItemDecision]]:
    """Per recording, the list of item decisions (one per item head)."""
    keys = [k for k in grids if k.isdigit()]
    n = len(grids[keys[0]]) if keys else 0
    return [[vote(grids[k][r], method) for k in keys] for r in range(n)]


def build_report(
    scale: ScaleDefinition,
    recordings: Sequence[RecordingData],
    item_grids: dict[str, list[SegmentProbabilityGrid]],
    depression_grids: list[SegmentProbabilityGrid] | None = None,
    rule: CombinationRule = CombinationRule(),
) -> EvalReport:
    """Item rows for every graded item, plus a depression row.

    The depression row comes from a dedicated model's grids when given,
    otherwise from combining the item decisions, which needs all items.
    """
    rows = []
    for key in sorted(item_grids, key=int):
        index = int(key)
        truth = [r.labels.item(index).present for r in recordings]
        rows.append(
            ReportRow(
                key=key,
                name=scale.item_name(index),
                hard=head_scores(item_grids[key], truth, "hard"),
                soft=head_scores(item_grids[key], truth, "soft"),
            )
        )
    truth = [r.labels.depressed for r in recordings]
    depression = None
    if depression_grids is not None:
        depression = ReportRow(
            "depression",
            f"Depression (total >= {scale.depression_threshold})",
            head_scores(depression_grids, truth, "hard"),
            head_scores(depression_grids, truth, "soft"),
        )
    elif sorted(int(k) for k in item_grids) == list(scale.item_indices):
        cells = {}
        for method in ("hard", "soft"):
            preds = [combine_items(d, rule, scale.item_indices).depressed for d in item_decisions(item_grids, method)]
            cells[method] = f_scores(preds, truth)
        depression = ReportRow(
            "depression",
            f"Depression (total >= {scale.depression_threshold}, {rule})",
            cells["hard"],
            cells["soft"],
        )
    return EvalReport(rows, depression)
