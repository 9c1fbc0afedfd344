"""Recordings, rating scales, manifests and imported functional features."""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFile,
    DimensionMismatch,
    EmptyManifest,
    ManifestError,
    MissingScore,
    NonFiniteValue,
    ScoreOutOfRange,
    SplitLeak,
    TotalMismatch,
    UnsupportedFormat,
)

SAMPLE_RATE_HZ = 16000
PCM16_SCALE = 32768.0
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Recording:
    id: str
    speaker_id: str
    path: Path | None
    samples: np.ndarray = field(repr=False)
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-d array")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class ScaleDefinition:
    name: str
    items: tuple[tuple[int, str], ...]
    item_score_range: tuple[int, int]
    depression_threshold: int

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def item_indices(self) -> tuple[int, ...]:
        return tuple(index for index, _ in self.items)

    def item_name(self, index: int) -> str:
        for i, name in self.items:
            if i == index:
                return name
        raise KeyError(f"{self.name} has no item {index}")

    def column(self, index: int) -> str:
        return f"item_{index}"


MADRS = ScaleDefinition(
    name="MADRS",
    items=(
        (1, "Apparent sadness"),
        (2, "Reported sadness"),
        (3, "Inner tension"),
        (4, "Reduced sleep"),
        (5, "Reduced appetite"),
        (6, "Concentration difficulties"),
        (7, "Lassitude"),
        (8, "Inability to feel"),
        (9, "Pessimistic thoughts"),
        (10, "Suicidal thoughts"),
    ),
    item_score_range=(0, 6),
    depression_threshold=10,
)

PHQ8 = ScaleDefinition(
    name="PHQ8",
    items=(
        (1, "Little interest"),
        (2, "Feeling down"),
        (3, "Trouble sleeping"),
        (4, "Feeling tired"),
        (5, "Poor appetite"),
        (6, "Self-disappointment"),
        (7, "Concentration difficulties"),
        (8, "Slow/Agitated"),
    ),
    item_score_range=(0, 3),
    depression_threshold=10,
)

SCALES = {"MADRS": MADRS, "PHQ8": PHQ8}


def get_scale(name: str) -> ScaleDefinition:
    key = name.upper().replace("-", "")
    if key not in SCALES:
        raise ValueError(f"unknown scale {name!r}; expected one of {sorted(SCALES)}")
    return SCALES[key]


@dataclass(frozen=True)
class ItemLabel:
    item_index: int
    raw_score: int
    present: bool


@dataclass(frozen=True)
class RecordingLabels:
    items: tuple[ItemLabel, ...]
    total: int
    depressed: bool

    def item(self, index: int) -> ItemLabel:
        for label in self.items:
            if label.item_index == index:
                return label
        raise KeyError(index)


@dataclass(frozen=True)
class ManifestRow:
    recording_id: str
    speaker_id: str
    audio_path: Path
    split: str
    scores: tuple[int, ...]
    total: int | None = None


@dataclass(frozen=True)
class Manifest:
    scale: ScaleDefinition
    rows: tuple[ManifestRow, ...]

    def __post_init__(self):
        validate_manifest(self)

    def split_rows(self, split: str) -> tuple[ManifestRow, ...]:
        return tuple(r for r in self.rows if r.split == split)

    def speakers(self, split: str) -> set[str]:
        return {r.speaker_id for r in self.rows if r.split == split}

    def supports(self, split: str) -> dict[int, tuple[int, int]]:
        """Per-item (absent, present) counts on one split."""
        rows = self.split_rows(split)
        out = {}
        for pos, index in enumerate(self.scale.item_indices):
            present = sum(1 for r in rows if r.scores[pos] > 0)
            out[index] = (len(rows) - present, present)
        return out

    def row(self, recording_id: str) -> ManifestRow:
        for r in self.rows:
            if r.recording_id == recording_id:
                return r
        raise KeyError(recording_id)


def validate_manifest(manifest: Manifest) -> None:
    scale = manifest.scale
    lo, hi = scale.item_score_range
    seen_ids: set[str] = set()
    speaker_split: dict[str, str] = {}
    for r in manifest.rows:
        if r.recording_id in seen_ids:
            raise ManifestError(f"duplicate recording_id {r.recording_id!r}")
        seen_ids.add(r.recording_id)
        if r.split not in SPLITS:
            raise ManifestError(f"{r.recording_id}: split must be one of {SPLITS}, got {r.split!r}")
        if len(r.scores) != scale.n_items:
            raise MissingScore(
                f"{r.recording_id}: expected {scale.n_items} item scores, got {len(r.scores)}"
            )
        for index, score in zip(scale.item_indices, r.scores):
            if not lo <= score <= hi:
                raise ScoreOutOfRange(
                    f"{r.recording_id}: item_{index}={score} outside {scale.name} range {lo}-{hi}"
                )
        if r.total is not None and r.total != sum(r.scores):
            raise TotalMismatch(
                f"{r.recording_id}: total={r.total} but item scores sum to {sum(r.scores)}"
            )
        prev = speaker_split.setdefault(r.speaker_id, r.split)
        if prev != r.split:
            raise SplitLeak(f"speaker {r.speaker_id!r} appears in both {prev!r} and {r.split!r}")


def load_wav(path: str | Path, recording_id: str | None = None, speaker_id: str = "") -> Recording:
    """Read a 16 kHz mono PCM16 WAV file and scale samples to [-1, 1)."""
    path = Path(path)
    if not path.is_file():
        raise CorruptFile(f"{path}: no such file")
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            payload = fh.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if msg.startswith("unknown format"):
            tag = msg.split(":")[-1].strip()
            raise UnsupportedFormat(f"format_tag={tag} (only PCM=1 is supported)") from exc
        raise CorruptFile(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise CorruptFile(f"{path}: truncated header") from exc

    if channels != 1:
        raise UnsupportedFormat(f"channels={channels}")
    if width != 2:
        raise UnsupportedFormat(f"bits_per_sample={8 * width}")
    if rate != SAMPLE_RATE_HZ:
        raise UnsupportedFormat(f"sample_rate={rate}")
    if len(payload) != 2 * n_frames:
        raise CorruptFile(f"{path}: header declares {n_frames} frames, found {len(payload) // 2}")
    if n_frames == 0:
        raise CorruptFile(f"{path}: no audio frames")

    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM16_SCALE
    return Recording(
        id=recording_id if recording_id is not None else path.stem,
        speaker_id=speaker_id,
        path=path,
        samples=samples,
        sample_rate_hz=rate,
    )


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int = SAMPLE_RATE_HZ) -> None:
    """Write float samples in [-1, 1] as PCM16 (clipped, rounded to nearest)."""
    pcm = np.clip(np.round(np.asarray(samples) * PCM16_SCALE), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def manifest_columns(scale: ScaleDefinition) -> list[str]:
    return (
        ["recording_id", "speaker_id", "path", "split"]
        + [scale.column(i) for i in scale.item_indices]
        + ["total"]
    )


def _parse_int(cell: str | None, where: str) -> int:
    if cell is None or cell.strip() == "":
        raise MissingScore(f"{where}: empty score")
    try:
        value = float(cell)
    except ValueError:
        raise ManifestError(f"{where}: not a number: {cell!r}") from None
    if not value.is_integer():
        raise ManifestError(f"{where}: scores must be integers, got {cell!r}")
    return int(value)


def parse_manifest(path: str | Path, scale: ScaleDefinition) -> Manifest:
    """Parse and validate a manifest CSV.

    Relative audio paths are resolved against the manifest's directory.
    The ``total`` column is optional; when present and non-empty it must
    equal the sum of the item scores.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for required in ("recording_id", "speaker_id", "path", "split"):
            if required not in header:
                raise ManifestError(f"{path}: missing column {required!r}")
        for index in scale.item_indices:
            if scale.column(index) not in header:
                raise MissingScore(f"{path}: missing column {scale.column(index)!r}")
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            rid = (raw["recording_id"] or "").strip()
            scores = tuple(
                _parse_int(raw[scale.column(i)], f"{path}:{line_no} {scale.column(i)}")
                for i in scale.item_indices
            )
            total_cell = raw.get("total")
            total = None
            if total_cell is not None and total_cell.strip() != "":
                total = _parse_int(total_cell, f"{path}:{line_no} total")
            audio = Path(raw["path"].strip())
            if not audio.is_absolute():
                audio = path.parent / audio
            rows.append(
                ManifestRow(
                    recording_id=rid,
                    speaker_id=raw["speaker_id"].strip(),
                    audio_path=audio,
                    split=raw["split"].strip(),
                    scores=scores,
                    total=total,
                )
            )
    return Manifest(scale=scale, rows=tuple(rows))


def write_manifest(manifest: Manifest, path: str | Path, relative_to: Path | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = relative_to if relative_to is not None else path.parent
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(manifest_columns(manifest.scale))
        for r in manifest.rows:
            audio = r.audio_path
            try:
                audio = audio.relative_to(base)
            except ValueError:
                pass
            writer.writerow(
                [r.recording_id, r.speaker_id, audio.as_posix(), r.split, *r.scores]
                + ["" if r.total is None else r.total]
            )


def require_nonempty(manifest: Manifest) -> None:
    if not manifest.rows:
        raise EmptyManifest("manifest has no rows")


def binarize_labels(manifest: Manifest) -> dict[str, RecordingLabels]:
    threshold = manifest.scale.depression_threshold
    out = {}
    for r in manifest.rows:
        total = sum(r.scores)
        items = tuple(
            ItemLabel(item_index=i, raw_score=s, present=s > 0)
            for i, s in zip(manifest.scale.item_indices, r.scores)
        )
        out[r.recording_id] = RecordingLabels(items=items, total=total, depressed=total >= threshold)
    return out


@dataclass(frozen=True)
class FunctionalFeatureVector:
    recording_id: str
    window_index: int
    values: np.ndarray = field(repr=False)


_ID_COLUMNS = ("recording_id", "window_index")


def import_functionals(path: str | Path, expected_dim: int = 88) -> list[FunctionalFeatureVector]:
    """Read per-window functional features (e.g. an eGeMAPS export).

    The file needs a header with a ``recording_id`` column. A
    ``window_index`` column is optional; without it windows are numbered in
    file order per recording. Every other column is a feature. Comma and
    semicolon delimiters are both accepted.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        delimiter = ";" if first.count(";") > first.count(",") else ","
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader)]
        if "recording_id" not in header:
            raise DimensionMismatch(f"{path}: missing 'recording_id' column")
        rid_col = header.index("recording_id")
        win_col = header.index("window_index") if "window_index" in header else None
        feature_cols = [i for i, h in enumerate(header) if h not in _ID_COLUMNS]
        if len(feature_cols) != expected_dim:
            raise DimensionMismatch(
                f"{path}: {len(feature_cols)} feature columns, expected {expected_dim}"
            )
        counters: dict[str, int] = {}
        vectors = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DimensionMismatch(f"{path}:{line_no}: {len(row)} cells, header has {len(header)}")
            rid = row[rid_col].strip()
            if win_col is None:
                window = counters.get(rid, 0)
                counters[rid] = window + 1
            else:
                window = int(row[win_col])
            values = np.empty(expected_dim)
            for k, col in enumerate(feature_cols):
                try:
                    v = float(row[col])
                except ValueError:
                    raise NonFiniteValue(
                        f"{path}: row {line_no}, column {header[col]!r}: not a number: {row[col]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise NonFiniteValue(f"{path}: row {line_no}, column {header[col]!r}: {row[col]}")
                values[k] = v
            values.setflags(write=False)
            vectors.append(FunctionalFeatureVector(rid, window, values))

    order = {}
    for v in vectors:
        order.setdefault(v.recording_id, len(order))
    vectors.sort(key=lambda v: (order[v.recording_id], v.window_index))
    for a, b in zip(vectors, vectors[1:]):
        if a.recording_id == b.recording_id and a.window_index == b.window_index:
            raise DimensionMismatch(f"{path}: duplicate window {a.window_index} for {a.recording_id}")
    return vectors


def group_functionals(vectors: list[FunctionalFeatureVector]) -> dict[str, np.ndarray]:
    """Stack vectors into one (n_windows, dim) matrix per recording.

    Window indices must run contiguously from 0.
    """
    grouped: dict[str, list[FunctionalFeatureVector]] = {}
    for v in vectors:
        grouped.setdefault(v.recording_id, []).append(v)
    out = {}
    for rid, vs in grouped.items():
        indices = [v.window_index for v in vs]
        if indices != list(range(len(vs))):
            raise DimensionMismatch(f"{rid}: window indices must be 0..{len(vs) - 1}, got {indices}")
        out[rid] = np.stack([v.values for v in vs])
    return out


def write_functionals(path: str | Path, features: dict[str, np.ndarray], delimiter: str = ",") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = next(iter(features.values())).shape[1]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["recording_id", "window_index"] + [f"f{k}" for k in range(dim)])
        for rid, matrix in features.items():
            for w, row in enumerate(matrix):
                writer.writerow([rid, w] + [repr(float(x)) for x in row])
