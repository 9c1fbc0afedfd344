"""Second stage: segment probabilities to item and depression decisions.

Hard voting takes the per-segment argmax as a vote; soft voting averages
the probability rows. Ties go to "present" in both schemes, both for a
single row with equal probabilities and for an even split of the votes or
a mean of exactly 0.5.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyGrid, IncompleteDecisions, LengthMismatch, ShapeMismatch
from .segmentation import GridGeometry

ROW_SUM_TOL = 1e-6
# absorbs float noise when a mean lands on the 0.5 boundary
TIE_EPS = 1e-9


@dataclass(frozen=True)
class SegmentProbabilityGrid:
    recording_id: str
    item_index: int
    probs: np.ndarray = field(repr=False)
    geometry: GridGeometry | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != 2:
            raise ShapeMismatch(f"grid must be (n_segments, 2), got {probs.shape}")
        if probs.shape[0] and (np.any(probs < -ROW_SUM_TOL) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL)):
            raise ValueError("every grid row must be a probability pair summing to 1")
        if self.geometry is not None and self.geometry.n_segments != probs.shape[0]:
            raise ShapeMismatch(
                f"grid has {probs.shape[0]} rows but geometry declares {self.geometry.n_segments} segments"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def n_segments(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class ItemDecision:
    item_index: int
    method: str
    present: bool
    aggregate_present_prob: float


def _check(grid: SegmentProbabilityGrid) -> None:
    if grid.n_segments == 0:
        raise EmptyGrid(f"{grid.recording_id}: grid for item {grid.item_index} has no segments")


def hard_vote(grid: SegmentProbabilityGrid) -> ItemDecision:
    _check(grid)
    present_votes = int(np.count_nonzero(grid.probs[:, 1] >= grid.probs[:, 0]))
    absent_votes = grid.n_segments - present_votes
    return ItemDecision(
        item_index=grid.item_index,
        method="hard",
        present=present_votes >= absent_votes,
        aggregate_present_prob=present_votes / grid.n_segments,
    )


def soft_vote(grid: SegmentProbabilityGrid) -> ItemDecision:
    _check(grid)
    mean_present = float(grid.probs[:, 1].mean())
    return ItemDecision(
        item_index=grid.item_index,
        method="soft",
        present=mean_present >= 0.5 - TIE_EPS,
        aggregate_present_prob=mean_present,
    )


def vote(grid: SegmentProbabilityGrid, method: str) -> ItemDecision:
    if method == "hard":
        return hard_vote(grid)
    if method == "soft":
        return soft_vote(grid)
    raise ValueError(f"voting method must be 'hard' or 'soft', got {method!r}")


@dataclass(frozen=True)
class CombinationRule:
    """``mean_prob``: mean aggregate present-probability >= 0.5.
    ``count_threshold``: at least ``k`` items present."""

    kind: str = "mean_prob"
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("mean_prob", "count_threshold"):
            raise ValueError(f"unknown combination rule {self.kind!r}")
        if self.kind == "count_threshold" and (self.k is None or self.k < 1):
            raise ValueError("count_threshold needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "CombinationRule":
        """Accepts ``mean_prob`` or ``count_threshold:K``."""
        name, _, arg = text.partition(":")
        if name == "count_threshold":
            return cls("count_threshold", int(arg))
        return cls(name)

    def __str__(self) -> str:
        return self.kind if self.kind == "mean_prob" else f"count_threshold:{self.k}"


@dataclass(frozen=True)
class DepressionDecision:
    depressed: bool
    rule: CombinationRule
    score: float


def combine_items(
    decisions: Sequence[ItemDecision],
    rule: CombinationRule = CombinationRule(),
    item_indices: Sequence[int] | None = None,
) -> DepressionDecision:
    """Pool one decision per scale item into a depression decision."""
    got = [d.item_index for d in decisions]
    if not decisions:
        raise IncompleteDecisions("no item decisions to combine")
    if len(set(got)) != len(got):
        raise IncompleteDecisions(f"duplicate item decisions: {sorted(got)}")
    if item_indices is not None and sorted(got) != sorted(item_indices):
        missing = sorted(set(item_indices) - set(got))
        raise IncompleteDecisions(f"missing decisions for items {missing}")
    if rule.kind == "count_threshold":
        count = sum(d.present for d in decisions)
        return DepressionDecision(count >= rule.k, rule, float(count))
    mean = float(np.mean([d.aggregate_present_prob for d in decisions]))
    return DepressionDecision(mean >= 0.5 - TIE_EPS, rule, mean)


def candidate_rules(n_items: int) -> list[CombinationRule]:
    return [CombinationRule()] + [CombinationRule("count_threshold", k) for k in range(1, n_items + 1)]


def select_combination_rule(
    decisions: Sequence[Sequence[ItemDecision]],
    depressed: Sequence[bool],
    n_items: int | None = None,
) -> tuple[CombinationRule, "FScores"]:
    """Pick the rule with the best weighted F on labelled recordings.

    ``decisions`` holds one list of item decisions per recording. Ties keep
    the earlier candidate: ``mean_prob`` first, then ascending ``k``.
    """
    if not decisions:
        raise IncompleteDecisions("no recordings to select a combination rule on")
    n_items = n_items or len(decisions[0])
    best = None
    for rule in candidate_rules(n_items):
        scores = f_scores([combine_items(d, rule).depressed for d in decisions], depressed)
        if best is None or scores.weighted > best[1].weighted:
            best = (rule, scores)
    return best


@dataclass(frozen=True)
class FScores:
    weighted: float
    absent: float
    present: float
    support_absent: int = 0
    support_present: int = 0

    def cell(self) -> str:
        return format_cell(self)


def _f1(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def f_scores(predictions: Sequence[bool], labels: Sequence[bool]) -> FScores:
    """Per-class F1 for "absent" and "present" plus their support-weighted mean.

    A class with no support gets F = 0 and weight 0.
    """
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise LengthMismatch("need at least one prediction")
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    tp = int(np.sum(p & y))
    tn = int(np.sum(~p & ~y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    f_present = _f1(tp, fp, fn)
    f_absent = _f1(tn, fn, fp)
    n_present, n_absent = tp + fn, tn + fp
    weighted = (n_absent * f_absent + n_present * f_present) / (n_absent + n_present)
    return FScores(weighted, f_absent, f_present, n_absent, n_present)


def format_cell(scores: FScores) -> str:
    """Table cell "W/A/P" with two decimals, e.g. ``0.70/0.74/0.53``."""
    return f"{scores.weighted:.2f}/{scores.absent:.2f}/{scores.present:.2f}"


@dataclass(frozen=True)
class ReportRow:
    key: str
    name: str
    hard: FScores
    soft: FScores


@dataclass
class EvalReport:
    rows: list[ReportRow]
    depression: ReportRow | None = None

    def all_rows(self) -> list[ReportRow]:
        return self.rows + ([self.depression] if self.depression is not None else [])


REPORT_COLUMNS = [
    "item",
    "name",
    "hard",
    "soft",
    "hard_weighted_f",
    "hard_f_absent",
    "hard_f_present",
    "soft_weighted_f",
    "soft_f_absent",
    "soft_f_present",
    "support_absent",
    "support_present",
]


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.all_rows():
        writer.writerow(
            [
                row.key,
                row.name,
                format_cell(row.hard),
                format_cell(row.soft),
                f"{row.hard.weighted:.6f}",
                f"{row.hard.absent:.6f}",
                f"{row.hard.present:.6f}",
                f"{row.soft.weighted:.6f}",
                f"{row.soft.absent:.6f}",
                f"{row.soft.present:.6f}",
                row.hard.support_absent,
                row.hard.support_present,
            ]
        )
    return buf.getvalue()


def write_report(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_csv(report), encoding="utf-8")


# ----- timeline export -----
RAMP_LOW = (0x2A, 0x0A, 0x4A)
RAMP_HIGH = (0xF5, 0xE6, 0x42)
CELL_PX = 24

TIMELINE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["recording_id", "item_index", "item_name", "hop_s", "span_s", "segments", "decision"],
    "properties": {
        "recording_id": {"type": "string"},
        "item_index": {"type": "integer"},
        "item_name": {"type": "string"},
        "hop_s": {"type": "number", "exclusiveMinimum": 0},
        "span_s": {"type": "number", "exclusiveMinimum": 0},
        "segments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "start_s", "p_absent", "p_present"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "start_s": {"type": "number", "minimum": 0},
                    "p_absent": {"type": "number", "minimum": 0, "maximum": 1},
                    "p_present": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "decision": {
            "type": "object",
            "required": ["hard", "soft"],
            "properties": {
                m: {
                    "type": "object",
                    "required": ["present", "aggregate_present_prob"],
                    "properties": {
                        "present": {"type": "boolean"},
                        "aggregate_present_prob": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                }
                for m in ("hard", "soft")
            },
        },
        "label": {"type": ["boolean", "null"]},
    },
}


def ramp_color(p: float) -> str:
    """Linear RGB interpolation from dark purple (p=0) to yellow (p=1)."""
    p = min(1.0, max(0.0, float(p)))
    rgb = [round(lo + (hi - lo) * p) for lo, hi in zip(RAMP_LOW, RAMP_HIGH)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def export_timeline(
    grid: SegmentProbabilityGrid,
    item_name: str = "",
    label: bool | None = None,
    hop_s: float = 1.0,
    span_s: float = 13.0,
) -> tuple[dict, str]:
    """JSON document and SVG picture of one item's probability grid.

    The SVG has two rows of cells per segment column: the top row is
    colored by p(present), the bottom row by p(absent).
    """
    if grid.geometry is not None:
        hop_s, span_s = grid.geometry.hop_s, grid.geometry.segment_span_s
    hard, soft = hard_vote(grid), soft_vote(grid)
    doc = {
        "recording_id": grid.recording_id,
        "item_index": grid.item_index,
        "item_name": item_name,
        "hop_s": hop_s,
        "span_s": span_s,
        "segments": [
            {"index": k, "start_s": k * hop_s, "p_absent": float(row[0]), "p_present": float(row[1])}
            for k, row in enumerate(grid.probs)
        ],
        "decision": {
            d.method: {"present": d.present, "aggregate_present_prob": d.aggregate_present_prob}
            for d in (hard, soft)
        },
    }
    if label is not None:
        doc["label"] = bool(label)
    return doc, render_svg(grid, item_name)


def render_svg(grid: SegmentProbabilityGrid, item_name: str = "") -> str:
    n = grid.n_segments
    width, height = n * CELL_PX, 2 * CELL_PX
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{_escape(grid.recording_id)} item {grid.item_index} {_escape(item_name)}</title>",
    ]
    for k, (p_absent, p_present) in enumerate(grid.probs):
        x = k * CELL_PX
        for row, (name, p) in enumerate((("present", p_present), ("absent", p_absent))):
            lines.append(
                f'<rect class="cell {name}" data-segment="{k}" data-p="{p:.6f}" x="{x}" y="{row * CELL_PX}" '
                f'width="{CELL_PX}" height="{CELL_PX}" fill="{ramp_color(p)}"/>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_timeline(doc: dict, svg: str, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    svg_path = out_dir / f"{stem}.svg"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    svg_path.write_text(svg, encoding="utf-8")
    return json_path, svg_path
