"""Slicing recordings into model samples on a 1 s grid.

A CNN sample is one 4 s spectrogram. A CNN-LSTM sample is a run of 10
such spectrograms whose starts are 1 s apart, covering 13 s. Window ``k``
always starts at ``k`` seconds, so both model families share one time grid
and a sequence starting at ``j`` seconds consists of windows ``j..j+9``.

Trailing audio shorter than one more 1 s step is dropped, never padded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Recording
from .dsp import FeatureExtractor, LogMelSpectrogram
from .errors import TooShort

WINDOW_S = 4
HOP_S = 1
SEQ_LEN = 10
SEGMENT_SPAN_S = WINDOW_S + (SEQ_LEN - 1) * HOP_S  # 13


@dataclass(frozen=True)
class GridGeometry:
    recording_duration_s: float
    segment_span_s: float = SEGMENT_SPAN_S
    hop_s: float = HOP_S
    n_segments: int = 1
    drop_last: bool = False

    def starts_s(self) -> list[float]:
        return [k * self.hop_s for k in range(self.n_segments)]


def count_segments(duration_s: float, span_s: float = SEGMENT_SPAN_S, hop_s: float = HOP_S,
                   drop_last: bool = False) -> int:
    if duration_s < span_s:
        return 0
    # tolerate float noise in durations derived from sample counts
    n = math.floor((duration_s - span_s) / hop_s + 1e-9) + 1
    return n - 1 if drop_last else n


def grid_geometry(duration_s: float, drop_last: bool = False, span_s: float = SEGMENT_SPAN_S,
                  hop_s: float = HOP_S) -> GridGeometry:
    n = count_segments(duration_s, span_s, hop_s, drop_last)
    if n < 1:
        raise TooShort(
            f"{duration_s:g} s yields no {span_s:g} s segment"
            + (" once the last segment is dropped" if drop_last and duration_s >= span_s else "")
        )
    return GridGeometry(
        recording_duration_s=duration_s,
        segment_span_s=span_s,
        hop_s=hop_s,
        n_segments=n,
        drop_last=drop_last,
    )


@dataclass(frozen=True)
class SegmentSequence:
    recording_id: str
    segment_index: int
    start_s: float
    spectrograms: tuple[LogMelSpectrogram, ...]
    span_s: float = SEGMENT_SPAN_S

    def stacked(self) -> np.ndarray:
        return np.stack([s.values for s in self.spectrograms])


def window_count(n_frames: int, dsp: FeatureExtractor) -> int:
    """Number of whole 4 s windows on the 1 s grid within ``n_frames`` frames."""
    per_window = dsp.frames_for_seconds(WINDOW_S)
    if n_frames < per_window:
        return 0
    return (n_frames - per_window) // (dsp.frames_per_second * HOP_S) + 1


def window_values(frames: np.ndarray, k: int, dsp: FeatureExtractor) -> np.ndarray:
    """Model input for the window starting at ``k`` seconds, sliced from recording frames."""
    start = k * HOP_S * dsp.frames_per_second
    values = frames[start:start + dsp.frames_for_seconds(WINDOW_S)]
    return dsp.finish_window(values)


def sequence_windows(n_sequences: int) -> np.ndarray:
    """(n_sequences, 10) window indices; row j is windows j..j+9."""
    return np.arange(n_sequences)[:, None] + np.arange(SEQ_LEN)[None, :]


def make_cnn_samples(rec: Recording, dsp: FeatureExtractor) -> list[LogMelSpectrogram]:
    if rec.duration_s < WINDOW_S:
        raise TooShort(f"{rec.id}: {rec.duration_s:g} s is shorter than one {WINDOW_S} s window")
    frames = dsp.compute(rec.samples, rec.id).values
    n = window_count(len(frames), dsp)
    return [
        LogMelSpectrogram(rec.id, float(k * HOP_S), window_values(frames, k, dsp))
        for k in range(n)
    ]


def make_sequences(rec: Recording, dsp: FeatureExtractor, drop_last: bool = False) -> list[SegmentSequence]:
    if rec.duration_s < SEGMENT_SPAN_S:
        raise TooShort(f"{rec.id}: {rec.duration_s:g} s is shorter than one {SEGMENT_SPAN_S} s segment")
    geometry = grid_geometry(rec.duration_s, drop_last)
    windows = make_cnn_samples(rec, dsp)
    return [
        SegmentSequence(
            recording_id=rec.id,
            segment_index=j,
            start_s=float(j * HOP_S),
            spectrograms=tuple(windows[j:j + SEQ_LEN]),
        )
        for j in range(geometry.n_segments)
    ]
