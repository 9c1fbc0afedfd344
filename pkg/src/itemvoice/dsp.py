"""Log-mel spectrograms: framing, power spectra, mel filterbank, cache files.

Frames are 20 ms long with a 20 ms hop (no overlap), so a 4 s window at
16 kHz yields exactly 200 frames of 64 mel bands.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptFile, DegenerateFilter, ShapeMismatch, TooShort

N_MELS = 64
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = 16000
    frame_length_ms: float = 20.0
    hop_ms: float = 20.0
    window_function: str = "hann"
    fft_size: int = 512

    def __post_init__(self):
        if self.window_function not in ("hann", "rectangular"):
            raise ValueError(f"window_function must be 'hann' or 'rectangular', got {self.window_function!r}")
        if self.fft_size < self.frame_samples:
            raise ValueError(f"fft_size={self.fft_size} is smaller than a frame ({self.frame_samples} samples)")
        if self.hop_samples < 1:
            raise ValueError("hop must be at least one sample")

    @property
    def frame_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_length_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        n = self.frame_samples
        if self.window_function == "rectangular":
            return np.ones(n)
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames_for(n_samples: int, config: StftConfig) -> int:
    return (n_samples - config.frame_samples) // config.hop_samples + 1


def stft_power(samples: np.ndarray, config: StftConfig = StftConfig()) -> np.ndarray:
    """|DFT|^2 of each windowed frame; shape (n_frames, fft_size // 2 + 1)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ShapeMismatch(f"expected 1-d samples, got shape {samples.shape}")
    if len(samples) < config.frame_samples:
        raise TooShort(f"{len(samples)} samples is shorter than one frame ({config.frame_samples})")
    frames = sliding_window_view(samples, config.frame_samples)[:: config.hop_samples]
    spectrum = np.fft.rfft(frames * config.window(), n=config.fft_size, axis=-1)
    return spectrum.real**2 + spectrum.imag**2


def spectral_energy(power: np.ndarray, fft_size: int) -> np.ndarray:
    """Per-frame time-domain energy implied by a one-sided power spectrum."""
    inner = power[:, 1:-1] if fft_size % 2 == 0 else power[:, 1:]
    total = power[:, 0] + 2.0 * inner.sum(axis=1)
    if fft_size % 2 == 0:
        total = total + power[:, -1]
    return total / fft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    sample_rate_hz: int
    fft_size: int
    n_mels: int
    f_min_hz: float
    f_max_hz: float
    weights: np.ndarray = field(repr=False)
    centers_hz: np.ndarray = field(repr=False)


def build_mel_filterbank(
    sample_rate: int = 16000,
    fft_size: int = 512,
    n_mels: int = N_MELS,
    f_min_hz: float = 0.0,
    f_max_hz: float | None = None,
) -> MelFilterbank:
    """Triangular filters with centres evenly spaced on the HTK mel scale.

    Each triangle rises from the previous centre to its own and falls to the
    next, evaluated at the exact FFT bin frequencies, with a peak of 1.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if f_max_hz is None:
        f_max_hz = sample_rate / 2.0
    if not 0.0 <= f_min_hz < f_max_hz <= sample_rate / 2.0:
        raise ValueError(f"need 0 <= f_min < f_max <= Nyquist, got {f_min_hz}, {f_max_hz}")

    edges = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
    # pin the outer edges so round-off cannot reach past them
    edges[0], edges[-1] = f_min_hz, f_max_hz
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) <= 0.0)
    if empty.size:
        raise DegenerateFilter(
            f"{empty.size} of {n_mels} mel filters cover no FFT bin "
            f"(first: filter {empty[0]}); increase fft_size or lower n_mels"
        )
    weights.setflags(write=False)
    return MelFilterbank(
        sample_rate_hz=sample_rate,
        fft_size=fft_size,
        n_mels=n_mels,
        f_min_hz=float(f_min_hz),
        f_max_hz=float(f_max_hz),
        weights=weights,
        centers_hz=edges[1:-1],
    )


@dataclass(frozen=True)
class LogMelSpectrogram:
    recording_id: str
    start_s: float
    values: np.ndarray = field(repr=False)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


def log_mel(
    power: np.ndarray,
    bank: MelFilterbank,
    floor: float = LOG_FLOOR,
    recording_id: str = "",
    start_s: float = 0.0,
) -> LogMelSpectrogram:
    """Natural log of mel-band power, floored to keep every value finite."""
    if power.ndim != 2 or power.shape[1] != bank.weights.shape[1]:
        raise ShapeMismatch(
            f"power has shape {power.shape}; filterbank expects (*, {bank.weights.shape[1]})"
        )
    mel = power @ bank.weights.T
    return LogMelSpectrogram(recording_id, float(start_s), np.log(np.maximum(mel, floor)))


def standardize(values: np.ndarray) -> np.ndarray:
    std = values.std()
    return (values - values.mean()) / (std if std > 0 else 1.0)


@dataclass(frozen=True)
class FeatureExtractor:
    """Bundles STFT settings and a shared filterbank for whole recordings."""

    stft: StftConfig = StftConfig()
    n_mels: int = N_MELS
    floor: float = LOG_FLOOR
    standardize: bool = False
    bank: MelFilterbank = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "bank",
            build_mel_filterbank(self.stft.sample_rate_hz, self.stft.fft_size, self.n_mels),
        )

    @property
    def frames_per_second(self) -> int:
        hop = self.stft.hop_samples
        if self.stft.sample_rate_hz % hop:
            raise ValueError("hop must divide one second of samples for whole-second windows")
        return self.stft.sample_rate_hz // hop

    def frames_for_seconds(self, seconds: float) -> int:
        return n_frames_for(int(round(seconds * self.stft.sample_rate_hz)), self.stft)

    def compute(self, samples: np.ndarray, recording_id: str = "", start_s: float = 0.0) -> LogMelSpectrogram:
        """Log-mel frames of a whole stretch of audio (never standardized)."""
        return log_mel(stft_power(samples, self.stft), self.bank, self.floor, recording_id, start_s)

    def finish_window(self, values: np.ndarray) -> np.ndarray:
        """Per-spectrogram post-processing applied to each model input window."""
        return standardize(values) if self.standardize else values


# Spectrogram cache: 24-byte little-endian header then float32 payload.
#   0  4s  magic b"IVLM"
#   4  u16 version (1)
#   6  u16 reserved (0)
#   8  u32 n_frames
#  12  u32 n_mels
#  16  f64 start_s
#  24  n_frames * n_mels float32, row-major (frame-major)
CACHE_MAGIC = b"IVLM"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHIId")


def write_spectrogram_cache(path: str | Path, spec: LogMelSpectrogram) -> None:
    n_frames, n_mels = spec.values.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, 0, n_frames, n_mels, spec.start_s)
    payload = np.ascontiguousarray(spec.values, dtype="<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)


def read_spectrogram_cache(path: str | Path, recording_id: str | None = None) -> LogMelSpectrogram:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _CACHE_HEADER.size:
        raise CorruptFile(f"{path}: shorter than the cache header")
    magic, version, _, n_frames, n_mels, start_s = _CACHE_HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CorruptFile(f"{path}: unsupported cache version {version}")
    expected = _CACHE_HEADER.size + 4 * n_frames * n_mels
    if len(blob) != expected:
        raise CorruptFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=_CACHE_HEADER.size).reshape(n_frames, n_mels)
    return LogMelSpectrogram(
        recording_id if recording_id is not None else path.stem,
        start_s,
        values.astype(np.float64),
    )
