"""Spectrogram / eGeMAPS CNN and CNN-LSTM item models.

The convolutional trunk runs three parallel branches over a (time, mel)
spectrogram. Each branch is a stack of stride-(2, 2) convolutions with
ReLU, reduced by global average pooling to a channel vector; the three
vectors are concatenated into one embedding (3 x 52 = 156 by default).

The CNN classifies one embedding directly. The CNN-LSTM embeds each of 10
consecutive windows with the shared trunk, runs an LSTM (hidden size 64)
over them and classifies the final hidden state. eGeMAPS variants swap the
trunk for a two-layer MLP encoder producing an embedding of the same size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import functional as F
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.optim import make_rng
from .autodiff.tensor import Tensor, concat, gather_rows, getitem, linear, relu, reshape
from .dsp import LogMelSpectrogram
from .errors import BadSequenceLength, CheckpointError, DimensionMismatch, ShapeMismatch
from .segmentation import SegmentSequence

KINDS = ("spec_cnn", "spec_cnn_lstm", "egemaps_cnn", "egemaps_cnn_lstm")
TASKS = ("classify", "regress")
STRIDE = (2, 2)


@dataclass(frozen=True)
class BranchConfig:
    kernel: int
    channels: tuple[int, ...] = (8, 52)
    padding: int | None = None

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def pad(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class CnnTrunkConfig:
    branches: tuple[BranchConfig, ...] = (BranchConfig(3), BranchConfig(5), BranchConfig(7))
    input_shape: tuple[int, int] = (200, 64)

    def __post_init__(self):
        if len(self.branches) != 3:
            raise ValueError(f"the trunk has exactly three branches, got {len(self.branches)}")
        for b in self.branches:
            if b.depth < 1 or min(b.channels) < 1:
                raise ValueError(f"bad branch {b}")

    @property
    def embedding_dim(self) -> int:
        return sum(b.channels[-1] for b in self.branches)

    def branch_output_shape(self, index: int) -> tuple[int, int]:
        h, w = self.input_shape
        b = self.branches[index]
        for _ in range(b.depth):
            h = F.conv_output_size(h, b.kernel, STRIDE[0], b.pad)
            w = F.conv_output_size(w, b.kernel, STRIDE[1], b.pad)
        return h, w


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "spec_cnn_lstm"
    task: str = "classify"
    heads: int = 1
    use_batchnorm: bool = False
    dropout_rate: float = 0.0
    trunk: CnnTrunkConfig = field(default_factory=CnnTrunkConfig)
    hidden_size: int = 64
    seq_len: int = 10
    n_features: int = 88
    encoder_hidden: int = 128

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def uses_lstm(self) -> bool:
        return self.kind.endswith("_lstm")

    @property
    def uses_spectrogram(self) -> bool:
        return self.kind.startswith("spec_")

    @property
    def embedding_dim(self) -> int:
        return self.trunk.embedding_dim

    @property
    def head_outputs(self) -> int:
        return 2 if self.task == "classify" else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        trunk = d.pop("trunk", None)
        if trunk is not None:
            branches = tuple(
                BranchConfig(kernel=b["kernel"], channels=tuple(b["channels"]), padding=b.get("padding"))
                for b in trunk["branches"]
            )
            d["trunk"] = CnnTrunkConfig(branches=branches, input_shape=tuple(trunk["input_shape"]))
        return cls(**d)


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ItemModel:
    """Parameters and forward pass for one :class:`ModelSpec`.

    ``params`` holds trainable leaf tensors, ``buffers`` holds batch-norm
    running statistics and the eGeMAPS input standardization.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = make_rng(seed)
        if spec.uses_spectrogram:
            self._init_trunk(rng)
        else:
            self._init_encoder(rng)
        feat = spec.embedding_dim
        if spec.uses_lstm:
            hdim = spec.hidden_size
            self._param("lstm.w_ih", _xavier(rng, (4 * hdim, feat), feat, 4 * hdim))
            self._param("lstm.w_hh", _xavier(rng, (4 * hdim, hdim), hdim, 4 * hdim))
            bias = np.zeros(4 * hdim)
            bias[hdim:2 * hdim] = 1.0  # forget gate
            self._param("lstm.bias", bias)
            feat = hdim
        for k in range(spec.heads):
            out = spec.head_outputs
            self._param(f"head{k}.weight", _xavier(rng, (out, feat), feat, out))
            self._param(f"head{k}.bias", np.zeros(out))

    def _param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _batchnorm(self, prefix: str, width: int) -> None:
        self._param(f"{prefix}.gamma", np.ones(width))
        self._param(f"{prefix}.beta", np.zeros(width))
        self.buffers[f"{prefix}.running_mean"] = np.zeros(width)
        self.buffers[f"{prefix}.running_var"] = np.ones(width)

    def _init_trunk(self, rng: np.random.Generator) -> None:
        for bi, branch in enumerate(self.spec.trunk.branches):
            cin = 1
            k = branch.kernel
            for li, cout in enumerate(branch.channels):
                prefix = f"trunk.b{bi}.conv{li}"
                self._param(f"{prefix}.weight", _xavier(rng, (cout, cin, k, k), cin * k * k, cout * k * k))
                self._param(f"{prefix}.bias", np.zeros(cout))
                if self.spec.use_batchnorm:
                    self._batchnorm(f"trunk.b{bi}.bn{li}", cout)
                cin = cout

    def _init_encoder(self, rng: np.random.Generator) -> None:
        spec = self.spec
        self.buffers["input.mean"] = np.zeros(spec.n_features)
        self.buffers["input.std"] = np.ones(spec.n_features)
        dims = (spec.n_features, spec.encoder_hidden, spec.embedding_dim)
        for li, (a, b) in enumerate(zip(dims, dims[1:])):
            self._param(f"encoder.fc{li}.weight", _xavier(rng, (b, a), a, b))
            self._param(f"encoder.fc{li}.bias", np.zeros(b))
            if spec.use_batchnorm:
                self._batchnorm(f"encoder.bn{li}", b)

    def _bn(self, x: Tensor, prefix: str, training: bool, layout: str = "NCHW") -> Tensor:
        return F.batch_norm(
            x,
            self.params[f"{prefix}.gamma"],
            self.params[f"{prefix}.beta"],
            self.buffers[f"{prefix}.running_mean"],
            self.buffers[f"{prefix}.running_var"],
            training,
            layout=layout,
        )

    # ----- embedding of single windows -----
    def embed(self, windows: np.ndarray, training: bool = False) -> Tensor:
        """Embed independent windows: (N, H, W) spectrograms or (N, F) functionals."""
        windows = np.asarray(windows, dtype=np.float64)
        if self.spec.uses_spectrogram:
            if windows.ndim != 3 or windows.shape[1:] != tuple(self.spec.trunk.input_shape):
                raise ShapeMismatch(
                    f"expected spectrograms of shape (N, {self.spec.trunk.input_shape[0]}, "
                    f"{self.spec.trunk.input_shape[1]}), got {windows.shape}"
                )
            return self._trunk(Tensor(windows[:, :, :, None]), training)
        if windows.ndim != 2 or windows.shape[1] != self.spec.n_features:
            raise DimensionMismatch(
                f"expected feature vectors of length {self.spec.n_features}, got shape {windows.shape}"
            )
        return self._encoder(windows, training)

    def _trunk(self, x: Tensor, training: bool) -> Tensor:
        pooled = []
        for bi, branch in enumerate(self.spec.trunk.branches):
            h = x
            for li in range(branch.depth):
                prefix = f"trunk.b{bi}.conv{li}"
                h = F.conv2d(h, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"],
                             stride=STRIDE, padding=branch.pad, layout="NHWC")
                if self.spec.use_batchnorm:
                    h = self._bn(h, f"trunk.b{bi}.bn{li}", training, layout="NHWC")
                h = relu(h)
            pooled.append(F.global_avg_pool(h, layout="NHWC"))
        return concat(pooled, axis=-1)

    def _encoder(self, x: np.ndarray, training: bool) -> Tensor:
        h = Tensor((x - self.buffers["input.mean"]) / self.buffers["input.std"])
        for li in range(2):
            h = linear(h, self.params[f"encoder.fc{li}.weight"], self.params[f"encoder.fc{li}.bias"])
            if self.spec.use_batchnorm:
                h = self._bn(h, f"encoder.bn{li}", training)
            h = relu(h)
        return h

    # ----- full forward -----
    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
        index: np.ndarray | None = None,
    ) -> list[Tensor]:
        """Per-head outputs: log-probabilities (B, 2) or regression values (B, 1).

        CNN kinds take x of shape (B, H, W) or (B, F). CNN-LSTM kinds take
        (B, T, H, W) or (B, T, F); alternatively pass unique windows as ``x``
        and an integer ``index`` of shape (B, T) selecting them, so windows
        shared between overlapping sequences are embedded once.
        """
        spec = self.spec
        x = np.asarray(x, dtype=np.float64)
        if spec.uses_lstm:
            if index is None:
                if x.ndim < 2 or x.shape[1] != spec.seq_len:
                    got = x.shape[1] if x.ndim >= 2 else None
                    raise BadSequenceLength(f"expected {spec.seq_len} windows per sample, got {got}")
                b = x.shape[0]
                windows = x.reshape((b * spec.seq_len,) + x.shape[2:])
                index = np.arange(b * spec.seq_len).reshape(b, spec.seq_len)
            else:
                index = np.asarray(index, dtype=np.intp)
                if index.ndim != 2 or index.shape[1] != spec.seq_len:
                    raise BadSequenceLength(f"index must have shape (B, {spec.seq_len}), got {index.shape}")
                windows = x
            emb = self.embed(windows, training)
            emb = F.dropout(emb, spec.dropout_rate, rng, training)
            b = index.shape[0]
            steps = reshape(gather_rows(emb, index), (b, spec.seq_len, emb.shape[1]))
            hdim = spec.hidden_size
            h = Tensor(np.zeros((b, hdim)))
            c = Tensor(np.zeros((b, hdim)))
            for t in range(spec.seq_len):
                h, c = F.lstm_step(
                    getitem(steps, (slice(None), t, slice(None))), h, c,
                    self.params["lstm.w_ih"], self.params["lstm.w_hh"], self.params["lstm.bias"],
                )
            feat = h
        else:
            feat = self.embed(x, training)
        feat = F.dropout(feat, spec.dropout_rate, rng, training)
        outs = []
        for k in range(spec.heads):
            z = linear(feat, self.params[f"head{k}.weight"], self.params[f"head{k}.bias"])
            outs.append(F.log_softmax(z) if spec.task == "classify" else z)
        return outs

    def predict(self, x: np.ndarray, index: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode outputs as arrays: (B, heads, 2) probabilities or (B, heads) values."""
        outs = self.forward(x, training=False, index=index)
        if self.spec.task == "classify":
            return np.stack([np.exp(o.data) for o in outs], axis=1)
        return np.stack([o.data[:, 0] for o in outs], axis=1)

    # ----- state -----
    def state(self) -> dict[str, np.ndarray]:
        out = {n: p.data.copy() for n, p in self.params.items()}
        out.update({n: b.copy() for n, b in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise CheckpointError(f"state mismatch; missing {missing}, unexpected {extra}")
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise CheckpointError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=np.float64)
        for n in self.buffers:
            self.buffers[n] = np.array(state[n], dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def round_state(state: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Round every array through float32, the checkpoint storage precision."""
    return {n: a.astype(np.float32).astype(np.float64) for n, a in state.items()}


def model_from_state(spec: ModelSpec, state: dict[str, np.ndarray]) -> ItemModel:
    model = ItemModel(spec)
    model.load_state(state)
    return model


def save_model(path: str | Path, spec: ModelSpec, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    save_checkpoint(path, state, spec.kind, spec.to_dict(), meta)


def load_model(path: str | Path) -> tuple[ItemModel, dict]:
    tensors, header = load_checkpoint(path)
    spec = ModelSpec.from_dict(header["model_spec"])
    if spec.kind != header["model_kind"]:
        raise CheckpointError(f"header kind {header['model_kind']!r} disagrees with spec {spec.kind!r}")
    return model_from_state(spec, tensors), header


def _as_window(spectrogram) -> np.ndarray:
    if isinstance(spectrogram, LogMelSpectrogram):
        return spectrogram.values
    return np.asarray(spectrogram, dtype=np.float64)


def _sequence_array(seq) -> np.ndarray:
    if isinstance(seq, SegmentSequence):
        return seq.stacked()
    return np.asarray(seq, dtype=np.float64)


def cnn_embed(spectrogram, model: ItemModel) -> np.ndarray:
    """Embedding vector of one spectrogram."""
    return model.embed(_as_window(spectrogram)[None]).data[0]


def cnn_forward(spectrogram, model: ItemModel) -> tuple[float, float]:
    """(p_absent, p_present) for one spectrogram under a single-head CNN."""
    if model.spec.kind != "spec_cnn" or model.spec.task != "classify":
        raise ValueError("cnn_forward needs a spec_cnn classification model")
    p = model.predict(_as_window(spectrogram)[None])[0, 0]
    return float(p[0]), float(p[1])


def cnn_lstm_forward(seq, model: ItemModel):
    """(p_absent, p_present), or a scalar for regression, for one 10-window sequence."""
    if model.spec.kind != "spec_cnn_lstm":
        raise ValueError("cnn_lstm_forward needs a spec_cnn_lstm model")
    arr = _sequence_array(seq)
    if arr.ndim != 3 or arr.shape[0] != model.spec.seq_len:
        raise BadSequenceLength(f"expected {model.spec.seq_len} spectrograms, got {arr.shape[0] if arr.ndim else 0}")
    out = model.predict(arr[None])[0, 0]
    if model.spec.task == "regress":
        return float(out)
    return float(out[0]), float(out[1])


def egemaps_forward(window_vectors, model: ItemModel):
    """(p_absent, p_present) for one sample of functional vectors.

    CNN variant: a single vector (F,) or (1, F). CNN-LSTM variant: (T, F).
    """
    if model.spec.uses_spectrogram:
        raise ValueError("egemaps_forward needs an egemaps model")
    arr = np.asarray(window_vectors, dtype=np.float64)
    if model.spec.uses_lstm:
        if arr.ndim != 2 or arr.shape[0] != model.spec.seq_len:
            raise BadSequenceLength(f"expected {model.spec.seq_len} vectors, got shape {arr.shape}")
        sample = arr[None]
    else:
        sample = arr.reshape(1, -1) if arr.ndim == 1 else arr
        if sample.shape[0] != 1:
            raise ShapeMismatch(f"the CNN variant takes one vector, got shape {arr.shape}")
    out = model.predict(sample)[0, 0]
    if model.spec.task == "regress":
        return float(out)
    return float(out[0]), float(out[1])


def multitask_forward(sample, model: ItemModel) -> list[tuple[float, float]]:
    """One (p_absent, p_present) pair per head."""
    if model.spec.task != "classify":
        raise ValueError("multitask_forward needs a classification model")
    if model.spec.uses_spectrogram and not model.spec.uses_lstm:
        arr = _as_window(sample)[None]
    elif model.spec.uses_spectrogram:
        arr = _sequence_array(sample)[None]
    else:
        arr = np.asarray(sample, dtype=np.float64)
        arr = arr[None] if model.spec.uses_lstm else arr.reshape(1, -1)
    probs = model.predict(arr)[0]
    return [(float(p[0]), float(p[1])) for p in probs]


def with_hyperparams(spec: ModelSpec, use_batchnorm: bool, dropout_rate: float) -> ModelSpec:
    return replace(spec, use_batchnorm=use_batchnorm, dropout_rate=dropout_rate)
