"""Per-item training, random hyper-parameter search and best-epoch selection."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Adam, AdamConfig, mean_of, mse_loss, nll_loss
from .errors import EmptySplit, SingleClassTrainSplit
from .models import ItemModel, ModelSpec, round_state, save_model, with_hyperparams
from .pipeline import Dataset, RecordingData, SplitScores, Target, assemble, n_samples, score_model


@dataclass(frozen=True)
class SearchSpace:
    use_batchnorm: tuple[bool, ...] = (True, False)
    dropout_rate: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5)
    l2_lambda: tuple[float, ...] = (0.0, 1e-5, 1e-4, 1e-3)

    def __post_init__(self):
        for name in ("use_batchnorm", "dropout_rate", "l2_lambda"):
            if not getattr(self, name):
                raise ValueError(f"search dimension {name} is empty")

    def sample(self, rng: np.random.Generator) -> dict:
        return {
            "use_batchnorm": bool(self.use_batchnorm[rng.integers(len(self.use_batchnorm))]),
            "dropout_rate": float(self.dropout_rate[rng.integers(len(self.dropout_rate))]),
            "l2_lambda": float(self.l2_lambda[rng.integers(len(self.l2_lambda))]),
        }


@dataclass(frozen=True)
class TrainConfig:
    adam: AdamConfig = AdamConfig()
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    search_space: SearchSpace = SearchSpace()
    n_search_trials: int = 4
    voting: str = "soft"
    class_weights: bool = False
    # a perfect validation F cannot be beaten, and ties keep the earlier
    # epoch, so stopping there leaves the selected checkpoint unchanged
    stop_at_perfect: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.n_search_trials < 1:
            raise ValueError("n_search_trials must be >= 1")
        if self.voting not in ("hard", "soft"):
            raise ValueError(f"voting must be 'hard' or 'soft', got {self.voting!r}")


def _stream(seed: int, tag: int) -> np.random.Generator:
    """Independent PCG64 stream for one purpose (data order, search sampling)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


_DATA_STREAM = 1
_SEARCH_STREAM = 2


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_weighted_f: float
    val_f_absent: float
    val_f_present: float


LOG_COLUMNS = ["epoch", "train_loss", "val_weighted_f", "val_f_absent", "val_f_present"]


def training_log_csv(log: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in log:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_weighted_f), repr(r.val_f_absent), repr(r.val_f_present)])
    return buf.getvalue()


@dataclass
class TrainedItemModel:
    spec: ModelSpec
    target: Target
    state: dict[str, np.ndarray] = field(repr=False)
    hyperparams: dict
    validation_weighted_f: float
    validation: SplitScores
    best_epoch: int
    training_log: list[EpochRecord] = field(default_factory=list, repr=False)
    degenerate: bool = False
    trial: int | None = None

    @property
    def item_index(self) -> int | None:
        return self.target.item_index

    def model(self) -> ItemModel:
        m = ItemModel(self.spec)
        m.load_state(self.state)
        return m

    def meta(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "hyperparams": self.hyperparams,
            "validation_weighted_f": self.validation_weighted_f,
            "best_epoch": self.best_epoch,
            "degenerate": self.degenerate,
            "trial": self.trial,
        }

    def save(self, checkpoint: str | Path, log_path: str | Path | None = None) -> None:
        save_model(checkpoint, self.spec, self.state, self.meta())
        if log_path is not None:
            Path(log_path).write_text(training_log_csv(self.training_log), encoding="utf-8")


def _targets(recs: Sequence[RecordingData], target: Target, dataset: Dataset, task: str) -> np.ndarray:
    if task == "classify":
        return np.stack([target.present(r.labels, dataset.scale) for r in recs]).astype(np.intp)
    return np.stack([target.raw(r.labels, dataset.scale) for r in recs])


def _inverse_frequency(labels: np.ndarray) -> list[np.ndarray | None]:
    """Per head, class weights n / (2 n_c); None when a class is missing."""
    out = []
    for h in range(labels.shape[1]):
        counts = np.bincount(labels[:, h], minlength=2)
        out.append(labels.shape[0] / (2.0 * counts) if np.all(counts) else None)
    return out


def train_item(
    spec: ModelSpec,
    target: Target | int,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    hyperparams: dict | None = None,
) -> TrainedItemModel:
    """Train one model and return the epoch with the best validation weighted F.

    Every segment inherits its recording's label. ``hyperparams`` may set
    ``use_batchnorm``, ``dropout_rate`` and ``l2_lambda``; anything unset
    comes from ``spec`` and ``cfg.adam``.
    """
    if isinstance(target, int):
        target = Target.item(target)
    hp = {"use_batchnorm": spec.use_batchnorm, "dropout_rate": spec.dropout_rate, "l2_lambda": cfg.adam.l2_lambda}
    hp.update(hyperparams or {})
    spec = with_hyperparams(spec, hp["use_batchnorm"], hp["dropout_rate"])
    n_heads = target.n_heads(dataset.scale)
    if spec.heads != n_heads:
        spec = replace(spec, heads=n_heads)
    adam = replace(cfg.adam, l2_lambda=hp["l2_lambda"])

    train, val = dataset.split("train"), dataset.split("val")
    if not train:
        raise EmptySplit("training split is empty")
    if not val:
        raise EmptySplit("validation split is empty")

    rec_targets = _targets(train, target, dataset, spec.task)
    present = np.stack([target.present(r.labels, dataset.scale) for r in train])
    degenerate = bool(np.any(present.all(axis=0) | (~present).all(axis=0)))
    if degenerate:
        warnings.warn(f"{target}: every training recording has the same label", SingleClassTrainSplit, stacklevel=2)
    weights = _inverse_frequency(rec_targets) if cfg.class_weights and spec.task == "classify" else [None] * n_heads

    # every (recording, segment) pair; segments inherit the recording label
    samples = [(r, j) for r, rec in enumerate(train) for j in range(n_samples(rec, spec.uses_lstm, dataset.drop_last))]
    sample_rec = np.array([r for r, _ in samples], dtype=np.intp)

    model = ItemModel(spec, seed=cfg.seed)
    if not spec.uses_spectrogram:
        _fit_input_standardization(model, train)
    evaluator = ItemModel(spec, seed=cfg.seed)
    opt = Adam(model.params, adam)
    rng = _stream(cfg.seed, _DATA_STREAM)

    log: list[EpochRecord] = []
    best: tuple[float, int, dict, SplitScores] | None = None
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(samples))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            x, index = assemble(train, batch, spec.uses_lstm)
            y = rec_targets[sample_rec[order[lo:lo + cfg.batch_size]]]
            outs = model.forward(x, training=True, rng=rng, index=index)
            if spec.task == "classify":
                losses = [nll_loss(o, y[:, h], weights[h]) for h, o in enumerate(outs)]
            else:
                losses = [mse_loss(o, y[:, h:h + 1]) for h, o in enumerate(outs)]
            loss = losses[0] if len(losses) == 1 else mean_of(losses)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(batch)
            count += len(batch)

        snapshot = round_state(model.state())
        evaluator.load_state(snapshot)
        scores = score_model(evaluator, val, target, dataset.scale, cfg.voting, dataset.drop_last)
        log.append(EpochRecord(epoch, total / count, scores.weighted, scores.absent, scores.present))
        if best is None or scores.weighted > best[0]:
            best = (scores.weighted, epoch, snapshot, scores)
        if cfg.stop_at_perfect and best[0] >= 1.0:
            break

    f, epoch, state, scores = best
    return TrainedItemModel(spec, target, state, hp, f, scores, epoch, log, degenerate)


def _fit_input_standardization(model: ItemModel, train: Sequence[RecordingData]) -> None:
    """Store training-split feature mean/std as fixed input buffers."""
    x = np.concatenate([r.windows for r in train])
    std = x.std(axis=0)
    model.buffers["input.mean"] = x.mean(axis=0)
    model.buffers["input.std"] = np.where(std > 0, std, 1.0)


def random_search(
    spec: ModelSpec,
    target: Target | int,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[TrainedItemModel, list[TrainedItemModel]]:
    """Best of ``cfg.n_search_trials`` trials with uniformly sampled hyper-parameters.

    Trial configs come from their own seeded stream; every trial trains
    with ``cfg.seed`` so only the hyper-parameters differ. Ties keep the
    lower trial index. Returns (best, all trials).
    """
    rng = _stream(cfg.seed, _SEARCH_STREAM)
    trials = []
    for t in range(cfg.n_search_trials):
        hp = cfg.search_space.sample(rng)
        result = train_item(spec, target, dataset, cfg, hp)
        result.trial = t
        trials.append(result)
    best = trials[0]
    for result in trials[1:]:
        if result.validation_weighted_f > best.validation_weighted_f:
            best = result
    return best, trials


def train_depression_model(
    spec: ModelSpec,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    hyperparams: dict | None = None,
) -> TrainedItemModel:
    return train_item(spec, Target("depression"), dataset, cfg, hyperparams)


def train_multitask(
    spec: ModelSpec,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    hyperparams: dict | None = None,
) -> TrainedItemModel:
    """One shared model with a head per item; loss is the mean of the per-item
    losses and selection uses the mean weighted F over items."""
    return train_item(spec, Target("all_items"), dataset, cfg, hyperparams)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
