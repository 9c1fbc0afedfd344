from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import noisy_dataset, tiny_spec
from itemvoice import training
from itemvoice.autodiff import AdamConfig
from itemvoice.errors import EmptySplit, SingleClassTrainSplit
from itemvoice.models import ItemModel, ModelSpec, load_model, round_state
from itemvoice.pipeline import Dataset, Target, n_samples, score_model
from itemvoice.training import (
    SearchSpace,
    TrainConfig,
    random_search,
    train_depression_model,
    train_item,
    train_multitask,
    training_log_csv,
)

EGEMAPS = ModelSpec(kind="egemaps_cnn_lstm")
SMALL = tiny_spec("egemaps_cnn_lstm", hidden_size=6, encoder_hidden=8)
FAST = TrainConfig(max_epochs=4, batch_size=16, stop_at_perfect=False)


def test_config_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 32 and cfg.max_epochs == 100
    assert (cfg.adam.alpha, cfg.adam.beta1, cfg.adam.beta2) == (0.0005, 0.9, 0.999)
    space = SearchSpace()
    assert space.use_batchnorm == (True, False)
    assert space.dropout_rate == (0.0, 0.1, 0.3, 0.5)
    assert space.l2_lambda == (0.0, 1e-5, 1e-4, 1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(n_search_trials=0)
    with pytest.raises(ValueError):
        SearchSpace(dropout_rate=())


def test_zero_learning_rate_is_a_no_op():
    ds = noisy_dataset()
    cfg = replace(FAST, adam=AdamConfig(alpha=0.0), max_epochs=3)
    result = train_item(SMALL, 10, ds, cfg)
    init = round_state(ItemModel(SMALL, seed=cfg.seed).state())
    for name in result.model().params:
        np.testing.assert_array_equal(result.state[name], init[name])
    fs = [r.val_weighted_f for r in result.training_log]
    assert fs == [fs[0]] * 3
    assert result.best_epoch == 1


def test_same_seed_is_bitwise_identical(tmp_path):
    ds = noisy_dataset()
    runs = []
    for k in range(2):
        result = train_item(SMALL, 10, ds, FAST, {"use_batchnorm": True, "dropout_rate": 0.3, "l2_lambda": 1e-4})
        result.save(tmp_path / f"m{k}.ivck", tmp_path / f"m{k}.csv")
        runs.append(result)
    assert (tmp_path / "m0.ivck").read_bytes() == (tmp_path / "m1.ivck").read_bytes()
    assert (tmp_path / "m0.csv").read_bytes() == (tmp_path / "m1.csv").read_bytes()
    other = train_item(SMALL, 10, ds, replace(FAST, seed=1))
    assert any(not np.array_equal(other.state[n], runs[0].state[n]) for n in other.state)


def test_selected_f_re_evaluates(tmp_path):
    ds = noisy_dataset(overlap=0.9)
    result = train_item(SMALL, 10, ds, replace(FAST, max_epochs=6))
    assert result.validation_weighted_f == max(r.val_weighted_f for r in result.training_log)
    best = [r.epoch for r in result.training_log if r.val_weighted_f == result.validation_weighted_f]
    assert result.best_epoch == best[0]
    again = score_model(result.model(), ds.split("val"), Target.item(10), ds.scale, "soft")
    assert abs(again.weighted - result.validation_weighted_f) < 1e-9
    result.save(tmp_path / "m.ivck")
    loaded, header = load_model(tmp_path / "m.ivck")
    from_disk = score_model(loaded, ds.split("val"), Target.item(10), ds.scale, "soft")
    assert abs(from_disk.weighted - result.validation_weighted_f) < 1e-9
    assert header["meta"]["validation_weighted_f"] == result.validation_weighted_f


def test_search_single_trial_equals_train_item():
    ds = noisy_dataset()
    cfg = replace(FAST, n_search_trials=1, max_epochs=2)
    best, trials = random_search(SMALL, 10, ds, cfg)
    hp = SearchSpace().sample(training._stream(cfg.seed, 2))
    direct = train_item(SMALL, 10, ds, cfg, hp)
    assert len(trials) == 1 and best.hyperparams == hp
    for name in direct.state:
        assert direct.state[name].tobytes() == best.state[name].tobytes()


def test_search_best_of_three_and_reproducible():
    ds = noisy_dataset(overlap=0.9)
    cfg = replace(FAST, n_search_trials=3, max_epochs=3)
    best, trials = random_search(SMALL, 10, ds, cfg)
    assert all(best.validation_weighted_f >= t.validation_weighted_f for t in trials)
    top = max(t.validation_weighted_f for t in trials)
    assert best.trial == min(t.trial for t in trials if t.validation_weighted_f == top)
    _, again = random_search(SMALL, 10, ds, cfg)
    assert [t.hyperparams for t in again] == [t.hyperparams for t in trials]


def test_empty_splits():
    ds = noisy_dataset()
    no_val = Dataset(ds.scale, ds.feature_kind, tuple(r for r in ds.recordings if r.split != "val"))
    with pytest.raises(EmptySplit):
        train_item(SMALL, 10, no_val, FAST)
    no_train = Dataset(ds.scale, ds.feature_kind, tuple(r for r in ds.recordings if r.split != "train"))
    with pytest.raises(EmptySplit):
        train_item(SMALL, 10, no_train, FAST)


def test_single_class_training_split_is_flagged():
    ds = noisy_dataset()
    healthy = Dataset(
        ds.scale, ds.feature_kind,
        tuple(r for r in ds.recordings if r.split != "train" or not r.labels.depressed),
    )
    with pytest.warns(SingleClassTrainSplit):
        result = train_depression_model(SMALL, healthy, replace(FAST, max_epochs=1))
    assert result.degenerate and result.meta()["degenerate"]
    assert not train_item(SMALL, 10, ds, replace(FAST, max_epochs=1)).degenerate


def test_segments_inherit_recording_label(monkeypatch):
    ds = noisy_dataset()
    train = ds.split("train")
    seen: list[tuple[list, np.ndarray]] = []
    real_assemble, real_nll = training.assemble, training.nll_loss
    batches: list[list] = []

    def assemble(recs, samples, uses_lstm):
        batches.append(list(samples))
        return real_assemble(recs, samples, uses_lstm)

    def nll(log_probs, targets, weights=None):
        seen.append((batches[-1], np.asarray(targets)))
        return real_nll(log_probs, targets, weights)

    monkeypatch.setattr(training, "assemble", assemble)
    monkeypatch.setattr(training, "nll_loss", nll)
    train_item(SMALL, 10, ds, replace(FAST, max_epochs=1))
    pairs = [(r, j, y) for samples, ys in seen for (r, j), y in zip(samples, ys)]
    assert len(pairs) == sum(n_samples(rec, True) for rec in train)
    assert len({(r, j) for r, j, _ in pairs}) == len(pairs)
    for r, _, y in pairs:
        assert y == int(train[r].labels.item(10).present)


def test_loss_mostly_decreases_on_synth(synth_egemaps):
    result = train_item(EGEMAPS, 10, synth_egemaps, TrainConfig(max_epochs=6, stop_at_perfect=False))
    losses = [r.train_loss for r in result.training_log]
    steps = np.diff(losses)
    assert len(steps) == 5 and np.sum(steps <= 0) >= 4, losses


def test_synth_item_and_depression(synth_egemaps):
    item = train_item(EGEMAPS, 10, synth_egemaps, TrainConfig(max_epochs=20))
    assert item.validation_weighted_f >= 0.95
    dep = train_depression_model(EGEMAPS, synth_egemaps, TrainConfig(max_epochs=20))
    assert dep.validation_weighted_f >= 0.9 and dep.target == Target("depression")


def test_stop_at_perfect_keeps_selection(synth_egemaps):
    early = train_item(EGEMAPS, 10, synth_egemaps, TrainConfig(max_epochs=5))
    full = train_item(EGEMAPS, 10, synth_egemaps, TrainConfig(max_epochs=5, stop_at_perfect=False))
    assert early.best_epoch == full.best_epoch
    assert len(early.training_log) <= len(full.training_log)
    for name in early.state:
        assert early.state[name].tobytes() == full.state[name].tobytes()


def test_class_weights_change_training():
    ds = noisy_dataset()
    # unbalance: drop half the depressed training recordings
    keep = [r for k, r in enumerate(ds.recordings) if not (r.split == "train" and r.labels.depressed and k % 4 == 0)]
    ds = Dataset(ds.scale, ds.feature_kind, tuple(keep))
    plain = train_item(SMALL, 10, ds, replace(FAST, max_epochs=1))
    weighted = train_item(SMALL, 10, ds, replace(FAST, max_epochs=1, class_weights=True))
    assert plain.training_log[0].train_loss != weighted.training_log[0].train_loss


def test_multitask_has_a_head_per_item():
    ds = noisy_dataset()
    result = train_multitask(SMALL, ds, replace(FAST, max_epochs=2))
    assert result.spec.heads == 10 and result.target == Target("all_items")
    assert set(result.validation.per_head) == {str(i) for i in range(1, 11)}
    probs = result.model().predict(ds.split("val")[0].windows[None, :10])
    assert probs.shape == (1, 10, 2)


def test_regression_path():
    ds = noisy_dataset()
    spec = replace(SMALL, task="regress")
    result = train_item(spec, 10, ds, replace(FAST, max_epochs=2))
    assert 0 <= result.validation_weighted_f <= 1
    out = result.model().predict(ds.split("val")[0].windows[None, :10])
    assert out.shape == (1, 1)


def test_training_log_csv():
    ds = noisy_dataset()
    result = train_item(SMALL, 10, ds, replace(FAST, max_epochs=2))
    lines = training_log_csv(result.training_log).strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_weighted_f,val_f_absent,val_f_present"
    assert len(lines) == 3 and lines[1].startswith("1,")
