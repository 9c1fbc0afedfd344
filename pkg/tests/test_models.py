from __future__ import annotations

import numpy as np
import pytest

from conftest import TINY_TRUNK, tiny_spec
from itemvoice import models
from itemvoice.autodiff import make_rng, mean_of, mse_loss, nll_loss
from itemvoice.errors import BadSequenceLength, DimensionMismatch, ShapeMismatch
from itemvoice.models import (
    BranchConfig,
    CnnTrunkConfig,
    ItemModel,
    ModelSpec,
    cnn_embed,
    cnn_forward,
    cnn_lstm_forward,
    egemaps_forward,
    load_model,
    multitask_forward,
    round_state,
    save_model,
)
from oracles import relative_error, sample_indices

SEEDS = range(20)
GRAD_TOL = 1e-4


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _zero_biases(model: ItemModel) -> None:
    for name, p in model.params.items():
        if name.endswith(".bias"):
            p.data[...] = 0.0


# ----- structure -----
def test_default_constants():
    spec = ModelSpec()
    assert spec.embedding_dim == 156
    assert spec.hidden_size == 64 and spec.seq_len == 10
    assert spec.trunk.input_shape == (200, 64)
    assert [b.kernel for b in spec.trunk.branches] == [3, 5, 7]
    assert all(b.channels[-1] == 52 for b in spec.trunk.branches)


def test_trunk_needs_three_branches():
    with pytest.raises(ValueError):
        CnnTrunkConfig(branches=(BranchConfig(3), BranchConfig(5)))


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(kind="rnn")
    with pytest.raises(ValueError):
        ModelSpec(task="rank")
    with pytest.raises(ValueError):
        ModelSpec(dropout_rate=1.0)


def test_spec_dict_round_trip():
    spec = tiny_spec(use_batchnorm=True, dropout_rate=0.25, heads=3)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_embedding_length_full_size():
    rng = np.random.default_rng(0)
    model = ItemModel(ModelSpec(kind="spec_cnn"), seed=0)
    emb = cnn_embed(rng.normal(size=(200, 64)), model)
    assert emb.shape == (156,)


def test_zero_spectrogram_zero_embedding():
    model = ItemModel(ModelSpec(kind="spec_cnn"), seed=1)
    _zero_biases(model)
    np.testing.assert_array_equal(cnn_embed(np.zeros((200, 64)), model), 0.0)


def test_embed_shape_mismatch():
    model = ItemModel(tiny_spec("spec_cnn"))
    with pytest.raises(ShapeMismatch):
        cnn_embed(np.zeros((8, 7)), model)


def test_branch_permutation_permutes_blocks():
    a = CnnTrunkConfig(
        branches=(BranchConfig(3, (2, 3)), BranchConfig(5, (2, 4)), BranchConfig(7, (2, 5))),
        input_shape=(8, 8),
    )
    b = CnnTrunkConfig(branches=(a.branches[1], a.branches[0], a.branches[2]), input_shape=(8, 8))
    ma = ItemModel(ModelSpec(kind="spec_cnn", trunk=a), seed=2)
    mb = ItemModel(ModelSpec(kind="spec_cnn", trunk=b), seed=3)
    swap = {"b0": "b1", "b1": "b0", "b2": "b2"}
    for name, p in mb.params.items():
        if name.startswith("trunk."):
            _, bi, rest = name.split(".", 2)
            p.data = ma.params[f"trunk.{swap[bi]}.{rest}"].data.copy()
    x = np.random.default_rng(4).normal(size=(8, 8))
    ea = cnn_embed(x, ma)
    eb = cnn_embed(x, mb)
    assert ea.shape == eb.shape == (12,)
    np.testing.assert_array_equal(eb, np.concatenate([ea[3:7], ea[:3], ea[7:]]))


# ----- CNN head -----
def test_zero_head_is_uniform():
    model = ItemModel(tiny_spec("spec_cnn"), seed=5)
    model.params["head0.weight"].data[...] = 0.0
    p = cnn_forward(np.random.default_rng(0).normal(size=(8, 8)), model)
    assert p == (0.5, 0.5)


def test_probabilities_sum_to_one():
    model = ItemModel(tiny_spec("spec_cnn"), seed=6)
    rng = np.random.default_rng(6)
    for _ in range(100):
        pa, pp = cnn_forward(rng.normal(size=(8, 8)) * 10, model)
        assert abs(pa + pp - 1) < 1e-6 and pa >= 0 and pp >= 0


def test_valid_distribution_for_extreme_weights():
    model = ItemModel(tiny_spec("spec_cnn_lstm", heads=2), seed=7)
    rng = np.random.default_rng(7)
    for p in model.params.values():
        p.data = rng.normal(size=p.shape) * 100
    probs = model.predict(rng.normal(size=(5, 10, 8, 8)) * 100)
    assert np.all(np.isfinite(probs)) and np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_cnn_forward_deterministic():
    x = np.random.default_rng(8).normal(size=(8, 8))
    m1 = ItemModel(tiny_spec("spec_cnn"), seed=9)
    m2 = ItemModel(tiny_spec("spec_cnn"), seed=9)
    a = np.array(cnn_forward(x, m1))
    b = np.array(cnn_forward(x.copy(), m2))
    assert a.tobytes() == b.tobytes()


def test_cnn_forward_rejects_other_kinds():
    with pytest.raises(ValueError):
        cnn_forward(np.zeros((8, 8)), ItemModel(tiny_spec("spec_cnn_lstm")))


# ----- CNN-LSTM -----
def _lstm_reference(emb: np.ndarray, model: ItemModel, steps: int) -> np.ndarray:
    """Iterate the LSTM step map on a constant input with plain numpy."""
    w_ih = model.params["lstm.w_ih"].data
    w_hh = model.params["lstm.w_hh"].data
    bias = model.params["lstm.bias"].data
    n = model.spec.hidden_size
    h = np.zeros(n)
    c = np.zeros(n)
    for _ in range(steps):
        z = w_ih @ emb + w_hh @ h + bias
        i, f, g, o = _sigmoid(z[:n]), _sigmoid(z[n:2 * n]), np.tanh(z[2 * n:3 * n]), _sigmoid(z[3 * n:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def test_identical_windows_match_step_map():
    model = ItemModel(tiny_spec(), seed=10)
    x = np.random.default_rng(10).normal(size=(8, 8))
    emb = cnn_embed(x, model)
    h = _lstm_reference(emb, model, 10)
    expected = _softmax(model.params["head0.weight"].data @ h + model.params["head0.bias"].data)
    got = cnn_lstm_forward(np.stack([x] * 10), model)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_saturated_gates_reach_fixed_point():
    # input gate open, forget gate shut, output open, no recurrence:
    # h = tanh(tanh(W_g e + b_g)) after every step, so 10 steps equal one.
    model = ItemModel(tiny_spec(), seed=11)
    n = model.spec.hidden_size
    model.params["lstm.w_hh"].data[...] = 0.0
    bias = model.params["lstm.bias"].data
    bias[:n], bias[n:2 * n], bias[3 * n:] = 50.0, -50.0, 50.0
    for gate in (slice(0, n), slice(n, 2 * n), slice(3 * n, 4 * n)):
        model.params["lstm.w_ih"].data[gate] = 0.0
    x = np.random.default_rng(11).normal(size=(8, 8))
    emb = cnn_embed(x, model)
    h_one = np.tanh(np.tanh(model.params["lstm.w_ih"].data[2 * n:3 * n] @ emb + bias[2 * n:3 * n]))
    np.testing.assert_allclose(_lstm_reference(emb, model, 10), h_one, atol=1e-15)
    expected = _softmax(model.params["head0.weight"].data @ h_one + model.params["head0.bias"].data)
    np.testing.assert_allclose(cnn_lstm_forward(np.stack([x] * 10), model), expected, atol=1e-12)


def test_nine_windows_rejected():
    model = ItemModel(tiny_spec(), seed=12)
    with pytest.raises(BadSequenceLength):
        cnn_lstm_forward(np.zeros((9, 8, 8)), model)
    with pytest.raises(BadSequenceLength):
        model.forward(np.zeros((2, 9, 8, 8)))


def test_lstm_output_sums_to_one():
    model = ItemModel(tiny_spec(), seed=13)
    pa, pp = cnn_lstm_forward(np.random.default_rng(13).normal(size=(10, 8, 8)), model)
    assert abs(pa + pp - 1) < 1e-6


def test_regression_head_is_scalar():
    model = ItemModel(tiny_spec(task="regress"), seed=14)
    out = cnn_lstm_forward(np.random.default_rng(14).normal(size=(10, 8, 8)), model)
    assert isinstance(out, float)


def test_weight_sharing_across_steps():
    model = ItemModel(tiny_spec(), seed=15)
    windows = np.random.default_rng(15).normal(size=(10, 8, 8))
    before = model.embed(windows).data
    assert not any(".step" in n or n.startswith("trunk.t") for n in model.params)
    model.params["trunk.b1.conv0.weight"].data[0, 0, 2, 2] += 0.5
    after = model.embed(windows).data
    assert np.all(np.any(after != before, axis=1))


def test_shared_window_index_matches_dense_input():
    model = ItemModel(tiny_spec(), seed=16)
    unique = np.random.default_rng(16).normal(size=(12, 8, 8))
    index = np.stack([np.arange(k, k + 10) for k in range(3)])
    dense = unique[index]
    np.testing.assert_array_equal(model.predict(unique, index=index), model.predict(dense))


# ----- eGeMAPS -----
def test_egemaps_zero_input_is_uniform():
    for kind in ("egemaps_cnn", "egemaps_cnn_lstm"):
        model = ItemModel(ModelSpec(kind=kind), seed=17)
        n = 10 if model.spec.uses_lstm else 1
        assert egemaps_forward(np.zeros((n, 88)), model) == (0.5, 0.5)


def test_egemaps_embedding_parity():
    model = ItemModel(ModelSpec(kind="egemaps_cnn"), seed=18)
    emb = model.embed(np.random.default_rng(18).normal(size=(3, 88)))
    assert emb.shape == (3, 156)


def test_egemaps_rejects_bad_shapes():
    model = ItemModel(ModelSpec(kind="egemaps_cnn_lstm"), seed=19)
    with pytest.raises(BadSequenceLength):
        egemaps_forward(np.zeros((9, 88)), model)
    with pytest.raises(DimensionMismatch):
        egemaps_forward(np.zeros((10, 87)), model)
    cnn = ItemModel(ModelSpec(kind="egemaps_cnn"), seed=19)
    with pytest.raises(DimensionMismatch):
        egemaps_forward(np.zeros(87), cnn)


# ----- multi-task -----
@pytest.mark.parametrize("n_items", [10, 8])
def test_multitask_pair_count(n_items):
    model = ItemModel(tiny_spec(heads=n_items), seed=20)
    pairs = multitask_forward(np.random.default_rng(20).normal(size=(10, 8, 8)), model)
    assert len(pairs) == n_items
    for pa, pp in pairs:
        assert abs(pa + pp - 1) < 1e-6


def test_multitask_zero_heads():
    model = ItemModel(tiny_spec("egemaps_cnn", heads=10), seed=21)
    for k in range(10):
        model.params[f"head{k}.weight"].data[...] = 0.0
    assert multitask_forward(np.ones(6), model) == [(0.5, 0.5)] * 10


# ----- checkpoints -----
def test_checkpoint_round_trip(tmp_path):
    spec = tiny_spec(use_batchnorm=True, heads=2)
    model = ItemModel(spec, seed=22)
    x = np.random.default_rng(22).normal(size=(3, 10, 8, 8))
    model.forward(x, training=True)  # move the running statistics
    save_model(tmp_path / "m.ivck", spec, model.state(), {"note": "x"})
    back, header = load_model(tmp_path / "m.ivck")
    assert back.spec == spec and header["meta"]["note"] == "x"
    reference = ItemModel(spec)
    reference.load_state(round_state(model.state()))
    assert back.predict(x).tobytes() == reference.predict(x).tobytes()


# ----- end-to-end gradient checks -----
def _loss(model: ItemModel, x, targets, seed: int):
    outs = model.forward(x, training=True, rng=make_rng(seed))
    if model.spec.task == "classify":
        return mean_of([nll_loss(o, targets[:, k]) for k, o in enumerate(outs)])
    return mean_of([mse_loss(o, targets[:, k:k + 1].astype(float)) for k, o in enumerate(outs)])


class _KinkRecorder:
    """Wraps the model's ReLU to record which pre-activations are positive."""

    def __init__(self, monkeypatch):
        self.masks: list[np.ndarray] = []
        inner = models.relu

        def relu(x):
            self.masks.append(x.data > 0)
            return inner(x)

        monkeypatch.setattr(models, "relu", relu)

    def pattern(self, f):
        self.masks = []
        value = f()
        return value, [m.copy() for m in self.masks]


def model_gradcheck(spec: ModelSpec, seed: int, monkeypatch, per_tensor: int = 6) -> float:
    """Worst relative error over sampled coordinates of every parameter tensor.

    Coordinates whose +-h probes land on different sides of a ReLU kink are
    replaced by fresh ones; central differences are meaningless across a kink.
    """
    rng = np.random.default_rng(seed)
    model = ItemModel(spec, seed=seed)
    for name, p in model.params.items():
        if name.endswith(".bias") or name.endswith(".beta"):
            p.data = rng.normal(size=p.shape) * 0.1
    batch = 3
    if spec.uses_spectrogram:
        shape = (batch, 10, 8, 8) if spec.uses_lstm else (batch, 8, 8)
    else:
        shape = (batch, 10, spec.n_features) if spec.uses_lstm else (batch, spec.n_features)
    x = rng.normal(size=shape)
    targets = rng.integers(0, 2, size=(batch, spec.heads))
    if spec.task == "regress":
        targets = rng.integers(0, 7, size=(batch, spec.heads))

    recorder = _KinkRecorder(monkeypatch)
    loss = _loss(model, x, targets, seed)
    loss.backward()

    def value():
        return float(_loss(model, x, targets, seed).data)

    def probe(arr, i, h=1e-5):
        old = arr[i]
        arr[i] = old + h
        up, m_up = recorder.pattern(value)
        arr[i] = old - h
        down, m_down = recorder.pattern(value)
        arr[i] = old
        smooth = all(np.array_equal(a, b) for a, b in zip(m_up, m_down))
        return (up - down) / (2 * h), smooth

    worst = 0.0
    for name, p in model.params.items():
        analytic, numeric = [], []
        for i in sample_indices(p.shape, p.size, rng):
            fd, smooth = probe(p.data, i)
            if smooth:
                analytic.append(p.grad[i])
                numeric.append(fd)
            if len(numeric) == per_tensor:
                break
        assert numeric, f"{name}: every coordinate straddles a kink"
        analytic, numeric = np.array(analytic), np.array(numeric)
        if max(np.abs(analytic).max(), np.abs(numeric).max()) < 1e-8:
            # e.g. a bias feeding batch norm: the true gradient is exactly 0
            continue
        err = relative_error(analytic, numeric)
        assert err < GRAD_TOL, f"{name}: relative error {err:.2e} (seed {seed})"
        worst = max(worst, err)
    return worst


GRAD_SPECS = {
    "spec_cnn": tiny_spec("spec_cnn"),
    "spec_cnn_lstm": tiny_spec("spec_cnn_lstm"),
    "spec_cnn_lstm_bn_dropout": tiny_spec("spec_cnn_lstm", use_batchnorm=True, dropout_rate=0.3),
    "spec_cnn_multitask": tiny_spec("spec_cnn", heads=3),
    "egemaps_cnn_lstm_bn": tiny_spec("egemaps_cnn_lstm", use_batchnorm=True, dropout_rate=0.2),
    "egemaps_cnn_regress": tiny_spec("egemaps_cnn", task="regress"),
}


@pytest.mark.parametrize("name", ["spec_cnn", "spec_cnn_lstm"])
@pytest.mark.parametrize("seed", SEEDS)
def test_end_to_end_gradients(name, seed, monkeypatch):
    assert model_gradcheck(GRAD_SPECS[name], seed, monkeypatch) < GRAD_TOL


@pytest.mark.parametrize("name", [k for k in GRAD_SPECS if k not in ("spec_cnn", "spec_cnn_lstm")])
@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients_variants(name, seed, monkeypatch):
    assert model_gradcheck(GRAD_SPECS[name], seed, monkeypatch) < GRAD_TOL


def test_tiny_trunk_is_tiny():
    assert TINY_TRUNK.input_shape == (8, 8)
    assert ItemModel(tiny_spec()).n_parameters() < 2000
