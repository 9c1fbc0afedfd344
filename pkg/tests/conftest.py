from __future__ import annotations

import pytest

from itemvoice.models import BranchConfig, CnnTrunkConfig, ModelSpec

# 8x8 "spectrograms" and two tiny conv layers per branch keep finite
# differences over every parameter affordable.
TINY_TRUNK = CnnTrunkConfig(
    branches=(BranchConfig(3, (2, 3)), BranchConfig(5, (2, 3)), BranchConfig(7, (2, 3))),
    input_shape=(8, 8),
)


def tiny_spec(kind: str = "spec_cnn_lstm", **kw) -> ModelSpec:
    base = dict(kind=kind, trunk=TINY_TRUNK, hidden_size=4, n_features=6, encoder_hidden=5)
    base.update(kw)
    return ModelSpec(**base)


@pytest.fixture
def tiny():
    return tiny_spec


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """The default synthetic corpus (40 recordings x 20 s), generated once."""
    from itemvoice.synth import SynthConfig, generate

    out = tmp_path_factory.mktemp("synth")
    generate(out, SynthConfig())
    return out


@pytest.fixture(scope="session")
def synth_egemaps(synth_dir):
    from itemvoice.corpus import MADRS, group_functionals, import_functionals, parse_manifest
    from itemvoice.pipeline import build_dataset

    manifest = parse_manifest(synth_dir / "manifest.csv", MADRS)
    functionals = group_functionals(import_functionals(synth_dir / "functionals.csv"))
    return build_dataset(manifest, "egemaps", functionals=functionals)


def noisy_dataset(seed: int = 0, n_features: int = 6, n_windows: int = 14, overlap: float = 0.8):
    """Hand-built functional-vector corpus whose classes overlap, so F < 1.

    Even recordings are depressed with every MADRS item scored 2; odd
    recordings score 0. Splits: 12 train, 6 val, 6 test.
    """
    import numpy as np

    from itemvoice.corpus import MADRS, ItemLabel, RecordingLabels
    from itemvoice.pipeline import Dataset, RecordingData

    rng = np.random.default_rng(seed)
    recs = []
    for k in range(24):
        sick = k % 2 == 0
        score = 2 if sick else 0
        labels = RecordingLabels(
            tuple(ItemLabel(i, score, sick) for i in MADRS.item_indices), 10 * score, sick
        )
        shift = (1.0 - overlap) * (1 if sick else -1)
        windows = rng.normal(size=(n_windows, n_features)) + shift
        split = "train" if k < 12 else ("val" if k < 18 else "test")
        recs.append(RecordingData(f"R{k:02d}", f"S{k:02d}", split, windows, labels, 4.0 + n_windows - 1))
    return Dataset(MADRS, "egemaps", tuple(recs))


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
