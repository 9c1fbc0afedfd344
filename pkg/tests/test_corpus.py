from __future__ import annotations

import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itemvoice.corpus import (
    MADRS,
    PHQ8,
    Manifest,
    ManifestRow,
    binarize_labels,
    get_scale,
    group_functionals,
    import_functionals,
    load_wav,
    manifest_columns,
    parse_manifest,
    write_functionals,
    write_manifest,
    write_wav,
)
from itemvoice.errors import (
    CorruptFile,
    DimensionMismatch,
    MissingScore,
    NonFiniteValue,
    ScoreOutOfRange,
    SplitLeak,
    TotalMismatch,
    UnsupportedFormat,
)


def _raw_wav(path, data: bytes, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(data)


def test_scales():
    assert MADRS.n_items == 10 and MADRS.item_score_range == (0, 6)
    assert PHQ8.n_items == 8 and PHQ8.item_score_range == (0, 3)
    assert MADRS.depression_threshold == 10
    assert MADRS.item_name(10) == "Suicidal thoughts"
    assert get_scale("phq-8") is PHQ8
    with pytest.raises(ValueError):
        get_scale("HAMD")


# ----- WAV -----
def test_load_35s(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, np.zeros(35 * 16000))
    rec = load_wav(path)
    assert rec.samples.shape == (560000,)
    assert rec.duration_s == 35.0
    assert rec.sample_rate_hz == 16000
    assert rec.id == "a"


def test_half_scale_payload(tmp_path):
    path = tmp_path / "h.wav"
    _raw_wav(path, np.full(100, 16384, dtype="<i2").tobytes())
    np.testing.assert_array_equal(load_wav(path).samples, 0.5)


def test_scaling_extremes(tmp_path):
    path = tmp_path / "x.wav"
    _raw_wav(path, np.array([-32768, 0, 32767], dtype="<i2").tobytes())
    np.testing.assert_array_equal(load_wav(path).samples, [-1.0, 0.0, 32767 / 32768])


def test_stereo_rejected(tmp_path):
    path = tmp_path / "s.wav"
    _raw_wav(path, np.zeros(200, dtype="<i2").tobytes(), channels=2)
    with pytest.raises(UnsupportedFormat, match="channels=2"):
        load_wav(path)


def test_wrong_rate_rejected(tmp_path):
    path = tmp_path / "r.wav"
    _raw_wav(path, np.zeros(100, dtype="<i2").tobytes(), rate=44100)
    with pytest.raises(UnsupportedFormat, match="sample_rate=44100"):
        load_wav(path)


def test_8bit_rejected(tmp_path):
    path = tmp_path / "b.wav"
    _raw_wav(path, bytes(100), width=1)
    with pytest.raises(UnsupportedFormat, match="bits_per_sample=8"):
        load_wav(path)


def test_float_format_rejected(tmp_path):
    # IEEE float (format tag 3) header written by hand
    payload = np.zeros(10, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    path = tmp_path / "f.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedFormat, match="format"):
        load_wav(path)


def test_truncated_and_garbage(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(path, np.zeros(1000))
    data = path.read_bytes()
    path.write_bytes(data[:30])
    with pytest.raises(CorruptFile):
        load_wav(path)
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(CorruptFile):
        load_wav(path)


def test_missing_file(tmp_path):
    with pytest.raises(CorruptFile):
        load_wav(tmp_path / "nope.wav")


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = np.round(rng.uniform(-1, 1, 4000) * 32767) / 32768
    write_wav(tmp_path / "r.wav", x)
    np.testing.assert_array_equal(load_wav(tmp_path / "r.wav").samples, x)


# ----- manifest -----
def _write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def _madrs_row(rid, spk, split, scores, total=""):
    return [rid, spk, f"{rid}.wav", split, *scores, total]


def test_columns():
    cols = manifest_columns(MADRS)
    assert cols[:4] == ["recording_id", "speaker_id", "path", "split"]
    assert cols[4:] == [f"item_{k}" for k in range(1, 11)] + ["total"]


def test_table2_supports(tmp_path):
    # 21 test recordings with item 10 present in 4 of them
    rows = []
    for k in range(21):
        scores = [0] * 9 + [3 if k < 4 else 0]
        rows.append(_madrs_row(f"r{k}", f"s{k}", "test", scores))
    rows.append(_madrs_row("t0", "tr", "train", [1] * 10, 10))
    _write_csv(tmp_path / "m.csv", manifest_columns(MADRS), rows)
    m = parse_manifest(tmp_path / "m.csv", MADRS)
    assert m.supports("test")[10] == (17, 4)
    assert m.row("t0").audio_path == tmp_path / "t0.wav"


def test_split_leak(tmp_path):
    rows = [_madrs_row("a", "S1", "train", [0] * 10), _madrs_row("b", "S1", "val", [0] * 10)]
    _write_csv(tmp_path / "m.csv", manifest_columns(MADRS), rows)
    with pytest.raises(SplitLeak, match="S1"):
        parse_manifest(tmp_path / "m.csv", MADRS)


def test_score_out_of_range(tmp_path):
    _write_csv(tmp_path / "m.csv", manifest_columns(MADRS), [_madrs_row("a", "S1", "train", [7] + [0] * 9)])
    with pytest.raises(ScoreOutOfRange):
        parse_manifest(tmp_path / "m.csv", MADRS)


def test_missing_score(tmp_path):
    _write_csv(tmp_path / "m.csv", manifest_columns(MADRS), [_madrs_row("a", "S1", "train", [""] + [0] * 9)])
    with pytest.raises(MissingScore):
        parse_manifest(tmp_path / "m.csv", MADRS)


def test_total_mismatch(tmp_path):
    _write_csv(tmp_path / "m.csv", manifest_columns(MADRS), [_madrs_row("a", "S1", "train", [1] * 10, 11)])
    with pytest.raises(TotalMismatch):
        parse_manifest(tmp_path / "m.csv", MADRS)


def test_phq8_range(tmp_path):
    header = manifest_columns(PHQ8)
    _write_csv(tmp_path / "m.csv", header, [["a", "S1", "a.wav", "train", 4, 0, 0, 0, 0, 0, 0, 0, ""]])
    with pytest.raises(ScoreOutOfRange):
        parse_manifest(tmp_path / "m.csv", PHQ8)


def test_binarize_examples(tmp_path):
    rows = (
        ManifestRow("a", "S1", tmp_path / "a.wav", "train", (1, 2, 0, 3, 0, 0, 1, 0, 2, 3), 12),
        ManifestRow("b", "S2", tmp_path / "b.wav", "train", (0,) * 10, 0),
        ManifestRow("c", "S3", tmp_path / "c.wav", "train", (1, 1, 1, 1, 1, 1, 1, 1, 1, 0), 9),
    )
    labels = binarize_labels(Manifest(MADRS, rows))
    assert [l.item_index for l in labels["a"].items if l.present] == [1, 2, 4, 7, 9, 10]
    assert labels["a"].depressed
    assert not any(l.present for l in labels["b"].items) and not labels["b"].depressed
    assert labels["c"].total == 9 and not labels["c"].depressed


score_rows = st.lists(
    st.tuples(st.sampled_from(["train", "val", "test"]), st.lists(st.integers(0, 6), min_size=10, max_size=10)),
    min_size=1,
    max_size=12,
)


@settings(max_examples=40, deadline=None)
@given(score_rows, st.booleans())
def test_manifest_round_trip_and_supports(tmp_path_factory, data, with_total):
    tmp = tmp_path_factory.mktemp("m")
    rows = tuple(
        ManifestRow(f"r{k}", f"s{k}", tmp / f"r{k}.wav", split, tuple(scores), sum(scores) if with_total else None)
        for k, (split, scores) in enumerate(data)
    )
    manifest = Manifest(MADRS, rows)
    write_manifest(manifest, tmp / "m.csv")
    again = parse_manifest(tmp / "m.csv", MADRS)
    assert again == manifest
    for split in ("train", "val", "test"):
        n = len(manifest.split_rows(split))
        for absent, present in manifest.supports(split).values():
            assert absent + present == n
    speakers = [manifest.speakers(s) for s in ("train", "val", "test")]
    assert not (speakers[0] & speakers[1]) and not (speakers[0] & speakers[2]) and not (speakers[1] & speakers[2])


# ----- functionals -----
def _functional_csv(path, rows, dim, delimiter=","):
    header = ["recording_id", "window_index"] + [f"f{k}" for k in range(dim)]
    lines = [delimiter.join(header)] + [delimiter.join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_three_vectors(tmp_path):
    rng = np.random.default_rng(1)
    rows = [["a", k] + list(rng.normal(size=88)) for k in range(3)]
    _functional_csv(tmp_path / "f.csv", rows, 88)
    vecs = import_functionals(tmp_path / "f.csv")
    assert len(vecs) == 3 and all(v.values.shape == (88,) for v in vecs)
    np.testing.assert_array_equal(vecs[2].values, rows[2][2:])


def test_nan_cell_located(tmp_path):
    rows = [["a", 0] + [0.0] * 88, ["a", 1] + [0.0] * 5 + ["nan"] + [0.0] * 82]
    _functional_csv(tmp_path / "f.csv", rows, 88)
    with pytest.raises(NonFiniteValue, match=r"row 3, column 'f5'"):
        import_functionals(tmp_path / "f.csv")


def test_dimension_mismatch(tmp_path):
    _functional_csv(tmp_path / "f.csv", [["a", 0] + [0.0] * 87], 87)
    with pytest.raises(DimensionMismatch):
        import_functionals(tmp_path / "f.csv", expected_dim=88)


def test_semicolon_and_ordering(tmp_path):
    rows = [["b", 1] + [1.0] * 4, ["a", 0] + [2.0] * 4, ["b", 0] + [3.0] * 4]
    _functional_csv(tmp_path / "f.csv", rows, 4, delimiter=";")
    vecs = import_functionals(tmp_path / "f.csv", expected_dim=4)
    assert [(v.recording_id, v.window_index) for v in vecs] == [("b", 0), ("b", 1), ("a", 0)]
    grouped = group_functionals(vecs)
    assert grouped["b"].shape == (2, 4)


def test_functionals_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    feats = {"x": rng.normal(size=(3, 88)), "y": rng.normal(size=(2, 88))}
    write_functionals(tmp_path / "f.csv", feats)
    back = group_functionals(import_functionals(tmp_path / "f.csv"))
    for k in feats:
        np.testing.assert_array_equal(back[k], feats[k])


def test_gap_in_window_indices(tmp_path):
    _functional_csv(tmp_path / "f.csv", [["a", 0] + [0.0] * 4, ["a", 2] + [0.0] * 4], 4)
    with pytest.raises(DimensionMismatch):
        group_functionals(import_functionals(tmp_path / "f.csv", expected_dim=4))
