"""Command-line entry point: ``itemvoice <command> ...``.

Exit codes: 0 success, 2 validation error, 3 numeric/runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, with_overrides
from .corpus import get_scale, group_functionals, import_functionals, load_wav, parse_manifest
from .dsp import FeatureExtractor
from .errors import ConfigError, ItemVoiceError, MissingCheckpoint, NumericError, SingleClassTrainSplit, TooShort
from .models import KINDS, ItemModel, ModelSpec, load_model
from .pipeline import (
    Dataset,
    RecordingData,
    Target,
    build_dataset,
    extract_to_cache,
    item_decisions,
    predict_grids,
    build_report,
)
from .segmentation import count_segments, window_count, window_values
from .synth import SynthConfig, generate
from .training import random_search, train_item
from .voting import (
    CombinationRule,
    combine_items,
    export_timeline,
    report_csv,
    select_combination_rule,
    vote,
    write_timeline,
)

CHECKPOINT_SUFFIX = ".ivck"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def _parse_items(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--items must be comma-separated integers, got {text!r}") from None


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        max_epochs=getattr(args, "max_epochs", None),
        voting=getattr(args, "voting", None),
        drop_last=True if getattr(args, "drop_last", False) else None,
        out_dir=Path(args.out_dir) if getattr(args, "out_dir", None) else None,
    )


def _dataset(cfg: RunConfig, splits=None) -> Dataset:
    manifest = parse_manifest(cfg.manifest, cfg.scale)
    functionals = None
    if cfg.feature_kind == "egemaps":
        functionals = group_functionals(import_functionals(cfg.functionals, cfg.model.n_features))
    return build_dataset(manifest, cfg.feature_kind, functionals=functionals,
                         cache_dir=cfg.cache_dir, drop_last=cfg.drop_last, splits=splits)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ----- synth -----
def cmd_synth(args) -> int:
    cfg = SynthConfig(n_speakers=args.n_speakers, duration_s=args.duration, seed=args.seed, scale=args.scale)
    manifest = generate(args.out_dir, cfg)
    counts = {s: len(manifest.split_rows(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.rows)} recordings to {args.out_dir} ({counts})")
    return EXIT_OK


# ----- extract -----
def cmd_extract(args) -> int:
    if args.config:
        cfg = _run_config(args)
        manifest_path, scale, cache_dir = cfg.manifest, cfg.scale, cfg.cache_dir
        drop_last = cfg.drop_last
    else:
        if not args.manifest:
            raise ConfigError("extract needs --config or --manifest")
        manifest_path, scale, drop_last = Path(args.manifest), get_scale(args.scale), args.drop_last
        cache_dir = None
    cache_dir = Path(args.out_dir) if args.out_dir else cache_dir
    if cache_dir is None:
        raise ConfigError("extract needs --out-dir or a config with cache_dir")
    manifest = parse_manifest(manifest_path, scale)
    dsp = FeatureExtractor()
    frames = extract_to_cache(manifest, cache_dir, dsp)
    rows = []
    for rid, n in frames.items():
        duration = n / dsp.frames_per_second
        rows.append({
            "recording_id": rid,
            "n_frames": n,
            "n_windows": window_count(n, dsp),
            "n_segments": count_segments(duration, drop_last=drop_last),
        })
    _write_json(Path(cache_dir) / "summary.json", {"drop_last": drop_last, "recordings": rows})
    for r in rows:
        print(f"{r['recording_id']}\tframes={r['n_frames']}\tsegments={r['n_segments']}")
    return EXIT_OK


# ----- train / search -----
def _targets(args, cfg: RunConfig) -> list[Target]:
    if args.multitask:
        targets = [Target("all_items")]
    else:
        items = _parse_items(args.items)
        if items is None:
            items = list(cfg.scale.item_indices)
        unknown = sorted(set(items) - set(cfg.scale.item_indices))
        if unknown:
            raise ConfigError(f"items {unknown} are not part of {cfg.scale.name}")
        targets = [Target.item(i) for i in items]
    if args.depression:
        targets.append(Target("depression"))
    return targets


def _checkpoint_name(target: Target) -> str:
    return f"{target}{CHECKPOINT_SUFFIX}"


def _train(args, search: bool) -> int:
    cfg = _run_config(args)
    targets = _targets(args, cfg)
    dataset = _dataset(cfg, splits=("train", "val"))
    ckpt_dir, log_dir = cfg.checkpoint_dir(), cfg.log_dir()
    log_dir.mkdir(parents=True, exist_ok=True)
    summary, failures = [], []
    for target in targets:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SingleClassTrainSplit)
                if search:
                    result, trials = random_search(cfg.model, target, dataset, cfg.train)
                    _write_json(log_dir / f"{target}.trials.json", [
                        {"trial": t.trial, "hyperparams": t.hyperparams,
                         "validation_weighted_f": t.validation_weighted_f, "best_epoch": t.best_epoch}
                        for t in trials
                    ])
                else:
                    result = train_item(cfg.model, target, dataset, cfg.train)
        except ItemVoiceError as exc:
            print(f"{target}: FAILED: {exc}", file=sys.stderr)
            failures.append(exc)
            continue
        result.save(ckpt_dir / _checkpoint_name(target), log_dir / f"{target}.csv")
        summary.append({"name": str(target), **result.meta()})
        flag = " (degenerate: single-class training labels)" if result.degenerate else ""
        print(f"{target}: val weighted F {result.validation_weighted_f:.4f} at epoch {result.best_epoch}{flag}")
    _write_json(cfg.out_dir / ("search.json" if search else "training.json"), summary)
    if failures:
        return EXIT_NUMERIC if any(isinstance(e, NumericError) for e in failures) else EXIT_VALIDATION
    return EXIT_OK


def cmd_train(args) -> int:
    return _train(args, search=False)


def cmd_search(args) -> int:
    return _train(args, search=True)


# ----- evaluate -----
def _load_checkpoints(ckpt_dir: Path):
    if not ckpt_dir.is_dir():
        raise MissingCheckpoint(f"no checkpoint directory at {ckpt_dir}")
    found = []
    for path in sorted(ckpt_dir.glob(f"*{CHECKPOINT_SUFFIX}")):
        model, header = load_model(path)
        found.append((Target.from_dict(header["meta"]["target"]), model))
    if not found:
        raise MissingCheckpoint(f"no *{CHECKPOINT_SUFFIX} files in {ckpt_dir}")
    return found


def _grids_by_target(models, recordings, scale, drop_last):
    item_grids, depression_grids = {}, None
    for target, model in models:
        grids = predict_grids(model, recordings, target.head_keys(scale), drop_last)
        if target.kind == "depression":
            depression_grids = grids["depression"]
        else:
            item_grids.update(grids)
    return item_grids, depression_grids


def _combination_rule(cfg: RunConfig, models) -> CombinationRule:
    rule = cfg.combination_rule()
    if rule is not None:
        return rule
    val = _dataset(cfg, splits=("val",)).recordings
    item_grids, _ = _grids_by_target(models, val, cfg.scale, cfg.drop_last)
    if sorted(int(k) for k in item_grids) != list(cfg.scale.item_indices):
        return CombinationRule()
    decisions = item_decisions(item_grids, cfg.voting)
    rule, _ = select_combination_rule(decisions, [r.labels.depressed for r in val], cfg.scale.n_items)
    return rule


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    ckpt_dir = Path(args.checkpoints) if args.checkpoints else cfg.checkpoint_dir()
    models = _load_checkpoints(ckpt_dir)
    recordings = _dataset(cfg, splits=(args.split,)).recordings
    if not recordings:
        raise ConfigError(f"split {args.split!r} has no recordings")
    item_grids, depression_grids = _grids_by_target(models, recordings, cfg.scale, cfg.drop_last)
    report = build_report(cfg.scale, recordings, item_grids, depression_grids, _combination_rule(cfg, models))
    out = Path(args.report) if args.report else cfg.out_dir / f"report_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    text = report_csv(report)
    out.write_text(text, encoding="utf-8")
    print(f"{'item':<12} {'hard':<16} soft")
    for row in report.all_rows():
        print(f"{row.key:<12} {row.hard.cell():<16} {row.soft.cell()}")
    print(f"report written to {out}")
    return EXIT_OK


# ----- predict / timeline on a single WAV -----
def _wav_recording(path: Path, spec: ModelSpec) -> RecordingData:
    if not spec.uses_spectrogram:
        raise ConfigError("predicting from a WAV needs a spectrogram model")
    rec = load_wav(path)
    dsp = FeatureExtractor()
    frames = dsp.compute(rec.samples, rec.id).values.astype(np.float32).astype(np.float64)
    n = window_count(len(frames), dsp)
    if n == 0:
        raise TooShort(f"{path}: shorter than one window")
    windows = np.stack([window_values(frames, k, dsp) for k in range(n)])
    return RecordingData(rec.id, "", "", windows, None, len(frames) / dsp.frames_per_second)


def cmd_predict(args) -> int:
    models = _load_checkpoints(Path(args.checkpoints))
    scale = get_scale(args.scale)
    try:
        rule = CombinationRule.parse(args.combination)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    doc = {"recording": str(args.wav), "voting": args.voting, "items": {}, "depression": None}
    rec = _wav_recording(Path(args.wav), models[0][1].spec)
    item_grids, depression_grids = _grids_by_target(models, [rec], scale, args.drop_last)
    decisions = []
    for key in sorted(item_grids, key=int):
        d = vote(item_grids[key][0], args.voting)
        decisions.append(d)
        doc["items"][key] = {"name": scale.item_name(int(key)), "present": d.present,
                             "aggregate_present_prob": d.aggregate_present_prob}
    if depression_grids is not None:
        d = vote(depression_grids[0], args.voting)
        doc["depression"] = {"source": "model", "depressed": d.present, "score": d.aggregate_present_prob}
    elif sorted(int(k) for k in item_grids) == list(scale.item_indices):
        c = combine_items(decisions, rule, scale.item_indices)
        doc["depression"] = {"source": str(rule), "depressed": c.depressed, "score": c.score}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_timeline(args) -> int:
    model, header = load_model(args.checkpoint)
    target = Target.from_dict(header["meta"]["target"])
    scale = get_scale(args.scale)
    rec = _wav_recording(Path(args.wav), model.spec)
    keys = target.head_keys(scale)
    key = str(args.item) if args.item is not None else keys[0]
    if key not in keys:
        raise ConfigError(f"checkpoint predicts {keys}, not item {key}")
    grid = predict_grids(model, [rec], keys, args.drop_last)[key][0]
    name = scale.item_name(int(key)) if key.isdigit() else "depression"
    doc, svg = export_timeline(grid, item_name=name)
    stem = f"{rec.recording_id}_{key}"
    json_path, svg_path = write_timeline(doc, svg, args.out_dir, stem)
    print(f"{grid.n_segments} segments -> {json_path}, {svg_path}")
    return EXIT_OK


# ----- inspect -----
def cmd_inspect(args) -> int:
    if args.checkpoint:
        model, header = load_model(args.checkpoint)
        doc = {"model_kind": header["model_kind"], "model_spec": header["model_spec"], "meta": header["meta"],
               "n_parameters": model.n_parameters(),
               "tensors": {t["name"]: t["shape"] for t in header["tensors"]}}
    else:
        spec = ModelSpec(kind=args.kind)
        model = ItemModel(spec)
        doc = {"model_kind": spec.kind, "model_spec": spec.to_dict(), "n_parameters": model.n_parameters(),
               "embedding_dim": spec.embedding_dim}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itemvoice", description="Item-level depression assessment from speech.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-class corpus")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-speakers", type=int, default=20)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--scale", default="MADRS")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write log-mel caches and a segment summary")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--scale", default="MADRS")
    p.add_argument("--out-dir")
    p.add_argument("--drop-last", action="store_true")
    p.set_defaults(func=cmd_extract)

    for name, func, text in (("train", cmd_train, "train item models"),
                             ("search", cmd_search, "random hyper-parameter search per item")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--items", help="comma-separated item indices (default: all; \"\" for none)")
        p.add_argument("--multitask", action="store_true", help="one model with a head per item")
        p.add_argument("--depression", action="store_true", help="also train a depression model (total >= threshold)")
        p.add_argument("--seed", type=int)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--voting", choices=("hard", "soft"))
        p.add_argument("--drop-last", action="store_true")
        p.add_argument("--out-dir")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="write the W/A/P report for one split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoints", help="checkpoint directory (default: <out_dir>/checkpoints)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--report", help="output CSV path")
    p.add_argument("--voting", choices=("hard", "soft"))
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="item and depression decisions for one WAV")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--scale", default="MADRS")
    p.add_argument("--voting", default="soft", choices=("hard", "soft"))
    p.add_argument("--combination", default="mean_prob")
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("timeline", help="JSON + SVG probability timeline for one WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--item", type=int)
    p.add_argument("--scale", default="MADRS")
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_timeline)

    p = sub.add_parser("inspect", help="dump a model spec or checkpoint header")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--kind", choices=KINDS)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ItemVoiceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
