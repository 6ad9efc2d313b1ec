"""Command line front-end.

Every subcommand reads its settings from a :class:`~semiq.config.RunConfig`
(``--config`` file plus ``--set key=value`` overrides), writes outputs
atomically and drops a ``stamp.json`` (config hash, seed, versions) next to
them. Module errors map to distinct exit statuses, see :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, errors
from .audio import read_wav
from .config import RunConfig, load_config, parse_overrides
from .evalharness import evaluate_run
from .intrusive import benchmark_metrics, default_registry
from .pipeline import FeatureConfig, predict, record_features, train_toy
from .simulate import (
    QUALITY_SECONDS,
    SNR_SECONDS,
    ExampleRecord,
    load_corpus,
    plan_snr_dataset,
    read_jsonl,
    realize_snr_example,
    simulate_quality_pairs,
    write_jsonl,
)
from .toymodel.train import TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("semiq")

EXIT_SKIPPED = 20  # run finished but some records were skipped
EXIT_IO = 21  # missing or unreadable file


def _exit_codes():
    out, todo = {}, [errors.SemiqError]
    while todo:
        cls = todo.pop()
        out[cls.__name__] = cls.exit_code
        todo.extend(cls.__subclasses__())
    return dict(sorted(out.items(), key=lambda kv: kv[1]))


EXIT_CODES = _exit_codes()


# ------------------------------------------------------------------ helpers


def _need(cfg: RunConfig, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise errors.ConfigError(f"missing required setting(s): {', '.join(missing)}")


def _out_dir(cfg) -> Path:
    _need(cfg, "out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_stamp(path, command, cfg: RunConfig, extra=None) -> None:
    stamp = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "semiq": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": cfg.to_dict(),
    }
    if extra:
        stamp.update(extra)
    _write_text(path, json.dumps(stamp, indent=2, sort_keys=True, default=list) + "\n")


def _write_text(path, text) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    tmp.replace(path)


def _stamp_path(out: Path) -> Path:
    return out / "stamp.json" if out.is_dir() else out.with_name(out.name + ".stamp.json")


def load_records(path) -> list:
    """Read an ExampleRecord manifest; relative audio paths resolve against its directory."""
    base = Path(path).parent
    out = []
    for row in read_jsonl(path):
        rec = ExampleRecord.from_dict(row)
        if not Path(rec.audio_path).is_absolute():
            rec.audio_path = str(base / rec.audio_path)
        out.append(rec)
    return out


def _relative(records, base: Path):
    rows = []
    for r in records:
        d = r.to_dict()
        try:
            d["audio_path"] = str(Path(r.audio_path).relative_to(base))
        except ValueError:
            pass
        rows.append(d)
    return rows


def _metric(cfg: RunConfig):
    reg = default_registry()
    if cfg.metric_command:
        if cfg.metric in reg:
            raise errors.ConfigError(f"metric_command given but {cfg.metric!r} is a built-in metric")
        reg.register_external(cfg.metric, cfg.metric_command, cfg.metric_rate, cfg.metric_kind, cfg.calibration)
    metric = reg.get_metric(cfg.metric)
    if metric.output_kind == "distance" and metric.calibration != cfg.calibration:
        metric = replace(metric, calibration=cfg.calibration)
    return reg, metric


def _select(records, split):
    return [r for r in records if r.split == split] if split else records


def _feature_config(cfg: RunConfig, task) -> FeatureConfig:
    seconds = cfg.seconds if cfg.seconds is not None else (QUALITY_SECONDS if task == "mos" else SNR_SECONDS)
    return FeatureConfig(cfg.sample_rate, seconds, cfg.n_mels)


# ---------------------------------------------------------------- commands


def cmd_simulate_snr(cfg: RunConfig) -> int:
    """Mix class-labelled corpus files at random SNRs and write a record manifest."""
    _need(cfg, "corpus", "out")
    corpus = load_corpus(cfg.corpus)
    for e in corpus:
        if not Path(e.path).is_file():
            raise FileNotFoundError(f"corpus file not found: {e.path}")
    plans = plan_snr_dataset(corpus, cfg.fold_map(), cfg.snr_counts(), cfg.snr_range, cfg.seed)
    out = _out_dir(cfg)
    seconds = cfg.seconds if cfg.seconds is not None else SNR_SECONDS
    records = [realize_snr_example(p, out, cfg.sample_rate, seconds) for p in plans]
    write_jsonl(out / "manifest.jsonl", _relative(records, out))
    write_stamp(out / "stamp.json", "simulate-snr", cfg, {"records": len(records)})
    print(f"wrote {len(records)} mixtures to {out / 'manifest.jsonl'}")
    return 0


def cmd_simulate_quality(cfg: RunConfig) -> int:
    """Degrade clean files with the configured distortions and pseudo-label them."""
    _need(cfg, "corpus", "out")
    corpus = load_corpus(cfg.corpus)
    for e in corpus:
        if not Path(e.path).is_file():
            raise FileNotFoundError(f"corpus file not found: {e.path}")
    _, metric = _metric(cfg)
    out = _out_dir(cfg)
    seconds = cfg.seconds if cfg.seconds is not None else QUALITY_SECONDS
    res = simulate_quality_pairs(
        corpus, cfg.augmentations, cfg.quality_counts(), metric, cfg.seed, out, cfg.sample_rate, seconds, cfg.codec_templates()
    )
    write_jsonl(out / "manifest.jsonl", _relative(res.records, out))
    write_stamp(out / "stamp.json", "simulate-quality", cfg, {"records": len(res.records), "skipped": res.skipped_ids})
    print(f"wrote {len(res.records)} pairs to {out / 'manifest.jsonl'}")
    if res.skipped:
        print(f"skipped {res.skipped} record(s): {', '.join(res.skipped_ids[:10])}", file=sys.stderr)
        return EXIT_SKIPPED
    return 0


def cmd_pseudo_label(cfg: RunConfig) -> int:
    """Pseudo-label degraded/clean pairs with the configured intrusive metric.

    Input rows: ``{id, audio_path, aux_path, class_name, split}`` where
    ``aux_path`` is the clean reference.
    """
    _need(cfg, "input", "out")
    base = Path(cfg.input).parent
    rows = read_jsonl(cfg.input)
    _, metric = _metric(cfg)
    resolve = lambda p: p if Path(p).is_absolute() else str(base / p)
    records, skipped = [], []
    for row in rows:
        if not row.get("aux_path"):
            raise errors.InvalidInputError(f"record {row.get('id')}: no clean reference (aux_path)")
        try:
            y = metric.pseudo_mos(read_wav(resolve(row["aux_path"])), read_wav(resolve(row["audio_path"])))
        except errors.SemiqError as exc:
            log.warning("record %s skipped: %s", row.get("id"), exc)
            skipped.append(str(row.get("id")))
            continue
        meta = dict(row.get("meta") or {}, metric=metric.name, raw_score=y)
        records.append(
            ExampleRecord(
                str(row["id"]), resolve(row["audio_path"]), row["class_name"], row.get("split", "train"), "mos",
                float(min(max(y, 1.0), 5.0)), resolve(row["aux_path"]), meta,
            )
        )
    out = Path(cfg.out)
    write_jsonl(out, records)
    write_stamp(_stamp_path(out), "pseudo-label", cfg, {"records": len(records), "skipped": skipped})
    print(f"labelled {len(records)} record(s) with {metric.name}")
    if skipped:
        print(f"skipped {len(skipped)} record(s): {', '.join(skipped[:10])}", file=sys.stderr)
        return EXIT_SKIPPED
    return 0


def cmd_train_toy(cfg: RunConfig) -> int:
    """Train the toy captioner on the train/val records of a manifest."""
    _need(cfg, "input", "out")
    records = [r for r in load_records(cfg.input) if r.split in ("train", "val")]
    if not records:
        raise errors.NoDataError("no train/val records in the input manifest")
    task = records[0].task
    fc = _feature_config(cfg, task)
    feats = record_features(records, fc)
    tc = TrainConfig(cfg.learning_rate, cfg.weight_decay, cfg.epochs, cfg.batch_size, cfg.seed)
    ckpt, result = train_toy(
        records, feats, cfg.strategy, cfg.fixed_prompt, cfg.model_dims(), tc, cfg.templates, fc
    )
    out = _out_dir(cfg)
    save_checkpoint(out / "checkpoint.npz", ckpt)
    result.write_curve(out / "curve.csv")
    write_stamp(out / "stamp.json", "train-toy", cfg, {"best_epoch": result.best_epoch})
    print(f"best epoch {result.best_epoch}; checkpoint at {out / 'checkpoint.npz'}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    """Decode captions for a manifest with a trained checkpoint and parse them to values."""
    _need(cfg, "checkpoint", "input", "out")
    ckpt = load_checkpoint(cfg.checkpoint)
    records = _select(load_records(cfg.input), cfg.split)
    if not records:
        raise errors.NoDataError("no records to predict")
    fmeta = ckpt.meta.get("features")
    fc = FeatureConfig(**fmeta) if fmeta else _feature_config(cfg, records[0].task)
    preds = predict(ckpt, records, record_features(records, fc), fixed_prompt=True if cfg.fixed_prompt else None)
    out = Path(cfg.out)
    write_jsonl(out, preds)
    write_stamp(_stamp_path(out), "predict", cfg)
    failures = sum(p["value"] is None for p in preds)
    print(f"wrote {len(preds)} prediction(s), {failures} unparsable")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    """Score predictions against reference records (Pearson r and RMSE)."""
    _need(cfg, "predictions", "references", "out")
    preds = read_jsonl(cfg.predictions)
    refs = read_jsonl(cfg.references)
    if cfg.split:
        refs = [r for r in refs if r.get("split") == cfg.split]
    value_range = (1.0, 5.0) if cfg.task == "mos" else cfg.snr_range
    report = evaluate_run(preds, refs, cfg.groups or None, cfg.dataset_key or None, cfg.policy, value_range)
    out = Path(cfg.out)
    _write_text(out, report.to_json() + "\n")
    _write_text(out.with_suffix(".txt"), report.to_table() + "\n")
    write_stamp(_stamp_path(out), "evaluate", cfg)
    print(report.to_table())
    return 0


def cmd_benchmark_metrics(cfg: RunConfig) -> int:
    """Correlate intrusive metrics with human scores.

    Input rows: ``{id, clean_path, degraded_path, score}``.
    """
    _need(cfg, "input", "out")
    base = Path(cfg.input).parent
    resolve = lambda p: p if Path(p).is_absolute() else str(base / p)
    reg, _ = _metric(cfg)
    metrics = [reg.get_metric(n) for n in cfg.benchmark]
    triples = [(read_wav(resolve(r["clean_path"])), read_wav(resolve(r["degraded_path"])), float(r["score"])) for r in read_jsonl(cfg.input)]
    rows = benchmark_metrics(triples, metrics)
    out = Path(cfg.out)
    _write_text(out, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    write_stamp(_stamp_path(out), "benchmark-metrics", cfg)
    for row in rows:
        r = "n/a" if row["pearson_r"] is None else f"{row['pearson_r']:.3f}"
        print(f"{row['metric']:<20} r={r}  n={row['n']}  failures={row['failures']}")
    return 0


COMMANDS = {
    "simulate-quality": cmd_simulate_quality,
    "simulate-snr": cmd_simulate_snr,
    "pseudo-label": cmd_pseudo_label,
    "train-toy": cmd_train_toy,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark-metrics": cmd_benchmark_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semiq", description="Semi-intrusive audio assessment toolkit.")
    p.add_argument("--version", action="version", version=f"semiq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        sp.add_argument("--config", help="INI file with a [semiq] section")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory or file")
        sp.add_argument("--fixed-prompt", action="store_true", help="use the class-agnostic prompt")
        sp.add_argument("--strategy", choices=("text", "numeric"))
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", default=[], help="override a config key")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.fixed_prompt:
        overrides["fixed_prompt"] = True
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except errors.SemiqError as exc:
        print(f"semiq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"semiq {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
