"""Command-line entry points.

Exit status is 0 on success, 2 for an invalid configuration (with a
field-level message on stderr) and 1 for any failure while running.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from typing import List, Optional

from .analysis import run_report, write_filters_csv, write_json, write_pcen_csv
from .config import ConfigError, RunConfig, load_config
from .dataio import Corpus, SynthSpec, load_manifest, make_synthetic_corpus, write_corpus
from .training import (evaluate_classifier, linear_probe, load_checkpoint, save_checkpoint,
                       train_contrastive, train_supervised)

CHECKPOINT_NAME = "checkpoint.wfl"
COMMANDS = ("train-ssl", "train-supervised", "probe", "analyze-filters", "analyze-pcen", "gen-synth")
NEEDS_CHECKPOINT = ("probe", "analyze-filters", "analyze-pcen")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavefront", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--frontend")
        p.add_argument("--init")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--manifest", help="corpus manifest (JSON lines); default: synthetic corpus")
        if name in NEEDS_CHECKPOINT:
            p.add_argument("--checkpoint", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    objective = {"train-ssl": "cola", "train-supervised": "supervised"}.get(args.command)
    return cfg.replace(seed=args.seed, frontend=args.frontend, init=args.init, epochs=args.epochs,
                       batch_size=args.batch_size, manifest=args.manifest, objective=objective)


def load_corpus(cfg: RunConfig) -> Corpus:
    if cfg.manifest:
        return load_manifest(cfg.manifest)
    return make_synthetic_corpus(cfg.synth_spec())


def _echo(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _train(args, cfg: RunConfig) -> None:
    corpus = load_corpus(cfg)
    if args.command == "train-ssl":
        ckpt = train_contrastive(corpus, cfg, log=_echo)
        table = None
    else:
        ckpt = train_supervised(corpus, cfg, log=_echo)
        table = evaluate_classifier(ckpt, corpus) if len(corpus.subset("test")) else None
    save_checkpoint(ckpt, os.path.join(args.out_dir, CHECKPOINT_NAME))
    write_json(os.path.join(args.out_dir, "log.json"), {"history": ckpt.meta["history"]})
    write_json(os.path.join(args.out_dir, "report.json"), run_report(ckpt, table))


def _load_checkpoint_arg(path: str):
    if not os.path.isfile(path):
        raise ConfigError("checkpoint", f"no such file: {path}")
    return load_checkpoint(path)


def run(args) -> None:
    if args.command in NEEDS_CHECKPOINT and not os.path.isfile(args.checkpoint):
        raise ConfigError("checkpoint", f"no such file: {args.checkpoint}")
    cfg = resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.command == "gen-synth":
        spec = dict(cfg.synth)
        if args.seed is not None:
            spec["seed"] = args.seed
        manifest = write_corpus(make_synthetic_corpus(SynthSpec.from_dict(spec)), args.out_dir)
        print(manifest)
    elif args.command in ("train-ssl", "train-supervised"):
        _train(args, cfg)
    elif args.command == "probe":
        ckpt = _load_checkpoint_arg(args.checkpoint)
        corpus_cfg = RunConfig.from_dict(ckpt.config).replace(manifest=args.manifest)
        result = linear_probe(ckpt, load_corpus(corpus_cfg), epochs=args.epochs)
        write_json(os.path.join(args.out_dir, "probe.json"),
                   {"accuracy": result.accuracy, "train_accuracy": result.train_accuracy,
                    "metrics": result.metrics, "config_hash": ckpt.config_hash})
    elif args.command == "analyze-filters":
        ckpt = _load_checkpoint_arg(args.checkpoint)
        write_filters_csv(os.path.join(args.out_dir, "filters.csv"), ckpt)
        report = run_report(ckpt)
        write_json(os.path.join(args.out_dir, "filters.json"),
                   {"schema": report["schema"], "center_frequencies": report["center_frequencies"],
                    "drift": report["drift"]})
    elif args.command == "analyze-pcen":
        ckpt = _load_checkpoint_arg(args.checkpoint)
        write_pcen_csv(os.path.join(args.out_dir, "pcen.csv"), ckpt)
        write_json(os.path.join(args.out_dir, "pcen.json"), run_report(ckpt)["pcen"])


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
