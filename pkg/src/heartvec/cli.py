"""Command-line driver.

Subcommands: train, score, evaluate, ablate, extract-features, synth.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import container
from .dataset import list_wavs, load_reference, load_wav
from .errors import HeartvecError
from .evaluation import TRAINING_WEIGHTS, EvalWeights, evaluate_threshold, sweep_curve, write_curve_csv
from .mfcc import FeatureMatrix, extract_mfcc
from .pipeline import (
    CLASSIFIERS,
    REDUCTIONS,
    PipelineConfig,
    load_bundle,
    load_corpus,
    read_scores,
    run_ablation,
    save_bundle,
    score_dir,
    train_system,
    write_ablation,
    write_scores,
)
from .synthetic import write_toy_corpus

log = logging.getLogger("heartvec")

# flag -> config key
_FLAG_KEYS = {
    "seed": "seed",
    "ubm_k": "ubm_components",
    "rank": "ivector_rank",
    "reduce": "reduction",
    "dim": "reduced_dim",
    "classifier": "classifier",
    "class_k": "class_gmm_components",
    "workers": "workers",
}


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", type=Path, help="flat key=value config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--ubm-k", type=int, help="UBM components (default 2048)")
    g.add_argument("--rank", type=int, help="i-vector dimension")
    g.add_argument("--reduce", choices=REDUCTIONS)
    g.add_argument("--dim", type=int, help="reduced dimension")
    g.add_argument("--classifier", choices=CLASSIFIERS)
    g.add_argument("--class-k", type=int, help="components per class GMM (default 128)")
    g.add_argument("--workers", type=int, help="threads for feature/statistics extraction")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def _resolve_config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise HeartvecError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.config:
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig(**PipelineConfig.coerce(overrides))


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def cmd_train(args) -> int:
    config = _resolve_config(args)
    features, table = load_corpus(args.data_dir, args.labels, config)
    system = train_system(features, table, config)
    manifest = save_bundle(system, args.bundle)
    print(f"trained on {manifest['diagnostics']['n_train_records']} records; bundle written to {args.bundle}")
    return 0


def cmd_score(args) -> int:
    system = load_bundle(args.bundle)
    if args.workers:
        system.config = system.config.updated(workers=args.workers)
    scores = score_dir(args.data_dir, system)
    write_scores(scores, args.output)
    print(f"scored {len(scores)} records -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    scores = read_scores(args.scores)
    truth = load_reference(args.labels)
    weights = EvalWeights.parse(args.weights) if args.weights else TRAINING_WEIGHTS
    if args.sweep:
        report = sweep_curve(scores, truth, weights, args.grid_size)
        if args.curve:
            write_curve_csv(report.curve, args.curve)
        summary = dict(report.summary(), threshold=_json_float(report.threshold), best=True)
    else:
        report = evaluate_threshold(scores, truth, args.threshold, weights)
        summary = dict(report.summary(), threshold=_json_float(report.threshold))
    print(json.dumps({k: (f"{v:.4f}" if k in ("Se", "Sp", "MAcc") else v) for k, v in summary.items()}))
    return 0


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    features, table = load_corpus(args.data_dir, args.labels, config)
    weights = EvalWeights.parse(args.weights) if args.weights else TRAINING_WEIGHTS
    cells = run_ablation(
        features,
        table,
        config,
        folds=args.folds,
        reductions=args.reductions.split(","),
        classifiers=args.classifiers.split(","),
        weights=weights,
    )
    write_ablation(cells, args.output)
    for c in cells:
        shown = "error" if c.error else f"Se={c.Se:.4f} Sp={c.Sp:.4f} MAcc={c.MAcc:.4f}"
        print(f"{100 * c.fraction:5.0f}%  {c.reduction:<5} {c.classifier:<4} {shown}")
    return 0


def cmd_extract_features(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_wavs(args.data_dir)
    for path in paths:
        feats = extract_mfcc(load_wav(path), config.mfcc)
        container.save_model(FeatureMatrix(path.stem, feats), out / f"{path.stem}.feat")
    print(f"wrote {len(paths)} feature matrices to {out}")
    return 0


def cmd_synth(args) -> int:
    table = write_toy_corpus(args.out_dir, n_records=args.records, seed=args.seed, duration_s=args.duration)
    print(f"wrote {len(table)} synthetic records to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heartvec", description="i-vector heart-sound classification")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train UBM, T matrix, reduction and classifier")
    p.add_argument("data_dir", type=Path)
    p.add_argument("labels", type=Path, help="REFERENCE.csv with record_id,code[,quality]")
    p.add_argument("bundle", type=Path, help="output bundle directory")
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score every WAV in a directory with a trained bundle")
    p.add_argument("data_dir", type=Path)
    p.add_argument("bundle", type=Path)
    p.add_argument("output", type=Path, help="CSV record_id,score")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="Se/Sp/MAcc of a score file")
    p.add_argument("scores", type=Path)
    p.add_argument("labels", type=Path)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--threshold", type=float, default=0.0)
    mode.add_argument("--sweep", action="store_true", help="sweep thresholds and report the best MAcc")
    p.add_argument("--weights", help="wa1,wa2,wn1,wn2 (default: PhysioNet 2016 training weights)")
    p.add_argument("--curve", type=Path, help="write threshold,Se,Sp,MAcc rows here (with --sweep)")
    p.add_argument("--grid-size", type=int, help="thin the written curve to this many points")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="MAcc versus training-set size")
    p.add_argument("data_dir", type=Path)
    p.add_argument("labels", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--reductions", default=",".join(REDUCTIONS))
    p.add_argument("--classifiers", default="gmm")
    p.add_argument("--weights")
    _config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("extract-features", help="dump MFCC matrices in the model container format")
    p.add_argument("data_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    _config_args(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("synth", help="write a toy two-class corpus")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--records", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=20.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except HeartvecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
