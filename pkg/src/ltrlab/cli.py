"""Command-line entry point: ``ltrlab <command> --config <path> [--seed N] --out <path>``.

On failure a single machine-readable line is written to stderr::

    error: {"command": "...", "type": "...", "message": "..."}

and the process exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, derive_seed, load_config
from .datamodel import load_dataset, save_dataset
from .evaluation import evaluate_offline
from .experiment import (
    ContentScores,
    Corpora,
    judge_training_pairs,
    run_grid,
    train_variant,
)
from .explain import feature_importance
from .interleave import run_interleaving_experiment
from .labelforge import SigmoidParams, sigmoid_transform
from .ranker import load_ensemble, save_ensemble
from .synthgen import generate_corpus

__all__ = ["cmd_generate", "cmd_grid", "cmd_histogram", "histogram_table", "main"]


def _config(args, required=("generate",)) -> ExperimentConfig:
    cfg = load_config(args.config, required)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_generate(config_path: str | Path, out_path: str | Path, seed: int | None = None) -> Path:
    cfg = load_config(config_path, required=("generate",))
    gen = cfg.generate if seed is None else replace(cfg.generate, seed=int(seed))
    save_dataset(generate_corpus(gen), out_path)
    return Path(out_path)


def cmd_grid(config_path: str | Path, out_dir: str | Path, seed: int | None = None):
    cfg = load_config(config_path, required=("generate",))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if not cfg.variants:
        raise ValueError("config defines no [variant.*] sections")
    return run_grid(cfg, out_dir)


def histogram_table(scores: np.ndarray, transform: SigmoidParams | None, bins: int) -> list[tuple]:
    """Fixed-width counts of raw and transformed scores over ``[0, 1]``."""
    scores = np.asarray(scores, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise ValueError("scores must lie in [0, 1]")
    raw, edges = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    transformed = raw if transform is None else np.histogram(
        sigmoid_transform(scores, transform), bins=bins, range=(0.0, 1.0))[0]
    return [(float(edges[i]), float(edges[i + 1]), int(raw[i]), int(transformed[i])) for i in range(bins)]


def _write_histogram(rows: list[tuple], out_path: str | Path) -> None:
    lines = ["bin,bin_low,bin_high,raw_count,transformed_count"]
    lines += [f"{i},{lo:.6g},{hi:.6g},{r},{t}" for i, (lo, hi, r, t) in enumerate(rows)]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_score_file(path: str | Path) -> np.ndarray:
    values = []
    with Path(path).open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        col = header.index("score") if "score" in header else len(header) - 1
        for line in fh:
            if line.strip():
                values.append(float(line.strip().split(",")[col]))
    return np.array(values)


def cmd_histogram(args) -> Path:
    transform = None
    cfg = None
    if args.config:
        cfg = _config(args, required=())
    if args.transform:
        alpha, beta = (float(v) for v in args.transform.split(","))
        transform = SigmoidParams(alpha, beta)
    variant = None
    if args.variant:
        if cfg is None:
            raise ValueError("--variant needs --config")
        variant = _find_variant(cfg, args.variant)
        if transform is None and variant.transform:
            transform = SigmoidParams(*variant.transform)
    if args.scores:
        scores = _read_score_file(args.scores)
    else:
        if cfg is None or variant is None or not args.data:
            raise ValueError("histogram needs --scores, or --data with --config and --variant")
        data = load_dataset(args.data)
        corpora = _corpora_for(data, cfg)
        scores = np.concatenate(ContentScores(corpora, cfg).get(variant))
        scores = np.clip(scores, 0.0, 1.0)
    _write_histogram(histogram_table(scores, transform, args.bins), args.out)
    return Path(args.out)


def _find_variant(cfg: ExperimentConfig, name: str):
    for v in cfg.variants:
        if v.name == name:
            return v
    raise ValueError(f"variant {name!r} not found in config")


def _corpora_for(data, cfg: ExperimentConfig) -> Corpora:
    if not data.has_latent:
        rows, r = np.empty(0, dtype=np.intp), np.empty(0)
    else:
        rows, r = judge_training_pairs(data, cfg)
    return Corpora(data, data, rows, r)


def _cmd_train(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    variant = _find_variant(cfg, args.variant)
    corpora = _corpora_for(data, cfg)
    model = train_variant(variant, corpora, ContentScores(corpora, cfg), cfg)
    save_ensemble(model, args.out)


def _cmd_evaluate(args) -> None:
    cfg = _config(args, required=())
    data = load_dataset(args.data)
    rep = evaluate_offline(load_ensemble(args.baseline), load_ensemble(args.variant), data.groups, cfg.judge,
                           cfg.eval_k, derive_seed(cfg.master_seed, "judge", "offline"))
    row = rep.summary_row()
    Path(args.out).write_text(",".join(row) + "\n" + ",".join(row.values()) + "\n", encoding="utf-8")
    if args.per_query:
        Path(args.per_query).write_text(rep.per_query_csv(), encoding="utf-8")


def _cmd_interleave(args) -> None:
    cfg = _config(args, required=())
    data = load_dataset(args.data)
    rep = run_interleaving_experiment(load_ensemble(args.baseline), load_ensemble(args.variant), data.groups,
                                      cfg.user, args.sessions or cfg.sessions,
                                      derive_seed(cfg.master_seed, "sessions"), cfg.atc_depth,
                                      cfg.generate.segment_proportions)
    row = rep.summary_row()
    Path(args.out).write_text(",".join(row) + "\n" + ",".join(row.values()) + "\n", encoding="utf-8")


def _cmd_explain(args) -> None:
    data = load_dataset(args.data)
    model = load_ensemble(args.model)
    x = data.stacked_features()
    model.check_features(x[:1], data.schema)
    if args.sample and args.sample < x.shape[0]:
        rng = np.random.default_rng(args.seed or 0)
        x = x[np.sort(rng.choice(x.shape[0], size=args.sample, replace=False))]
    rep = feature_importance(model, x)
    lines = ["rank,feature,mean_abs_shap"] + [f"{r},{n},{v:.10f}" for r, n, v in rep.ordered()]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltrlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, config_required: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="experiment config (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the master/generator seed")
        p.add_argument("--out", required=True, help="output file or directory")
        return p

    add("generate", "generate a synthetic corpus")
    p = add("train", "train one variant's ranker on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True)
    for name, text in (("evaluate", "offline judged NDCG comparison"), ("interleave", "team-draft interleaving")):
        p = add(name, text)
        p.add_argument("--data", required=True)
        p.add_argument("--baseline", required=True, help="baseline model file")
        p.add_argument("--variant", required=True, help="variant model file")
        if name == "evaluate":
            p.add_argument("--per-query", default=None, help="optional per-query NDCG CSV")
        else:
            p.add_argument("--sessions", type=int, default=None)
    p = add("explain", "mean |SHAP| feature importance", config_required=False)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--sample", type=int, default=2000)
    add("grid", "run the full variant grid")
    p = add("histogram", "raw vs transformed content-score histogram", config_required=False)
    p.add_argument("--scores", default=None, help="pair_id,score file")
    p.add_argument("--data", default=None)
    p.add_argument("--variant", default=None)
    p.add_argument("--transform", default=None, help="alpha,beta")
    p.add_argument("--bins", type=int, default=10)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args.config, args.out, args.seed)
        elif args.command == "grid":
            report = cmd_grid(args.config, args.out, args.seed)
            sys.stdout.write(report.to_text())
        elif args.command == "histogram":
            cmd_histogram(args)
        else:
            {"train": _cmd_train, "evaluate": _cmd_evaluate,
             "interleave": _cmd_interleave, "explain": _cmd_explain}[args.command](args)
    except Exception as exc:  # noqa: BLE001 - converted to an error line
        payload = {"command": args.command, "type": type(exc).__name__, "message": str(exc)}
        sys.stderr.write("error: " + json.dumps(payload, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
