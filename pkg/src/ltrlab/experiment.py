"""The full variant grid: labels, rankers, offline judging, interleaving, SHAP importance."""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, derive_seed
from .datamodel import Channel, ContentSource, Dataset, VariantConfig
from .evaluation import EvalReport, evaluate_offline
from .explain import ImportanceReport, feature_importance
from .interleave import InterleaveReport, run_interleaving_experiment
from .labelforge import (
    SigmoidParams,
    compose_labels,
    load_content_scores,
    predict_content,
    train_content_scorer,
)
from .ranker import TreeEnsemble, fit_regression, save_ensemble, train_ranker
from .synthgen import generate_corpus, judge_pair

__all__ = ["ContentScores", "GridReport", "VariantResult", "prepare_corpora", "run_grid", "train_variant"]

logger = logging.getLogger(__name__)

XE_FEATURE = "xe_score"
N_RATING_LEVELS = 4  # ratings 0..4 map to r = rating / 4


@dataclass
class Corpora:
    train: Dataset
    evaluation: Dataset
    judged_rows: np.ndarray  # row indices into train.stacked_features()
    judged_r: np.ndarray


def prepare_corpora(cfg: ExperimentConfig) -> Corpora:
    seed = cfg.master_seed
    train = generate_corpus(replace(cfg.generate, seed=derive_seed(seed, "corpus", "train")))
    evaluation = generate_corpus(replace(cfg.generate, n_queries=cfg.eval_queries,
                                         seed=derive_seed(seed, "corpus", "eval"), id_prefix="e"))
    return Corpora(train, evaluation, *judge_training_pairs(train, cfg))


def judge_training_pairs(train: Dataset, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sample pairs from the training corpus and rate them; ``r = rating / 4``."""
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "judged-sample"))
    n = train.n_items
    rows = np.sort(rng.choice(n, size=min(cfg.judged_pairs, n), replace=False))
    offsets = train.group_offsets()
    gi = np.searchsorted(offsets, rows, side="right") - 1
    judge_seed = derive_seed(cfg.master_seed, "judge", "labels")
    r = np.array([
        judge_pair(float(train.groups[g].rho[i - offsets[g]]), train.groups[g].query_id,
                   train.groups[g].product_ids[i - offsets[g]], cfg.judge, judge_seed)
        for i, g in zip(rows, gi)
    ], dtype=np.float64) / N_RATING_LEVELS
    return rows, r


class ContentScores:
    """Lazily computed content-score arrays for the training corpus, one per source."""

    def __init__(self, corpora: Corpora, cfg: ExperimentConfig):
        self.corpora = corpora
        self.cfg = cfg
        self._cache: dict[tuple, list[np.ndarray]] = {}

    def _split(self, flat: np.ndarray) -> list[np.ndarray]:
        off = self.corpora.train.group_offsets()
        return [flat[off[i]:off[i + 1]] for i in range(len(off) - 1)]

    def get(self, variant: VariantConfig) -> list[np.ndarray]:
        key = (variant.content_source, variant.scores_path)
        if key not in self._cache:
            self._cache[key] = self._compute(variant)
        return self._cache[key]

    def _compute(self, variant: VariantConfig) -> list[np.ndarray]:
        train = self.corpora.train
        x = train.stacked_features()
        xj, r = x[self.corpora.judged_rows], self.corpora.judged_r
        if variant.content_source is ContentSource.GBDT_BASELINE:
            model = fit_regression(xj, r, train.schema, self.cfg.content_gbdt)
            return self._split(np.clip(model.predict(x), 0.0, 1.0))
        if variant.content_source is ContentSource.CONTENT_SCORER:
            cols = train.schema.indices(Channel.content())
            names = tuple(train.schema.names[i] for i in cols)
            model = train_content_scorer(xj[:, cols], r, names, self.cfg.scorer)
            return self._split(predict_content(model, x, train.schema))
        return load_content_scores(variant.scores_path, train)


def train_variant(variant: VariantConfig, corpora: Corpora, scores: ContentScores,
                  cfg: ExperimentConfig) -> TreeEnsemble:
    content = scores.get(variant)
    transform = SigmoidParams(*variant.transform) if variant.transform else None
    labels = compose_labels(corpora.train, content, cfg.grading, transform)
    channels = [c for c in cfg.train.channels if variant.use_xe_features or c is not Channel.XE]
    tc = replace(cfg.train.with_channels(channels), seed=derive_seed(cfg.master_seed, "variant", variant.name))
    return train_ranker(corpora.train, labels, tc)


@dataclass
class VariantResult:
    variant: VariantConfig
    model: TreeEnsemble | None = None
    offline: EvalReport | None = None
    online: InterleaveReport | None = None
    importance: ImportanceReport | None = None
    error: str | None = None


REPORT_COLUMNS = [
    "variant", "content_label", "transform", "xe_features", "status",
    "ndcg_baseline", "ndcg_variant", "ndcg_pct_change", "ndcg_t", "ndcg_p", "ndcg_n",
    "atc_baseline", "atc_variant", "atc_pct_change", "atc_t", "atc_p", "atc_sessions",
    "xe_rank", "xe_shap", "error",
]


@dataclass
class GridReport:
    baseline: str
    master_seed: int
    results: list[VariantResult] = field(default_factory=list)

    def result(self, name: str) -> VariantResult:
        for r in self.results:
            if r.variant.name == name:
                return r
        raise KeyError(name)

    def rows(self) -> list[dict[str, str]]:
        out = []
        for res in self.results:
            v = res.variant
            row = {c: "" for c in REPORT_COLUMNS}
            row.update({
                "variant": v.name,
                "content_label": v.content_source.value,
                "transform": "" if v.transform is None else f"alpha={v.transform[0]:g};beta={v.transform[1]:g}",
                "xe_features": "yes" if v.use_xe_features else "no",
                "status": "ok" if res.error is None else "failed",
                "error": res.error or "",
            })
            if res.offline:
                row.update(res.offline.summary_row())
            if res.online:
                row.update(res.online.summary_row())
            if res.importance is not None and XE_FEATURE in res.importance.feature_names:
                row["xe_rank"] = str(res.importance.rank_of(XE_FEATURE))
                row["xe_shap"] = f"{res.importance.value_of(XE_FEATURE):.6f}"
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        rows = self.rows()
        cols = [("variant", "Variant"), ("ndcg_pct_change", "NDCG@10 %"), ("ndcg_p", "p"),
                ("atc_pct_change", "ATC@40 %"), ("atc_p", "p"), ("xe_rank", "XE rank"),
                ("xe_shap", "XE mean|SHAP|"), ("status", "status")]
        widths = [max(len(h), *(len(r[c]) for r in rows)) if rows else len(h) for c, h in cols]
        lines = [f"baseline: {self.baseline}   master seed: {self.master_seed}",
                 "  ".join(h.ljust(w) for (_, h), w in zip(cols, widths)),
                 "  ".join("-" * w for w in widths)]
        for r in rows:
            lines.append("  ".join(r[c].ljust(w) for (c, _), w in zip(cols, widths)))
        return "\n".join(lines) + "\n"


def _importance_rows(train: Dataset, cfg: ExperimentConfig) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "importance-sample"))
    n = train.n_items
    return np.sort(rng.choice(n, size=min(cfg.importance_sample, n), replace=False))


def _write_variant_artifacts(res: VariantResult, out_dir: Path) -> None:
    vdir = out_dir / "variants" / res.variant.name
    vdir.mkdir(parents=True, exist_ok=True)
    if res.model is not None:
        save_ensemble(res.model, vdir / "model.json")
    if res.offline is not None:
        (vdir / "offline_per_query.csv").write_text(res.offline.per_query_csv(), encoding="utf-8")
    if res.importance is not None:
        lines = ["rank,feature,mean_abs_shap"]
        lines += [f"{rank},{name},{value:.10f}" for rank, name, value in res.importance.ordered()]
        (vdir / "importance.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if res.online is not None:
        (vdir / "interleaving.json").write_text(
            json.dumps(res.online.summary_row(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    if res.error is not None:
        (vdir / "error.txt").write_text(res.error + "\n", encoding="utf-8")


def run_grid(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> GridReport:
    """Train every variant, compare each against the baseline and write the reports.

    A failing variant is recorded with its error and does not affect the
    others.  When the baseline itself fails, comparisons are skipped.
    """
    if not cfg.variants:
        raise ValueError("the grid needs at least one variant")
    baseline = cfg.baseline
    ordered = [baseline] + [v for v in cfg.variants if v is not baseline]
    corpora = prepare_corpora(cfg)
    scores = ContentScores(corpora, cfg)
    x_train = corpora.train.stacked_features()
    sample = x_train[_importance_rows(corpora.train, cfg)]
    judge_seed = derive_seed(cfg.master_seed, "judge", "offline")
    session_seed = derive_seed(cfg.master_seed, "sessions")
    seg_weights = cfg.generate.segment_proportions

    report = GridReport(baseline.name, cfg.master_seed)
    for v in ordered:
        res = VariantResult(v)
        try:
            logger.info("training variant %s", v.name)
            res.model = train_variant(v, corpora, scores, cfg)
        except Exception as exc:  # noqa: BLE001 - recorded per variant
            res.error = f"{type(exc).__name__}: {exc}"
            logger.debug("variant %s failed\n%s", v.name, traceback.format_exc())
        report.results.append(res)

    base_model = report.results[0].model
    for res in report.results:
        if res.model is None:
            continue
        try:
            res.importance = feature_importance(res.model, sample)
            if base_model is None:
                raise RuntimeError("baseline failed; no comparison possible")
            res.offline = evaluate_offline(base_model, res.model, corpora.evaluation.groups, cfg.judge,
                                           cfg.eval_k, judge_seed)
            res.online = run_interleaving_experiment(base_model, res.model, corpora.evaluation.groups,
                                                     cfg.user, cfg.sessions, session_seed, cfg.atc_depth,
                                                     seg_weights)
        except Exception as exc:  # noqa: BLE001
            res.error = f"{type(exc).__name__}: {exc}"

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for res in report.results:
            _write_variant_artifacts(res, out)
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report
