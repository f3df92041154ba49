"""Experiment configuration: a sectioned INI file read with :mod:`configparser`.

Sections::

    [experiment]   master_seed, eval_queries, judged_pairs, sessions, importance_sample, eval_k, atc_depth
    [generate]     corpus generator settings (GenConfig) plus segment.<name> weights
    [user]         cascade user model (UserModelParams)
    [judge]        thresholds = a, b, c, d ; judge_noise
    [train]        ranker TrainConfig
    [content_gbdt] tree settings of the baseline content scorer
    [scorer]       epochs, learning_rate of the logistic content scorer
    [grading]      non_engaged, clicked, added_to_cart, ordered, normalize_within_group
    [variant.<name>]  content_source = gbdt|scorer|file ; xe_features = yes|no ;
                      transform = alpha, beta ; baseline = yes ; scores_path = file
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .datamodel import SEGMENTS, Channel, ContentSource, Outcome, VariantConfig
from .labelforge import EngagementGrading, ScorerConfig
from .ranker import TrainConfig
from .synthgen import GenConfig, JudgeModelParams, UserModelParams

__all__ = ["ConfigError", "ExperimentConfig", "derive_seed", "load_config", "parse_config"]


class ConfigError(ValueError):
    def __init__(self, message: str, section: str | None = None):
        self.section = section
        super().__init__(f"[{section}] {message}" if section else message)


def derive_seed(master: int, *names: object) -> int:
    """Stable 63-bit seed from a master seed and a path of names."""
    text = "/".join([str(int(master))] + [str(n) for n in names])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    eval_queries: int = 300
    judged_pairs: int = 3000
    sessions: int = 20000
    importance_sample: int = 2000
    eval_k: int = 10
    atc_depth: int = 40
    generate: GenConfig = field(default_factory=GenConfig)
    user: UserModelParams = field(default_factory=UserModelParams)
    judge: JudgeModelParams = field(default_factory=JudgeModelParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    content_gbdt: TrainConfig = field(default_factory=lambda: TrainConfig(
        n_trees=60, max_depth=3, min_leaf_count=20, learning_rate=0.1, channels=(Channel.SPARSE,)))
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    grading: EngagementGrading = field(default_factory=EngagementGrading)
    variants: tuple[VariantConfig, ...] = ()

    def __post_init__(self) -> None:
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variant names must be unique")
        if sum(v.is_baseline for v in self.variants) > 1:
            raise ConfigError("at most one variant may be marked baseline")

    @property
    def baseline(self) -> VariantConfig:
        for v in self.variants:
            if v.is_baseline:
                return v
        if not self.variants:
            raise ConfigError("no variants configured")
        return self.variants[0]

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, master_seed=int(seed))

    @classmethod
    def default(cls) -> ExperimentConfig:
        return cls(variants=default_variants())


def default_variants() -> tuple[VariantConfig, ...]:
    gbdt, scorer = ContentSource.GBDT_BASELINE, ContentSource.CONTENT_SCORER
    return (
        VariantConfig("Baseline", gbdt, None, False, is_baseline=True),
        VariantConfig("X", gbdt, None, True),
        VariantConfig("L", scorer, None, False),
        VariantConfig("LX", scorer, None, True),
        VariantConfig("sigma_c_LX", scorer, (12.0, 0.5), True),
        VariantConfig("sigma_r_LX", scorer, (10.0, 0.7), True),
        VariantConfig("sigma_l_LX", scorer, (10.0, 0.3), True),
    )


# ------------------------------------------------------------------ parsing

_BOOL = {"yes": True, "true": True, "1": True, "on": True, "no": False, "false": False, "0": False, "off": False}


def _get(section: configparser.SectionProxy, key: str, kind, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        if kind is bool:
            return _BOOL[raw.lower()]
        if kind is tuple:
            return tuple(float(v) for v in raw.split(","))
        return kind(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"invalid value for {key}: {raw!r}", section.name) from None


def _section_values(cp: configparser.ConfigParser, name: str, cls, defaults, skip=()) -> dict:
    sec = cp[name]
    out = {}
    for f in fields(cls):
        if f.name in skip or f.name not in sec:
            continue
        current = getattr(defaults, f.name)
        kind = type(current) if not isinstance(current, tuple) else tuple
        out[f.name] = _get(sec, f.name, kind, current)
    known = {f.name for f in fields(cls)} | set(skip)
    for key in sec:
        if key not in known and not key.startswith("segment.") and not key.startswith("impressions."):
            raise ConfigError(f"unknown key {key!r}", name)
    return out


def _require(cp: configparser.ConfigParser, name: str) -> None:
    if not cp.has_section(name):
        raise ConfigError(f"missing config section [{name}]", name)


def parse_config(text: str, required=("generate",)) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in required:
        _require(cp, name)
    base = ExperimentConfig()
    kw: dict = {}
    try:
        if cp.has_section("experiment"):
            kw.update(_section_values(cp, "experiment", ExperimentConfig, base,
                                      skip=("generate", "user", "judge", "train", "content_gbdt",
                                            "scorer", "grading", "variants")))
        user = base.user
        if cp.has_section("user"):
            user = UserModelParams(**_section_values(cp, "user", UserModelParams, base.user))
        kw["user"] = user
        if cp.has_section("generate"):
            sec = cp["generate"]
            vals = _section_values(cp, "generate", GenConfig, base.generate,
                                   skip=("segment_proportions", "history_impressions", "rho_mixture",
                                         "pi_beta", "user"))
            seg = {k.split(".", 1)[1]: float(v) for k, v in sec.items() if k.startswith("segment.")}
            imp = {k.split(".", 1)[1]: int(v) for k, v in sec.items() if k.startswith("impressions.")}
            if set(seg) - set(SEGMENTS):
                raise ConfigError(f"unknown segment in {sorted(seg)}", "generate")
            gen = GenConfig(**vals, user=user)
            if seg:
                gen = replace(gen, segment_proportions=seg)
            if imp:
                gen = replace(gen, history_impressions={**gen.history_impressions, **imp})
            kw["generate"] = gen
        else:
            kw["generate"] = replace(base.generate, user=user)
        if cp.has_section("judge"):
            kw["judge"] = JudgeModelParams(**_section_values(cp, "judge", JudgeModelParams, base.judge))
        if cp.has_section("train"):
            kw["train"] = TrainConfig(**_section_values(cp, "train", TrainConfig, base.train, skip=("channels",)))
        if cp.has_section("content_gbdt"):
            kw["content_gbdt"] = TrainConfig(**{
                **_section_values(cp, "content_gbdt", TrainConfig, base.content_gbdt, skip=("channels",)),
                "channels": (Channel.SPARSE,),
            })
        if cp.has_section("scorer"):
            kw["scorer"] = ScorerConfig(**_section_values(cp, "scorer", ScorerConfig, base.scorer))
        if cp.has_section("grading"):
            sec = cp["grading"]
            grades = dict(base.grading.grades)
            for o in Outcome:
                if o.label in sec:
                    grades[o] = _get(sec, o.label, float, grades[o])
            extra = set(sec) - {o.label for o in Outcome} - {"normalize_within_group"}
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)}", "grading")
            kw["grading"] = EngagementGrading(grades, _get(sec, "normalize_within_group", bool, False))
        kw["variants"] = tuple(_parse_variant(cp, s) for s in cp.sections() if s.startswith("variant."))
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_variant(cp: configparser.ConfigParser, section: str) -> VariantConfig:
    sec = cp[section]
    name = section.split(".", 1)[1]
    allowed = {"content_source", "xe_features", "transform", "baseline", "scores_path"}
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}", section)
    if "content_source" not in sec:
        raise ConfigError("content_source is required", section)
    try:
        source = ContentSource(sec["content_source"].strip())
    except ValueError:
        raise ConfigError(f"unknown content_source {sec['content_source']!r}", section) from None
    transform = None
    if "transform" in sec and sec["transform"].strip().lower() not in ("", "none"):
        t = _get(sec, "transform", tuple, None)
        if len(t) != 2:
            raise ConfigError("transform must be 'alpha, beta'", section)
        transform = (t[0], t[1])
    try:
        return VariantConfig(
            name=name,
            content_source=source,
            transform=transform,
            use_xe_features=_get(sec, "xe_features", bool, False),
            scores_path=sec.get("scores_path"),
            is_baseline=_get(sec, "baseline", bool, False),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), section) from None


def load_config(path: str | Path, required=("generate",)) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, required)
