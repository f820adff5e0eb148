"""Run configuration: YAML loading, validation and provenance hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .cohort import WINDOW_MONTHS


class ConfigError(Exception):
    """Invalid or missing configuration; maps to exit code 2."""


@dataclass
class SynthSection:
    patients: int = 100
    schedule: tuple[int, ...] = (0, 6, 12, 18, 24, 30, 36)
    group_proportions: tuple[float, float, float] = (0.4, 0.4, 0.2)
    slope_mean: float = 0.15
    slope_sd: float = 0.15
    offset_sd: float = 6.0
    n_features: int = 8
    feature_noise_sd: float = 0.5
    score_noise_sd: float = 1.0
    missing_rate: float = 0.05


@dataclass
class PreprocessSection:
    min_visits: int = 4
    required_months: tuple[int, ...] = WINDOW_MONTHS
    max_missing: float = 0.90
    month_tolerance: int = 0
    features: dict | None = None        # group -> [name-or-pattern, ...]


@dataclass
class CVSection:
    folds: int = 10
    hyper_budget: int = 5
    normalize_scope: str = "per_fold"


@dataclass
class CoxSection:
    mode: str = "levels"                # or "first_differences"
    normalize_probabilities: bool = False


@dataclass
class ClassifierSection:
    C: float = 1.0
    epochs: int = 300
    class_weight: str | None = None
    folds: int = 10


@dataclass
class ClusterSection:
    k: int = 3


@dataclass
class RunConfig:
    seed: int = 0
    report_dir: str = "reports"
    input_cohort: str | None = None
    input_schema: str | None = None
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    cv: CVSection = field(default_factory=CVSection)
    cox: CoxSection = field(default_factory=CoxSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)

    def to_dict(self):
        return {
            "seed": self.seed,
            "report_dir": self.report_dir,
            "input": {"cohort": self.input_cohort, "schema": self.input_schema},
            "synth": _section_dict(self.synth),
            "preprocess": _section_dict(self.preprocess),
            "cv": _section_dict(self.cv),
            "cox": _section_dict(self.cox),
            "classifier": _section_dict(self.classifier),
            "cluster": _section_dict(self.cluster),
        }


def _section_dict(section):
    out = {}
    for name, value in vars(section).items():
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def _fill_section(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path!r} must be a mapping")
    kwargs = {}
    valid = set(cls.__dataclass_fields__)
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown key {path}.{key}")
        default = cls.__dataclass_fields__[key].default
        if isinstance(value, list) and not isinstance(default, dict):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {"seed", "report_dir", "input", "synth", "preprocess", "cv",
             "cox", "classifier", "cluster"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    inp = data.get("input") or {}
    if not isinstance(inp, dict):
        raise ConfigError("config section 'input' must be a mapping")
    cfg = RunConfig(
        seed=int(data.get("seed", 0)),
        report_dir=str(data.get("report_dir", "reports")),
        input_cohort=inp.get("cohort"),
        input_schema=inp.get("schema"),
        synth=_fill_section(SynthSection, data.get("synth"), "synth"),
        preprocess=_fill_section(PreprocessSection, data.get("preprocess"),
                                 "preprocess"),
        cv=_fill_section(CVSection, data.get("cv"), "cv"),
        cox=_fill_section(CoxSection, data.get("cox"), "cox"),
        classifier=_fill_section(ClassifierSection, data.get("classifier"),
                                 "classifier"),
        cluster=_fill_section(ClusterSection, data.get("cluster"), "cluster"),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.cv.normalize_scope not in ("per_fold", "global"):
        raise ConfigError("cv.normalize_scope must be per_fold or global")
    if cfg.cox.mode not in ("levels", "first_differences"):
        raise ConfigError("cox.mode must be levels or first_differences")
    if cfg.classifier.C <= 0:
        raise ConfigError("classifier.C must be > 0")
    if cfg.cv.folds < 2:
        raise ConfigError("cv.folds must be >= 2")
    if not 0 < cfg.preprocess.max_missing <= 1:
        raise ConfigError("preprocess.max_missing must lie in (0, 1]")
    if cfg.preprocess.min_visits < 1:
        raise ConfigError("preprocess.min_visits must be >= 1")
    if cfg.cluster.k < 1:
        raise ConfigError("cluster.k must be >= 1")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(data or {})


def config_hash(cfg: RunConfig) -> str:
    """Provenance hash of the run parameters.

    ``report_dir`` is excluded: it only says where reports land, so the same
    scientific configuration hashes identically wherever it is written.
    """
    payload = cfg.to_dict()
    payload.pop("report_dir", None)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
