"""Pipeline configuration: one TOML-style sections file, all defaults embedded.

The file format is a strict subset of TOML: `[section]` headers and
`key = value` lines where the value is JSON-encoded (strings quoted,
booleans lowercase, arrays in brackets). Loading a saved config reproduces
it losslessly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

from .errors import ConfigError

SECTION_MAP = {
    "paths": ["food_db", "posts", "vectors", "out_dir"],
    "embeddings": ["fallback_dim"],
    "calibration": ["sample_size", "quantile", "precision"],
    "matcher": ["threshold", "kcal_low", "kcal_high"],
    "corpus": ["covid_start", "covid_end", "experienced_fraction", "resonant_quantile"],
    "mining": ["cutoff", "alpha"],
    "model": [
        "tasks",
        "feature_sets",
        "test_fraction",
        "n_bootstrap",
        "use_tuned",
        "engagement_estimators",
        "engagement_depth",
        "engagement_lr",
        "resonance_estimators",
        "resonance_depth",
        "resonance_lr",
    ],
    "explain": [
        "explain_feature_sets",
        "explain_mode",
        "explain_instances",
        "explain_instance_ids",
        "explain_permutations",
        "background_size",
    ],
    "run": ["master_seed"],
}

ALL_FEATURE_SETS = ["C", "C+N", "C+F", "C+E", "C+N+F", "C+N+E", "C+F+E", "C+N+F+E"]


@dataclass
class PipelineConfig:
    food_db: str = ""
    posts: str = ""
    vectors: str = ""
    out_dir: str = "run"

    fallback_dim: int = 256

    sample_size: int = 5000
    quantile: float = 0.999
    precision: float = 0.01

    threshold: float = 0.0  # 0 means: take it from the calibration stage
    kcal_low: float = 32.0
    kcal_high: float = 717.0

    covid_start: str = "2020-03-01T00:00:00Z"
    covid_end: str = "2021-07-01T00:00:00Z"
    experienced_fraction: float = 0.05
    resonant_quantile: float = 0.99

    cutoff: float = 0.01
    alpha: float = 0.05

    tasks: list = field(default_factory=lambda: ["engagement", "resonance"])
    feature_sets: list = field(default_factory=lambda: list(ALL_FEATURE_SETS))
    test_fraction: float = 0.2
    n_bootstrap: int = 1000
    use_tuned: bool = False
    engagement_estimators: int = 26
    engagement_depth: int = 4
    engagement_lr: float = 0.3
    resonance_estimators: int = 36
    resonance_depth: int = 2
    resonance_lr: float = 0.4

    explain_feature_sets: list = field(default_factory=lambda: ["C+N"])
    explain_mode: str = "sample"
    explain_instances: int = 150
    explain_instance_ids: list = field(default_factory=list)
    explain_permutations: int = 200
    background_size: int = 100

    master_seed: int = 7

    def validate(self):
        if not self.food_db or not self.posts:
            raise ConfigError("food_db and posts paths are required")
        if not 0 < self.quantile < 1:
            raise ConfigError("calibration quantile must be in (0, 1)")
        if not self.kcal_low < self.kcal_high:
            raise ConfigError("kcal_low must be below kcal_high")
        for task in self.tasks:
            if task not in ("engagement", "resonance"):
                raise ConfigError(f"unknown task {task!r}")
        if self.explain_mode not in ("sample", "exact"):
            raise ConfigError(f"explain mode must be sample or exact, not {self.explain_mode!r}")
        if self.covid_bounds()[0] > self.covid_bounds()[1]:
            raise ConfigError("covid_start must not be after covid_end")
        return self

    def covid_bounds(self) -> tuple[int, int]:
        return (parse_utc(self.covid_start), parse_utc(self.covid_end))

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.master_seed}:{stage}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little") % (2**31)

    def task_model_config(self, task: str) -> dict:
        if task == "engagement":
            return {
                "n_estimators": self.engagement_estimators,
                "max_depth": self.engagement_depth,
                "learning_rate": self.engagement_lr,
            }
        return {
            "n_estimators": self.resonance_estimators,
            "max_depth": self.resonance_depth,
            "learning_rate": self.resonance_lr,
        }

    def to_dict(self) -> dict:
        return {
            section: {key: getattr(self, key) for key in keys}
            for section, keys in SECTION_MAP.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for section, entries in data.items():
            if section not in SECTION_MAP:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(entries, dict):
                raise ConfigError(f"section [{section}] must hold key = value lines")
            for key, value in entries.items():
                if key not in known or key not in SECTION_MAP[section]:
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                kwargs[key] = value
        return cls(**kwargs)


def parse_utc(text: str) -> int:
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ConfigError(f"bad timestamp {text!r}: {exc}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def loads_config(text: str) -> PipelineConfig:
    data: dict[str, dict] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        try:
            data[section][key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key.strip()!r}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def dumps_config(cfg: PipelineConfig) -> str:
    lines = []
    for section, entries in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {json.dumps(value)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))
