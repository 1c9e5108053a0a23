"""Experiment configuration: a flat, human-readable key-value file.

The on-disk format is YAML restricted to scalars (so it doubles as plain
``key: value`` text).  Every key must be known, ``schema_version`` is
required, and values are range-checked before a run starts; a bad config is
rejected with a message naming the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

SCHEMA_VERSION = 1

VARIANTS = ("IM-PB", "CHIME", "SGIM-PB")
ENV_IDS = ("arm-pen", "mobile-pusher")

#: strategy sets per algorithm variant; mimicry strategies are templates that
#: get one instance per configured teacher.
VARIANT_STRATEGIES = {
    "IM-PB": ("outcome-explore", "procedure-explore"),
    "CHIME": ("action-explore", "outcome-explore"),
    "SGIM-PB": (
        "outcome-explore",
        "procedure-explore",
        "mimic-action",
        "mimic-procedure",
    ),
}


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


@dataclass
class TeacherSpec:
    """One demonstration repertoire: what kind of demo, for which space, and
    how densely its goal grid samples that space."""

    kind: str  # "action" | "procedure"
    space: str
    grid: int = 5

    def strategy_id(self) -> str:
        return f"mimic-{self.kind}:{self.space}"


@dataclass
class ExperimentConfig:
    variant: str = "IM-PB"
    env: str = "arm-pen"
    seed: int = 0
    episodes: int = 5000
    snapshot_period: int = 100
    eval_seed: int = 1000

    # memory-based models
    knn_k: int = 3
    resolve_depth: int = 5

    # task-dependency graph
    prune_threshold: float = 0.05
    hierarchy_rate: float = 0.1

    # goal/strategy selection
    interest_window: int = 20
    region_capacity: int = 50
    novelty_bonus: float = 0.01
    exploit_prob: float = 0.7
    uniform_prob: float = 0.2
    random_prob: float = 0.1
    cost_autonomous: float = 1.0
    cost_mimicry: float = 5.0

    # exploration strategies
    action_fresh_prob: float = 0.5
    action_noise_std: float = 0.1
    outcome_noise_std: float = 0.05
    mimic_noise_std: float = 0.05

    # sensorimotor couplings
    coupling_r2_threshold: float = 0.7
    coupling_holdout_min: float = 0.0
    coupling_min_samples: int = 20
    coupling_window: int = 200
    coupling_candidates: int = 3
    contradiction_factor: float = 3.0
    context_gain: float = 0.1
    plan_tolerance: float = 0.05
    plan_step_cap: int = 20

    # demonstration repertoires (empty for autonomous-only variants)
    teachers: list[TeacherSpec] = field(default_factory=list)

    def strategy_ids(self) -> list[str]:
        """Concrete strategy ids for this run, mimicry expanded per teacher."""
        out = []
        for s in VARIANT_STRATEGIES[self.variant]:
            if s in ("mimic-action", "mimic-procedure"):
                for t in self.teachers:
                    if f"mimic-{t.kind}" == s:
                        out.append(t.strategy_id())
            else:
                out.append(s)
        return out

    def strategy_cost(self, strategy_id: str) -> float:
        return self.cost_mimicry if strategy_id.startswith("mimic-") else self.cost_autonomous

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.env not in ENV_IDS:
            raise ConfigError(f"env must be one of {ENV_IDS}, got {self.env!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.snapshot_period < 1:
            raise ConfigError("snapshot_period must be >= 1")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.resolve_depth < 1:
            raise ConfigError("resolve_depth must be >= 1")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ConfigError("prune_threshold must lie in [0, 1)")
        if not 0.0 < self.hierarchy_rate <= 1.0:
            raise ConfigError("hierarchy_rate must lie in (0, 1]")
        if self.interest_window < 2:
            raise ConfigError("interest_window must be >= 2")
        if self.region_capacity < 2:
            raise ConfigError("region_capacity must be >= 2")
        probs = (self.exploit_prob, self.uniform_prob, self.random_prob)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("selection mode probabilities must be >= 0 and sum to 1")
        if self.cost_autonomous <= 0 or self.cost_mimicry <= 0:
            raise ConfigError("strategy costs must be positive")
        for name in ("action_fresh_prob",):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("action_noise_std", "outcome_noise_std", "mimic_noise_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.coupling_r2_threshold <= 1.0:
            raise ConfigError("coupling_r2_threshold must lie in (0, 1]")
        if not self.coupling_holdout_min <= 1.0:
            raise ConfigError("coupling_holdout_min must be <= 1.0")
        if self.coupling_min_samples < 2:
            raise ConfigError("coupling_min_samples must be >= 2")
        if self.coupling_window < self.coupling_min_samples:
            raise ConfigError("coupling_window must cover coupling_min_samples")
        if self.coupling_candidates < 1:
            raise ConfigError("coupling_candidates must be >= 1")
        if self.contradiction_factor <= 1.0:
            raise ConfigError("contradiction_factor must exceed 1")
        if not 0.0 < self.context_gain < 1.0:
            raise ConfigError("context_gain must lie in (0, 1)")
        if not 0.0 < self.plan_tolerance < 1.0:
            raise ConfigError("plan_tolerance must lie in (0, 1)")
        if self.plan_step_cap < 1:
            raise ConfigError("plan_step_cap must be >= 1")
        needs_teacher = self.variant == "SGIM-PB"
        if needs_teacher and not self.teachers:
            raise ConfigError("SGIM-PB requires at least one teacher spec")
        if self.variant != "SGIM-PB" and self.teachers:
            raise ConfigError(f"variant {self.variant} takes no teachers")
        for t in self.teachers:
            if t.kind not in ("action", "procedure"):
                raise ConfigError(f"teacher kind must be action|procedure, got {t.kind!r}")
            if t.grid < 1:
                raise ConfigError("teacher grid must be >= 1")


_SCALAR_FIELDS = {
    f.name: f
    for f in dataclasses.fields(ExperimentConfig)
    if f.name not in ("teachers",)
}
_INT_FIELDS = {
    "seed",
    "episodes",
    "snapshot_period",
    "eval_seed",
    "knn_k",
    "resolve_depth",
    "interest_window",
    "region_capacity",
    "coupling_min_samples",
    "coupling_window",
    "coupling_candidates",
    "plan_step_cap",
}


def parse_teachers(raw: str) -> list[TeacherSpec]:
    """Parse ``kind:space[:grid]`` items separated by commas."""
    specs = []
    for item in str(raw).split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"bad teacher spec {item!r}, want kind:space[:grid]")
        kind, space = parts[0].strip(), parts[1].strip()
        grid = 5
        if len(parts) == 3:
            try:
                grid = int(parts[2])
            except ValueError as e:
                raise ConfigError(f"bad teacher grid in {item!r}") from e
        specs.append(TeacherSpec(kind=kind, space=space, grid=grid))
    return specs


def config_from_mapping(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config file must hold key: value pairs")
    if "schema_version" not in data:
        raise ConfigError("config is missing required key schema_version")
    version = data.pop("schema_version")
    if int(version) != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version}, this build reads {SCHEMA_VERSION}"
        )
    cfg = ExperimentConfig()
    for key, raw in data.items():
        if key == "teachers":
            cfg.teachers = parse_teachers(raw) if raw else []
            continue
        if key not in _SCALAR_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in _INT_FIELDS:
                value = int(raw)
            elif key in ("variant", "env"):
                value = str(raw)
            else:
                value = float(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from e
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"unparsable config file: {e}") from e
    if data is None:
        raise ConfigError("empty config file")
    return config_from_mapping(data)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize a config back to the flat text format (stable key order)."""
    lines = [f"schema_version: {SCHEMA_VERSION}"]
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "teachers":
            if cfg.teachers:
                spec = ",".join(f"{t.kind}:{t.space}:{t.grid}" for t in cfg.teachers)
                lines.append(f"teachers: {spec}")
            continue
        lines.append(f"{f.name}: {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"
