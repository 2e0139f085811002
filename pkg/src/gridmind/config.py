"""Run configuration: YAML in, validated dataclasses out, resolved YAML echo.

A run file holds optional sections (suite, model, rewards, training, eval,
ablation, zero_shot) plus top-level seed and out_dir.  Unknown keys are
rejected by name so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .env import PlanGenConfig, generate_suite
from .errors import ConfigError
from .model import STREAMS, ModelConfig
from .nn import RngStream
from .rewards import RewardConfig
from .training import TrainConfig

SPLIT_GROUPS = 4  # classes pool by class_id modulo this at generation time
_SPLIT_DRAWS = {"18/4": 1, "14/8": 2}  # unseen classes drawn per pool


@dataclass(frozen=True)
class SuiteConfig:
    width: int = 11
    height: int = 11
    obstacle_density: float = 0.15
    num_classes: int = 6
    objects_per_class: int = 1
    train_plans: int = 16
    eval_plans: int = 4
    plan_seed: int = 0

    def plan_gen(self) -> PlanGenConfig:
        return PlanGenConfig(width=self.width, height=self.height,
                             obstacle_density=self.obstacle_density,
                             num_classes=self.num_classes,
                             objects_per_class=self.objects_per_class)


@dataclass(frozen=True)
class ModelSection:
    stream_dim: int = 64
    conv_channels: int = 4
    hidden_dim: int = 64
    z_dim: int = 128
    fused_dim: int = 256
    lstm_dim: int = 256
    dropout: float = 0.1
    streams: tuple = STREAMS
    collab: bool = True


@dataclass(frozen=True)
class EvalSection:
    episodes_per_plan: int = 5
    max_steps: int = 100
    greedy: bool = True
    targets: str = "seen"  # seen | unseen | all
    suite_seed: int = 0

    def __post_init__(self):
        if self.targets not in ("seen", "unseen", "all"):
            raise ConfigError(f"eval targets must be seen/unseen/all, got {self.targets!r}")
        if self.episodes_per_plan < 1:
            raise ConfigError("episodes_per_plan must be positive")


@dataclass(frozen=True)
class AblationSection:
    toggles: tuple = ()
    seeds: tuple = (0, 1, 2)


@dataclass(frozen=True)
class ZeroShotSection:
    enabled: bool = False
    embedding_file: str | None = None
    split: object = "18/4"  # "18/4" | "14/8" | explicit unseen class list
    split_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    model: ModelSection = field(default_factory=ModelSection)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    zero_shot: ZeroShotSection = field(default_factory=ZeroShotSection)

    def model_config(self) -> ModelConfig:
        mode = "similarity" if self.zero_shot.enabled else "one_hot"
        m = self.model
        return ModelConfig(num_classes=self.suite.num_classes,
                           stream_dim=m.stream_dim, conv_channels=m.conv_channels,
                           hidden_dim=m.hidden_dim, z_dim=m.z_dim,
                           fused_dim=m.fused_dim, lstm_dim=m.lstm_dim,
                           dropout=m.dropout, target_mode=mode,
                           streams=m.streams, collab=m.collab)

    def train_config(self, workers: int | None = None) -> TrainConfig:
        t = self.training
        return dataclasses.replace(t, seed=self.seed,
                                   workers=workers if workers else t.workers)


_TUPLE_FIELDS = {"streams", "toggles", "seeds"}


def _build_section(cls, mapping, path, problems):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        problems.append(f"{path} must be a mapping")
        return cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in known:
            problems.append(f"{path}.{key}")
            continue
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"bad {path} section: {exc}") from exc


_SECTIONS = {
    "suite": SuiteConfig, "model": ModelSection, "rewards": RewardConfig,
    "training": TrainConfig, "eval": EvalSection, "ablation": AblationSection,
    "zero_shot": ZeroShotSection,
}


def config_from_dict(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level of a run config must be a mapping")
    problems: list = []
    kwargs = {}
    for key, value in raw.items():
        if key in ("seed", "out_dir"):
            kwargs[key] = value
        elif key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key, problems)
        else:
            problems.append(key)
    if problems:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(problems)))
    for name, cls in _SECTIONS.items():
        kwargs.setdefault(name, cls())
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if dataclasses.is_dataclass(value):
            return {f.name: plain(getattr(value, f.name))
                    for f in fields(value)}
        return value

    out = {"seed": cfg.seed, "out_dir": cfg.out_dir}
    for name in _SECTIONS:
        out[name] = plain(getattr(cfg, name))
    return out


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    cfg = config_from_dict(raw)
    if cfg.zero_shot.embedding_file and not os.path.exists(cfg.zero_shot.embedding_file):
        raise ConfigError(f"embedding file not found: {cfg.zero_shot.embedding_file}")
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    """Echo the fully resolved configuration; loading it back is identical."""
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


# ---------------------------------------------------------------------------
# seen/unseen class split


@dataclass(frozen=True)
class TaskSplit:
    seen: tuple
    unseen: tuple

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise ConfigError("seen and unseen classes overlap: "
                              f"{sorted(set(self.seen) & set(self.unseen))}")
        if not self.seen:
            raise ConfigError("split leaves no seen classes to train on")

    def targets_for(self, requested: str) -> tuple:
        if requested == "seen":
            return self.seen
        if requested == "unseen":
            return self.unseen
        if requested == "all":
            return tuple(sorted(self.seen + self.unseen))
        raise ConfigError(f"unknown target set {requested!r}")


def make_task_split(num_classes: int, split, seed: int = 0) -> TaskSplit:
    """Named draws take `split` unseen classes per pool (pools are
    class_id mod 4); an explicit list fixes the unseen classes directly."""
    if isinstance(split, (list, tuple)):
        unseen = []
        for c in split:
            c = int(c)
            if not 0 <= c < num_classes:
                raise ConfigError(f"unseen class {c} outside 0..{num_classes - 1}")
            if c in unseen:
                raise ConfigError(f"unseen class {c} listed twice")
            unseen.append(c)
        if not unseen:
            raise ConfigError("custom split needs at least one unseen class")
        seen = tuple(c for c in range(num_classes) if c not in unseen)
        return TaskSplit(seen=seen, unseen=tuple(sorted(unseen)))
    if split not in _SPLIT_DRAWS:
        raise ConfigError(f"unknown split {split!r}; use 18/4, 14/8, or a class list")
    draws = _SPLIT_DRAWS[split]
    rng = RngStream(seed, ("task-split",))
    unseen = []
    for pool in range(SPLIT_GROUPS):
        members = [c for c in range(num_classes) if c % SPLIT_GROUPS == pool]
        if len(members) < draws:
            raise ConfigError(f"pool {pool} has {len(members)} classes; "
                              f"split {split} needs {draws} per pool")
        picked = rng.choice(np.array(members), size=draws, replace=False)
        unseen.extend(int(c) for c in np.atleast_1d(picked))
    seen = tuple(c for c in range(num_classes) if c not in unseen)
    return TaskSplit(seen=seen, unseen=tuple(sorted(unseen)))


def apply_split(split: TaskSplit, phase: str, eval_targets: str = "seen") -> tuple:
    """(allowed target classes, detectable classes or None for all).

    Training sees and samples only seen classes; unseen objects are masked
    out of detections at the source.  Evaluation samples the requested set
    with the detector unrestricted.
    """
    if phase == "train":
        return split.seen, split.seen
    if phase == "eval":
        return split.targets_for(eval_targets), None
    raise ConfigError(f"unknown phase {phase!r}")


# ---------------------------------------------------------------------------
# plan suites and evaluation episode lists


def build_plan_suite(cfg: SuiteConfig) -> tuple:
    """(training plans, held-out plans), generated deterministically."""
    plans = generate_suite(cfg.plan_seed, cfg.plan_gen(),
                           cfg.train_plans, cfg.eval_plans)
    train = [p for p in plans if p.split == "train"]
    held = [p for p in plans if p.split != "train"]
    return train, held


def make_eval_suite(plans, allowed, episodes_per_plan: int, seed: int) -> list:
    """Deterministic (plan, target, episode seed) triples."""
    if not plans:
        raise ConfigError("no plans to evaluate on")
    allowed = tuple(allowed)
    if not allowed:
        raise ConfigError("no target classes to evaluate on")
    rng = RngStream(seed, ("eval-suite",))
    suite = []
    for plan in plans:
        for _ in range(episodes_per_plan):
            cls = allowed[int(rng.integers(0, len(allowed)))]
            suite.append((plan, cls, int(rng.integers(0, 2 ** 31))))
    return suite


# ---------------------------------------------------------------------------
# class-embedding files (zero-shot target codes)


def write_class_embeddings(path, names, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(names) != matrix.shape[0]:
        raise ConfigError("need one name per embedding row")
    with open(path, "w") as fh:
        for name, row in zip(names, matrix):
            fh.write(name + " " + " ".join(repr(float(v)) for v in row) + "\n")


def load_class_embeddings(path) -> tuple:
    """(names, (N, d) matrix); rows must be nonzero to act as target codes."""
    if not os.path.exists(path):
        raise ConfigError(f"embedding file not found: {path}")
    names = []
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ConfigError(f"{path}:{lineno}: need a name plus scalars")
            names.append(parts[0])
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no embedding rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{path}: inconsistent row widths {sorted(widths)}")
    matrix = np.array(rows, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        bad = [names[i] for i in np.nonzero(norms == 0.0)[0]]
        raise ConfigError(f"zero-norm embedding rows: {', '.join(bad)}")
    return names, matrix


def default_class_embeddings(num_classes: int, dim: int = 16, seed: int = 7) -> tuple:
    """Synthetic stand-in table when no embedding file is supplied."""
    rng = RngStream(seed, ("class-embeddings",))
    matrix = rng.normal(0.0, 1.0, (num_classes, dim))
    names = [f"class{i:02d}" for i in range(num_classes)]
    return names, np.asarray(matrix, dtype=np.float64)
