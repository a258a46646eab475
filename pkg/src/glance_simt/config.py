"""Experiment configuration: one JSON file per experiment, dotted-key overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .curriculum import STRATEGIES, CurriculumSchedule
from .data import TaskSpec
from .model import ModelConfig
from .policy import PolicyFn, policy_from_spec

# keys that locate files rather than describe the experiment
_LOCATION_KEYS = ("data_dir", "out_dir")


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    train_src: str = ""
    train_tgt: str = ""
    train_align: Optional[str] = None
    test_src: str = ""
    test_tgt: str = ""
    test_align: Optional[str] = None
    min_freq: int = 5


@dataclass
class CurriculumConfig:
    # glance: curriculum from seq2seq towards the policy; prefix2prefix: alpha = 0;
    # seq2seq: alpha = 1
    mode: str = "glance"
    alpha_min: float = 0.05
    decay_updates: int = 160000
    glance_strategy: str = "adjacency"
    glance_seed: int = 0
    constant_alpha: bool = False

    def schedule(self) -> CurriculumSchedule:
        if self.mode == "prefix2prefix":
            return CurriculumSchedule(alpha_min=0.0, d=1, strategy="adjacency", constant=True)
        if self.mode == "seq2seq":
            return CurriculumSchedule(alpha_min=1.0, d=1, strategy="adjacency", constant=True)
        return CurriculumSchedule(
            alpha_min=self.alpha_min,
            d=self.decay_updates,
            strategy=self.glance_strategy,
            rng_seed=self.glance_seed,
            constant=self.constant_alpha,
        )


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_tokens: int = 400
    lr: float = 1e-3
    warmup: int = 100
    clip_norm: Optional[float] = 1.0
    log_every: int = 100
    save_every: int = 500


@dataclass
class EvalConfig:
    k_test: list = field(default_factory=lambda: [1, 3, 5, 7, 9])
    max_len_ratio: float = 2.0
    max_len_extra: int = 10


@dataclass
class ExperimentConfig:
    seed: int
    name: str = "experiment"
    task: Optional[TaskSpec] = field(default_factory=TaskSpec)
    corpus: Optional[CorpusConfig] = None
    n_test: int = 500
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: dict = field(default_factory=lambda: {"kind": "wait_k", "k": 1})
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def policy_fn(self) -> PolicyFn:
        return policy_from_spec(self.policy)

    def validate(self) -> None:
        if (self.task is None) == (self.corpus is None):
            raise ConfigError("exactly one of 'task' and 'corpus' must be given")
        try:
            if self.task is not None:
                self.task.validate()
            self.model.validate()
            self.policy_fn()(1, 1)
            if self.curriculum.mode not in ("glance", "prefix2prefix", "seq2seq"):
                raise ValueError(f"unknown curriculum mode {self.curriculum.mode!r}")
            if self.curriculum.glance_strategy.lower() not in STRATEGIES:
                raise ValueError(f"unknown glance_strategy {self.curriculum.glance_strategy!r}")
            self.curriculum.schedule()
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.train.steps < 0 or self.train.batch_tokens < 1 or self.train.log_every < 1:
            raise ConfigError("train.steps >= 0, train.batch_tokens >= 1 and train.log_every >= 1 required")
        if not self.eval.k_test or any(int(k) < 1 for k in self.eval.k_test):
            raise ConfigError("eval.k_test must be a nonempty list of positive integers")
        if self.corpus is not None:
            for key in ("train_src", "train_tgt", "test_src", "test_tgt", "train_align", "test_align"):
                path = getattr(self.corpus, key)
                if path and not Path(path).exists():
                    raise ConfigError(f"corpus.{key}: file {path} does not exist")


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    if "seed" not in data:
        raise ConfigError("'seed' is mandatory")
    sections = {
        "task": TaskSpec,
        "corpus": CorpusConfig,
        "model": ModelConfig,
        "curriculum": CurriculumConfig,
        "train": TrainConfig,
        "eval": EvalConfig,
    }
    for key, cls in sections.items():
        if key in data and data[key] is not None:
            data[key] = _build(cls, data[key], key)
    if isinstance(data.get("policy"), dict):
        data["policy"].setdefault("kind", "wait_k")
    if "corpus" in data and data["corpus"] is not None and "task" not in data:
        data["task"] = None
    cfg = _build(ExperimentConfig, data, "config")
    cfg.validate()
    return cfg


def set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """``key.sub=value``; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load(path=None, overrides: Optional[list[str]] = None, base: Optional[dict] = None) -> ExperimentConfig:
    data: dict = copy.deepcopy(base) if base else {}
    if path is not None:
        try:
            data.update(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    for item in overrides or []:
        set_dotted(data, *parse_override(item))
    return from_dict(data)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def fingerprint(cfg: ExperimentConfig | dict) -> str:
    """Stable hash of the resolved config, ignoring file locations."""
    data = cfg.to_dict() if isinstance(cfg, ExperimentConfig) else copy.deepcopy(cfg)
    for key in _LOCATION_KEYS:
        data.pop(key, None)
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def task_fingerprint(cfg: ExperimentConfig) -> str:
    data = {"task": cfg.to_dict()["task"], "corpus": cfg.to_dict()["corpus"], "n_test": cfg.n_test}
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]
