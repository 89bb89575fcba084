"""Experiment configuration: TOML file -> validated dataclasses.

Unknown keys are rejected anywhere in the file. Every section is optional and
falls back to the defaults below; ``configs/example.toml`` lists them all.
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .aggregation import AggregationRule
from .attacks import AttackSpec, TransportAdversary
from .data import PartitionSpec, PopulationSpec
from .errors import ConfigInvalid
from .ldp import Mode, PrivacyParams
from .model import ModelSpec, TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    l2_lambda: float = 0.01
    intercept: bool = True

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0
    mode: str = "analytic"
    eps_budget: float = math.inf
    delta_budget: float = 0.5
    # per-client epsilon for clients that need more (or less) noise
    eps_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in [m.value for m in Mode]:
            raise ValueError(f"mode must be one of {', '.join(m.value for m in Mode)}")
        PrivacyParams(self.epsilon, self.delta, self.clip_norm, Mode(self.mode))
        if not self.eps_budget > 0:
            raise ValueError("eps_budget must be positive")
        if not 0 < self.delta_budget < 1:
            raise ValueError("delta_budget must lie in (0, 1)")
        try:
            overrides = {int(k): float(v) for k, v in self.eps_overrides.items()}
        except (TypeError, ValueError):
            raise ValueError("eps_overrides must map client ids to numbers") from None
        if any(not v > 0 for v in overrides.values()):
            raise ValueError("eps_overrides must be positive")
        object.__setattr__(self, "eps_overrides", overrides)

    def params_for(self, client_id: int) -> PrivacyParams:
        eps = self.eps_overrides.get(client_id, self.epsilon)
        return PrivacyParams(eps, self.delta, self.clip_norm, Mode(self.mode))


@dataclass(frozen=True)
class AggregationConfig:
    rule: str = "mean"

    def __post_init__(self):
        try:
            AggregationRule.parse(self.rule)
        except ValueError as exc:
            raise ValueError(f"rule {exc}") from None

    @property
    def parsed(self) -> AggregationRule:
        return AggregationRule.parse(self.rule)


@dataclass(frozen=True)
class AttackConfig:
    """``attackers`` names malicious clients explicitly; otherwise the first
    ``round(attacker_fraction * n_clients)`` client ids are malicious."""

    kind: str = "none"
    attackers: list | None = None
    attacker_fraction: float = 0.0
    frac: float = 0.0
    target_shift: list = field(default_factory=list)
    factor: float = 50.0
    sigma_a: float = 1.0

    def __post_init__(self):
        AttackSpec(self.kind, (), self.frac, self.target_shift, self.factor, self.sigma_a)
        if not 0 <= self.attacker_fraction <= 1:
            raise ValueError("attacker_fraction must lie in [0, 1]")
        if self.attackers is not None and any(not isinstance(a, int) or a < 0 for a in self.attackers):
            raise ValueError("attackers must be nonnegative client ids")

    def spec(self, n_clients: int) -> AttackSpec:
        if self.attackers is not None:
            ids = frozenset(self.attackers)
        else:
            ids = frozenset(range(int(round(self.attacker_fraction * n_clients))))
        return AttackSpec(self.kind, ids, self.frac, self.target_shift, self.factor, self.sigma_a)


@dataclass(frozen=True)
class TransportConfig:
    drop_prob: float = 0.0
    tamper_index: int = -1
    tamper_byte: int = 0
    replay: bool = False
    forge: bool = False
    targets: list | None = None

    def __post_init__(self):
        self.adversary  # validates

    @property
    def adversary(self) -> TransportAdversary:
        idx = None if self.tamper_index < 0 else self.tamper_index
        return TransportAdversary(self.drop_prob, idx, self.tamper_byte, self.replay, self.forge,
                                  None if self.targets is None else frozenset(self.targets))


@dataclass(frozen=True)
class DefenseConfig:
    detect: bool = True
    reputation: bool = True
    tau: float = 3.0
    reward: float = 0.05
    penalty: float = 0.25
    theta_min: float = 0.2
    initial_trust: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.reward < 0:
            raise ValueError("reward must be >= 0")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if not 0 <= self.theta_min <= 1:
            raise ValueError("theta_min must lie in [0, 1]")
        if not 0 <= self.initial_trust <= 1:
            raise ValueError("initial_trust must lie in [0, 1]")


@dataclass(frozen=True)
class CompressionConfig:
    kind: str = "none"
    k: int = 1
    bits: int = 8
    range: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "top_k", "quantize"):
            raise ValueError("kind must be one of none, top_k, quantize")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if not self.range > 0:
            raise ValueError("range must be positive")


@dataclass(frozen=True)
class RunConfig:
    rounds: int = 50
    client_fraction: float = 1.0
    seed: int = 0
    output: str = "metrics.jsonl"
    eval_size: int = 1000

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.eval_size < 1:
            raise ValueError("eval_size must be >= 1")


SECTIONS = {
    "experiment": RunConfig,
    "population": PopulationSpec,
    "partition": PartitionSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "privacy": PrivacyConfig,
    "aggregation": AggregationConfig,
    "attack": AttackConfig,
    "transport": TransportConfig,
    "defense": DefenseConfig,
    "compression": CompressionConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: RunConfig = field(default_factory=RunConfig)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec.for_features(self.population.d, self.model.l2_lambda, self.model.intercept)

    @property
    def attack_spec(self) -> AttackSpec:
        return self.attack.spec(self.partition.n_clients)

    @property
    def rule(self) -> AggregationRule:
        return self.aggregation.parsed

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: copy.deepcopy(getattr(section, f.name)) for f in fields(section)}
        return out


def _build_section(name: str, cls, table) -> object:
    if not isinstance(table, dict):
        raise ConfigInvalid(name, "must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigInvalid(f"{name}.{key}", "unknown key")
    for key, value in table.items():
        default = getattr(cls(), key) if key in known else None
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigInvalid(f"{name}.{key}", "must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigInvalid(f"{name}.{key}", "must be a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigInvalid(f"{name}.{key}", "must be an integer")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigInvalid(f"{name}.{key}", "must be a string")
    try:
        return cls(**table)
    except ConfigInvalid:
        raise
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        head, _, rest = msg.partition(" ")
        if head in known and rest:
            raise ConfigInvalid(f"{name}.{head}", rest) from None
        raise ConfigInvalid(name, msg) from None


def from_dict(raw: dict) -> ExperimentConfig:
    for key in raw:
        if key not in SECTIONS:
            raise ConfigInvalid(key, "unknown key")
    sections = {name: _build_section(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = ExperimentConfig(**sections)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig) -> None:
    n = cfg.partition.n_clients
    if n > cfg.population.n_total:
        raise ConfigInvalid("partition.n_clients", "exceeds population.n_total")
    if n * cfg.partition.min_shard > cfg.population.n_total:
        raise ConfigInvalid("partition.min_shard", "n_clients * min_shard exceeds population.n_total")
    spec = cfg.attack_spec
    if any(a >= n for a in spec.attackers):
        raise ConfigInvalid("attack.attackers", f"client ids must be below n_clients={n}")
    if cfg.attack.kind == "data_poison" and cfg.attack.target_shift and len(cfg.attack.target_shift) != cfg.population.d:
        raise ConfigInvalid("attack.target_shift", f"must have length population.d={cfg.population.d}")
    if any(c >= n or c < 0 for c in cfg.privacy.eps_overrides):
        raise ConfigInvalid("privacy.eps_overrides", f"client ids must be below n_clients={n}")
    if cfg.compression.kind == "top_k" and cfg.compression.k > cfg.model_spec.dimension:
        raise ConfigInvalid("compression.k", f"must not exceed the model dimension {cfg.model_spec.dimension}")


def load_raw(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid TOML: {exc}") from None


def parse_value(text: str):
    """Interpret an override value as a TOML value, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Return a copy of ``raw`` with ``section.key=value`` assignments applied."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigInvalid(item, "override must look like section.key=value")
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigInvalid(key.strip(), "override key must be section.key")
        out.setdefault(parts[0], {})
        if not isinstance(out[parts[0]], dict):
            raise ConfigInvalid(parts[0], "must be a table")
        out[parts[0]][parts[1]] = parse_value(value.strip())
    return out


def parse_config(path, overrides=()) -> ExperimentConfig:
    return from_dict(apply_overrides(load_raw(path), overrides))
