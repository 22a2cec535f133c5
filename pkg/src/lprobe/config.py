"""INI-style config files with [suite], [model], [train], [measure], [experiment].

Unknown sections or keys are rejected with the offending line number.
Missing keys take the values in :mod:`lprobe.defaults`.
"""
from __future__ import annotations

import configparser
import io
import re
from dataclasses import asdict, dataclass, field, fields, replace

from . import defaults as D
from .datagen import DomainSpec, make_domain_suite
from .measures import AlphaSharpnessConfig, SharpnessConfig
from .model import ModelSpec
from .objectives import TrainConfig

SECTIONS = ("suite", "model", "train", "measure", "experiment")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SuiteConfig:
    num_classes: int = D.NUM_CLASSES
    input_dim: int = D.INPUT_DIM
    prototypes_seed: int = 0
    per_split_counts: tuple[int, ...] = D.SPLIT_COUNTS
    gen_seed: int = 0
    num_domains: int = D.NUM_SHIFTED_DOMAINS
    max_angle: float = D.MAX_SHIFT_ANGLE
    noise_sigma: float = D.NOISE_SIGMA
    shift_bias: float = 0.0

    def domain_specs(self) -> list[DomainSpec]:
        n = self.num_domains
        if n < 1:
            raise ValueError("num_domains must be >= 1")
        return [
            DomainSpec(f"shift{m + 1:02d}", self.max_angle * (m + 1) / n, self.shift_bias, self.noise_sigma)
            for m in range(n)
        ]

    def build(self):
        return make_domain_suite(
            self.num_classes, self.input_dim, self.prototypes_seed, self.per_split_counts,
            self.domain_specs(), self.gen_seed, self.noise_sigma,
        )


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...] = D.HIDDEN_DIMS
    init_seed: int = 0

    def spec(self, input_dim: int, num_classes: int, init_seed: int | None = None) -> ModelSpec:
        seed = self.init_seed if init_seed is None else init_seed
        return ModelSpec(input_dim, self.hidden_dims, num_classes, "relu", seed)


@dataclass(frozen=True)
class MeasureConfig:
    noise_scale: float = D.NOISE_SCALE
    ascent_coeff: float = D.ASCENT_COEFF
    radius_lambda: float = D.RADIUS_LAMBDA
    batch_size: int = D.SHARPNESS_BATCH_SIZE
    num_batches: int = D.SHARPNESS_NUM_BATCHES
    seed: int = 0
    loss_target_offset: float = D.LOSS_TARGET_OFFSET
    ascent_steps: int = D.ASCENT_STEPS
    binary_search_iters: int = D.BINARY_SEARCH_ITERS
    alpha_bounds: tuple[float, ...] = D.ALPHA_BOUNDS

    def sharpness(self) -> SharpnessConfig:
        return SharpnessConfig(self.noise_scale, self.ascent_coeff, self.radius_lambda,
                               self.batch_size, self.num_batches, self.seed)

    def alpha(self) -> AlphaSharpnessConfig:
        return AlphaSharpnessConfig(self.loss_target_offset, self.ascent_steps,
                                    self.binary_search_iters, self.alpha_bounds, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    objectives: tuple[str, ...] = D.OBJECTIVES
    seeds: tuple[int, ...] = tuple(range(D.NUM_SEEDS))
    jobs: int = 1


SECTION_TYPES = {
    "suite": SuiteConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "measure": MeasureConfig,
    "experiment": ExperimentConfig,
}


@dataclass(frozen=True)
class Config:
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    present: frozenset = frozenset(SECTIONS)

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if s not in self.present]
        if missing:
            raise ConfigError(f"missing required section(s): {', '.join('[' + s + ']' for s in missing)}")

    def with_seed(self, seed: int) -> "Config":
        """Override the training seed and the model init seed together."""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            model=replace(self.model, init_seed=seed),
        )


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return low == "true"
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        if default and isinstance(default[0], float):
            return tuple(float(s) for s in items)
        return tuple(int(s) for s in items)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def _line_of(text: str, section: str, key: str | None = None) -> int:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return lineno
    return 0


def parse_config(text: str, source: str = "<config>") -> Config:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    parts = {}
    for section in cp.sections():
        if section not in SECTION_TYPES:
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        cls = SECTION_TYPES[section]
        proto = cls()
        names = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp.items(section):
            line = _line_of(text, section, key)
            if key not in names:
                raise ConfigError(f"{source}:{line}: unknown key {key!r} in [{section}]")
            try:
                values[key] = _convert(raw, getattr(proto, key))
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: [{section}] {key}: {exc}") from None
        try:
            parts[section] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None
    return Config(**parts, present=frozenset(parts))


def load_config(path) -> Config:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: Config) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section in SECTIONS:
        if section not in cfg.present:
            continue
        cp[section] = {k: _format(v) for k, v in asdict(getattr(cfg, section)).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_to_dict(cfg: Config) -> dict:
    return {s: asdict(getattr(cfg, s)) for s in SECTIONS if s in cfg.present}


def config_from_dict(d: dict) -> Config:
    parts = {}
    for section, values in d.items():
        if section not in SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}]")
        cls = SECTION_TYPES[section]
        proto = cls()
        conv = {}
        for k, v in values.items():
            if not hasattr(proto, k):
                raise ConfigError(f"unknown key {k!r} in [{section}]")
            conv[k] = tuple(v) if isinstance(v, list) else v
        parts[section] = cls(**conv)
    return Config(**parts, present=frozenset(parts))
