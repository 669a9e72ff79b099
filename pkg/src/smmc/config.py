"""Run configuration: a JSON document describing one end-to-end experiment."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bnn import BnnConfig
from .dataset import STRATEGIES
from .gp import LINKS, GpConfig
from .guarantees import NORMALIZERS
from .pctmc import PCTMCModel, bundled_model, load_model, validate_model
from .stl import check_formula, parse_stl

BACKENDS = ("gp", "bnn")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Sizes:
    n_train: int = 500
    m_train: int = 50
    n_cal: int = 200
    m_cal: int | None = None  # defaults to m_train
    n_test: int = 1000
    m_test: int = 1000

    @property
    def calibration_trials(self) -> int:
        return self.m_train if self.m_cal is None else self.m_cal


@dataclass(frozen=True)
class RandomModelSpec:
    r: int = 4
    count: int = 1
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: str = "bundled:sir"
    param_space: list | None = None
    random_model: RandomModelSpec | None = None
    formula: str = "(I > 0) U[100,120] (I == 0)"
    horizon: float = 120.0
    sizes: Sizes = field(default_factory=Sizes)
    train_strategy: str = "uniform-grid"
    eval_strategy: str = "uniform-random"
    backend: str = "gp"
    gp: GpConfig = field(default_factory=GpConfig)
    bnn: BnnConfig = field(default_factory=BnnConfig)
    epsilon: float = 0.05
    epsilon2: float = 0.05
    normalizer: str = "posterior-std"
    z: float = 1.96
    n_samples: int = 1000
    out: str = "run"
    seed: int = 0
    threads: int | None = None

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        doc = dict(doc)
        try:
            if "sizes" in doc:
                doc["sizes"] = Sizes(**doc["sizes"])
            if doc.get("random_model") is not None:
                doc["random_model"] = RandomModelSpec(**doc["random_model"])
            if "gp" in doc:
                doc["gp"] = GpConfig(**doc["gp"])
            if "bnn" in doc:
                bnn = dict(doc["bnn"])
                if "hidden_widths" in bnn:
                    bnn["hidden_widths"] = tuple(bnn["hidden_widths"])
                doc["bnn"] = BnnConfig(**bnn)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        config = cls(**doc)
        if base_dir is not None and not config.model.startswith("bundled:"):
            model = Path(config.model)
            if not model.is_absolute():
                config = dataclasses.replace(config, model=str(base_dir / model))
        return config

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, **kwargs) -> RunConfig:
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return dataclasses.replace(self, **kwargs)

    def load_model(self) -> PCTMCModel:
        if self.model.startswith("bundled:"):
            try:
                model = bundled_model(self.model.split(":", 1)[1])
            except FileNotFoundError:
                raise ConfigError(f"no bundled model {self.model!r}") from None
        else:
            try:
                model = load_model(self.model)
            except OSError as exc:
                raise ConfigError(f"cannot read model {self.model}: {exc}") from None
        if self.param_space is not None:
            model = model.with_param_space(self.param_space)
        return model


def _range_errors(config: RunConfig) -> list[str]:
    errors = []
    for name, value in dataclasses.asdict(config.sizes).items():
        if value is not None and value < 1:
            errors.append(f"sizes.{name} must be >= 1 (got {value})")
    if config.sizes.m_cal is not None and config.sizes.m_cal != config.sizes.m_train:
        errors.append(
            f"calibration trials sizes.m_cal ({config.sizes.m_cal}) must equal training trials "
            f"sizes.m_train ({config.sizes.m_train})"
        )
    for name in ("epsilon", "epsilon2"):
        value = getattr(config, name)
        if not 0 < value < 1:
            errors.append(f"{name} must lie in (0, 1) (got {value})")
    if config.horizon <= 0:
        errors.append("horizon must be positive")
    if config.z <= 0:
        errors.append("z must be positive")
    if config.n_samples < 2:
        errors.append("n_samples must be >= 2")
    if config.backend not in BACKENDS:
        errors.append(f"unknown backend {config.backend!r}; choose from {BACKENDS}")
    if config.normalizer not in NORMALIZERS or config.normalizer == "id":
        errors.append(f"normalizer must be one of {NORMALIZERS[1:]} (got {config.normalizer!r})")
    for name in ("train_strategy", "eval_strategy"):
        if getattr(config, name) not in STRATEGIES:
            errors.append(f"{name} must be one of {STRATEGIES}")
    if config.threads is not None and config.threads < 1:
        errors.append("threads must be >= 1")
    gp, bnn = config.gp, config.bnn
    if gp.m_max < 1 or gp.epochs < 0 or gp.batch_size < 1 or gp.n_nodes < 2:
        errors.append("gp: m_max >= 1, epochs >= 0, batch_size >= 1 and n_nodes >= 2 required")
    if not 0 <= gp.learning_rate <= 1 or gp.jitter <= 0 or gp.lengthscale <= 0 or gp.variance <= 0:
        errors.append("gp: learning_rate in [0, 1] and positive jitter, lengthscale, variance required")
    if gp.link not in LINKS:
        errors.append(f"gp: unknown link {gp.link!r}")
    if bnn.epochs < 0 or bnn.batch_size < 1 or bnn.n_mc < 1 or bnn.n_samples < 2:
        errors.append("bnn: epochs >= 0, batch_size >= 1, n_mc >= 1 and n_samples >= 2 required")
    if not 0 <= bnn.learning_rate <= 1 or any(w < 1 for w in bnn.hidden_widths):
        errors.append("bnn: learning_rate in [0, 1] and hidden widths >= 1 required")
    try:
        parse_stl(config.formula)
    except ValueError as exc:
        errors.append(f"formula: {exc}")
    if config.random_model is not None:
        spec = config.random_model
        if spec.r < 1 or spec.count < 1:
            errors.append("random_model: r and count must be >= 1")
    return errors


def validate_config(config: RunConfig, need_model: bool = True) -> list[str]:
    """Every problem with ``config``; empty when it is usable."""
    errors = _range_errors(config)
    if not need_model:
        return errors
    try:
        model = config.load_model()
    except (ConfigError, ValueError, KeyError) as exc:
        return errors + [str(exc)]
    errors += [f"model: {v}" for v in validate_model(model)]
    if not any(e.startswith("formula:") for e in errors):
        try:
            check_formula(parse_stl(config.formula), model.species, config.horizon)
        except (ValueError, KeyError) as exc:
            errors.append(f"formula: {exc}")
    return errors
