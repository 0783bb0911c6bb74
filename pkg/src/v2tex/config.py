"""Flat ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .objective import LossConfig
from .trainer import TrainConfig
from .v1 import SteerableConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # V1
    scales: int = 5
    orientations: int = 4
    grid_factor: int = 4
    # V2
    filters: int = 60
    kernel: int = 7
    pool: int = 4
    # training
    lr: float = 0.001
    batch: int = 275
    epochs: int = 1
    lam: float = 1.0
    epsilon: float = 1e-8
    checkpoint_every: int = 0
    rotations: bool = False
    # classifier
    shrinkage: float = 0.1
    uniform_prior: bool = False
    # data
    image_size: int = 224
    families: int = 4
    samples: int = 100
    seed: int = 0

    def validate(self) -> "RunConfig":
        try:
            self.steerable
            self.train_config
            self.loss_config
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (self.filters >= 1, "filters must be >= 1"),
            (self.kernel >= 1, "kernel must be >= 1"),
            (self.pool >= 1, "pool must be >= 1"),
            (0.0 <= self.shrinkage <= 1.0, "shrinkage must lie in [0, 1]"),
            (self.image_size == 0 or self.image_size % self.grid_factor == 0,
             "image_size must be 0 or a multiple of grid_factor"),
            (self.image_size == 0 or self.image_size >= 2 ** self.scales,
             "image_size too small for the number of scales"),
            (self.families >= 2, "families must be >= 2"),
            (self.samples >= 1, "samples must be >= 1"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def steerable(self) -> SteerableConfig:
        return SteerableConfig(self.scales, self.orientations, self.grid_factor)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, epsilon=self.epsilon, pool=self.pool)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.lr, batch_size=self.batch, epochs=self.epochs,
                           seed=self.seed, lam=self.lam, epsilon=self.epsilon, pool=self.pool,
                           num_filters=self.filters, kernel_size=self.kernel,
                           checkpoint_every=self.checkpoint_every)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate()


ALIASES = {"lambda": "lam", "learning_rate": "lr", "batch_size": "batch", "gamma": "shrinkage",
           "num_scales": "scales", "num_orientations": "orientations", "common_grid_factor": "grid_factor",
           "d": "filters", "pool_window": "pool"}


def _coerce(name, typ, raw):
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if typ in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
