"""Training configuration, named presets and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .scm import FUNCTION_CLASSES, FunctionClass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    n: int = 3
    fclass: str = "linear"
    noise: float = 0.5
    noise_is_variance: bool = True
    root_default: float = 0.0
    intervention_value: float = 20.0
    horizon: int = 5
    total_steps: int = 500_000
    hidden: tuple = (128, 128, 128)
    gamma: float = 0.99
    lr: float = 1e-4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.1
    buffer_capacity: int = 100_000
    batch_size: int = 64
    warmup: int = 1000
    train_every: int = 1
    sync_every: int = 1000
    eval_every: int = 50_000
    eval_draws: int = 3
    log_every: int = 1000
    random_interventions: bool = False
    # in the random-intervention ablation, keep fitting the unused intervention head
    ablation_train_in: bool = False
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def function_class(self) -> FunctionClass:
        return FunctionClass(self.fclass, self.noise, self.noise_is_variance, self.root_default)

    def validate(self) -> TrainConfig:
        problems = []
        if self.n < 2:
            problems.append("n must be at least 2")
        if self.fclass not in FUNCTION_CLASSES:
            problems.append(f"fclass must be one of {FUNCTION_CLASSES}")
        if self.horizon < 1:
            problems.append("horizon must be at least 1")
        if self.total_steps < self.warmup:
            problems.append("total_steps must be at least warmup")
        if not 1 <= self.eval_every <= self.total_steps:
            problems.append("eval_every must lie in [1, total_steps]")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            problems.append("hidden layer sizes must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append("gamma must lie in [0, 1]")
        if self.lr < 0:
            problems.append("lr must be non-negative")
        for name in ("eps_start", "eps_end", "eps_decay_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        for name in ("buffer_capacity", "batch_size", "train_every", "sync_every",
                     "eval_draws", "log_every"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.batch_size > self.buffer_capacity:
            problems.append("batch_size cannot exceed buffer_capacity")
        if self.noise < 0:
            problems.append("noise must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


_PAPER = {
    3: dict(horizon=5, hidden=(128,) * 3, total_steps=2_000_000),
    4: dict(horizon=8, hidden=(128,) * 3, total_steps=3_500_000),
    5: dict(horizon=10, hidden=(256,) * 3, total_steps=4_500_000),
    8: dict(horizon=12, hidden=(1024,) * 2, total_steps=45_000_000, eval_every=1_000_000),
    10: dict(horizon=15, hidden=(1024,) * 3, total_steps=90_000_000, eval_every=1_000_000),
}

PRESETS: dict[str, dict] = {f"paper-{n}var": dict(n=n, **v) for n, v in _PAPER.items()}
PRESETS["desk-3var"] = dict(PRESETS["paper-3var"], total_steps=500_000)
PRESETS["desk-4var"] = dict(PRESETS["paper-4var"], total_steps=1_000_000)


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}

# keys accepted in run config files on top of the TrainConfig fields
RUN_KEYS = ("preset", "dataset", "out_dir")


def parse_value(key: str, raw: str):
    ftypes = {f.name: f.type for f in fields(TrainConfig)}
    if key in RUN_KEYS:
        return raw
    if key not in ftypes:
        raise ConfigError(f"unknown config key {key!r}")
    kind = ftypes[key]
    default = TrainConfig.__dataclass_fields__[key].default
    try:
        if key == "hidden":
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key} ({kind}): {exc}") from None


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key = key.strip().replace("-", "_")
        try:
            out[key] = parse_value(key, value.strip())
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def resolve_run_config(file_values: dict, overrides: dict) -> tuple[TrainConfig, dict]:
    """Merge preset, file values and overrides (in that precedence order).

    Returns the validated TrainConfig and the run-level keys (dataset, out_dir).
    """
    merged = {**file_values, **overrides}
    run = {k: merged.pop(k) for k in RUN_KEYS if k in merged}
    if "preset" in run and run["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {run['preset']!r}; choose from {sorted(PRESETS)}")
    base = dict(PRESETS[run["preset"]]) if "preset" in run else {}
    cfg = TrainConfig.from_dict({**base, **merged})
    return cfg.validate(), run


def write_config_file(cfg: TrainConfig, path: str | Path, extra: dict | None = None) -> None:
    lines = [f"{k} = {v}" for k, v in (extra or {}).items()]
    for k, v in cfg.to_dict().items():
        if k == "hidden":
            v = ",".join(str(h) for h in v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")

