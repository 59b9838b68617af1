"""Run configuration: TOML in, validated :class:`RunConfig` out."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from .errors import ConfigError, ScenarioError
from .scenarios import DEFAULT_CAP, DEFAULT_EPS, DEFAULT_M_GRID, DEFAULT_N_GRID, DEFAULT_R, override_keys

FORMATS = ("json", "csv")

# fields that change how a run executes but not what it computes
EXECUTION_FIELDS = ("out_dir", "formats", "workers")


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    overrides: dict = field(default_factory=dict)
    eps: tuple = DEFAULT_EPS
    n_grid: tuple = DEFAULT_N_GRID
    M_grid: tuple = DEFAULT_M_GRID
    cap: int = DEFAULT_CAP
    R: int = DEFAULT_R
    seed: int = 0
    n_burn: int | None = None
    delta_star: float = 0.05
    eta_star: float | None = None
    out_dir: str = "out"
    formats: tuple = FORMATS
    workers: int = 1

    def __post_init__(self):
        if self.n_burn is None and self.n_grid:
            object.__setattr__(self, "n_burn", max(self.n_grid) // 4)
        validate(self)

    def scientific(self) -> dict:
        """Fields that determine results; ``workers`` and output paths excluded."""
        d = asdict(self)
        for k in EXECUTION_FIELDS:
            d.pop(k)
        return _plain(d)

    def digest(self) -> str:
        blob = json.dumps(self.scientific(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(obj):
    """JSON-safe copy: tuples to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _increasing(name: str, grid) -> None:
    if not grid:
        raise ConfigError(f"{name} must be nonempty", name)
    if any(not isinstance(v, int) or isinstance(v, bool) for v in grid):
        raise ConfigError(f"{name} must contain integers", name)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{name} must be strictly increasing", name)
    if grid[0] < 1:
        raise ConfigError(f"{name} entries must be >= 1", name)


def validate(cfg: RunConfig) -> None:
    try:
        allowed = override_keys(cfg.scenario)
    except ScenarioError as exc:
        raise ConfigError(str(exc), "scenario") from None
    for key in cfg.overrides:
        if key not in allowed:
            raise ConfigError(f"unknown override {key!r} for {cfg.scenario}; allowed {sorted(allowed)}",
                              f"overrides.{key}")
    _increasing("n_grid", cfg.n_grid)
    _increasing("M_grid", cfg.M_grid)
    if not cfg.eps or any(not isinstance(e, (int, float)) or not 0 < e < 1 for e in cfg.eps):
        raise ConfigError("eps values must lie in (0, 1)", "eps")
    if len(set(cfg.eps)) != len(cfg.eps):
        raise ConfigError("eps values must be distinct", "eps")
    if not isinstance(cfg.R, int) or cfg.R < 1:
        raise ConfigError("R must be a positive integer", "R")
    if not isinstance(cfg.cap, int) or cfg.cap < max(cfg.M_grid):
        raise ConfigError(f"cap must be an integer >= max(M_grid) = {max(cfg.M_grid)}", "cap")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer", "seed")
    if not isinstance(cfg.n_burn, int) or not cfg.n_grid[0] <= cfg.n_burn <= cfg.n_grid[-1]:
        raise ConfigError("n_burn must be an integer within the n_grid range", "n_burn")
    if not 0 <= cfg.delta_star < 1:
        raise ConfigError("delta_star must lie in [0, 1)", "delta_star")
    if cfg.eta_star is not None and not cfg.eta_star >= 0:
        raise ConfigError("eta_star must be non-negative", "eta_star")
    if not cfg.formats or any(f not in FORMATS for f in cfg.formats):
        raise ConfigError(f"formats must be drawn from {FORMATS}", "formats")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers must be a positive integer", "workers")


_TUPLE_FIELDS = {"eps", "n_grid", "M_grid", "formats"}


def from_mapping(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", key)
    if "scenario" not in data:
        raise ConfigError("missing required key 'scenario'", "scenario")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if isinstance(value, (int, float, str)):
                value = [value]
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list", key)
            value = tuple(value)
        elif key == "overrides" and not isinstance(value, dict):
            raise ConfigError("overrides must be a table", key)
        kwargs[key] = value
    return RunConfig(**kwargs)


def parse_config(source: str) -> RunConfig:
    """Parse TOML text; omitted keys take their documented defaults."""
    try:
        data = tomli.loads(source)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_mapping(data)


def serialize_config(cfg: RunConfig) -> str:
    d = asdict(cfg)
    d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items() if v is not None}
    return tomli_w.dumps(d)
