"""Run configuration files, run directories, and manifests.

A config file is JSON with optional sections; anything omitted takes the
in-code default::

    {
      "seed": 0,
      "checkpoint_every": 10000,
      "train": {"delta": 3.0, "robust": true, ...},      # TrainConfig fields
      "env":   {"force_mag": 10.0, ...},                 # CartPoleParams fields
      "sweep": {"parameter": "force_mag", "grid": [5, 10], "episodes": 100,
                "seed_base": 10000, "mode": "stochastic", "workers": 1,
                "checkpoints": {"wraac": "runs/a/actor.ckpt"}},
      "solve": {"delta": 0.5, "order_p": 1.0, "tol": 1e-8, "max_iter": 100000}
    }

Every section is checked by the same constructor the library uses, so a
file cannot hold a value the code would reject.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .environments import CartPoleParams
from .evaluation import DEFAULT_GRIDS, SweepSpec
from .robust_mdp import WassersteinBall
from .training import TrainConfig

OUTPUT_ROOT_ENV = "WASSRL_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


class ConfigError(ValueError):
    pass


def _reject_unknown(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


@dataclass
class SweepSettings:
    parameter: str = "force_mag"
    grid: tuple = ()
    episodes: int = 100
    seed_base: int = 10_000
    mode: str = "stochastic"
    workers: int = 1
    checkpoints: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid:
            self.grid = DEFAULT_GRIDS.get(self.parameter, ())
        self.grid = tuple(float(v) for v in self.grid)
        if self.mode not in ("stochastic", "greedy"):
            raise ConfigError(f"sweep mode must be 'stochastic' or 'greedy', got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("sweep workers must be >= 1")
        self.spec({})  # full validation

    def spec(self, checkpoints: dict, base_params: CartPoleParams | None = None) -> SweepSpec:
        return SweepSpec(
            parameter=self.parameter,
            grid=self.grid,
            policy_checkpoints=dict(checkpoints),
            episodes_per_point=self.episodes,
            seed_base=self.seed_base,
            mode=self.mode,
            base_params=base_params or CartPoleParams(),
            workers=self.workers,
        )


@dataclass
class SolveSettings:
    delta: float = 0.0
    order_p: float = 1.0
    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        self.ball()
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("solve needs tol > 0 and max_iter >= 1")

    def ball(self) -> WassersteinBall:
        return WassersteinBall(float(self.order_p), float(self.delta))


@dataclass
class RunConfig:
    seed: int = 0
    checkpoint_every: int = 10_000
    train: TrainConfig = field(default_factory=TrainConfig)
    env: CartPoleParams = field(default_factory=CartPoleParams)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    solve: SolveSettings = field(default_factory=SolveSettings)

    def __post_init__(self):
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0 (0 disables periodic checkpoints)")
        if self.train.seed != self.seed:
            self.train = TrainConfig.from_dict({**self.train.to_dict(), "seed": self.seed})

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown("top level", data, ("seed", "checkpoint_every", "train", "env", "sweep", "solve"))
        seed = int(data.get("seed", 0))
        train = dict(data.get("train", {}))
        train.pop("seed", None)
        env = dict(data.get("env", {}))
        _reject_unknown("env", env, [f.name for f in fields(CartPoleParams)])
        sweep = dict(data.get("sweep", {}))
        _reject_unknown("sweep", sweep, [f.name for f in fields(SweepSettings)])
        solve = dict(data.get("solve", {}))
        _reject_unknown("solve", solve, [f.name for f in fields(SolveSettings)])
        try:
            return cls(
                seed=seed,
                checkpoint_every=int(data.get("checkpoint_every", 10_000)),
                train=TrainConfig.from_dict({**train, "seed": seed}),
                env=CartPoleParams(**env),
                sweep=SweepSettings(**sweep),
                solve=SolveSettings(**solve),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        sweep = asdict(self.sweep)
        sweep["grid"] = list(self.sweep.grid)
        return {
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "train": self.train.to_dict(),
            "env": asdict(self.env),
            "sweep": sweep,
            "solve": asdict(self.solve),
        }

    def digest(self) -> str:
        """First 8 hex digits of the SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:8]


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        return RunConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def with_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-key overrides such as ``{"train.delta": 0.5, "seed": 3}``."""
    data = config.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *head, last = key.split(".")
        for part in head:
            node = node[part]
        node[last] = value
    return RunConfig.from_dict(data)


def output_root(cli_value=None) -> Path:
    return Path(cli_value or os.environ.get(OUTPUT_ROOT_ENV) or DEFAULT_OUTPUT_ROOT)


def make_run_dir(root, config: RunConfig, now: datetime | None = None) -> Path:
    """Create ``<root>/<UTC timestamp>-<digest>``, suffixing ``-1``, ``-2``... on collision."""
    now = now or datetime.now(timezone.utc)
    base = f"{now.strftime('%Y%m%dT%H%M%SZ')}-{config.digest()}"
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    candidate = root / base
    k = 0
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            k += 1
            candidate = root / f"{base}-{k}"


def write_snapshot(config: RunConfig, run_dir) -> Path:
    path = Path(run_dir) / "config.json"
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


class Manifest:
    """Collects reproducibility metadata and writes ``manifest.json``."""

    def __init__(self, command: str, config: RunConfig):
        self.data = {
            "command": command,
            "seed": config.seed,
            "config_digest": config.digest(),
            "started_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "versions": {
                "wassrl": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "outputs": [],
        }
        self._t0 = time.perf_counter()

    def add_output(self, path, run_dir) -> None:
        self.data["outputs"].append(str(Path(path).relative_to(run_dir)))

    def write(self, run_dir, **extra) -> Path:
        self.data["wall_seconds"] = round(time.perf_counter() - self._t0, 3)
        self.data.update(extra)
        path = Path(run_dir) / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path
