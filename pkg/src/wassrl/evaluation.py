"""Robustness sweeps of trained actors over Cart-Pole parameter grids."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environments import CartPoleParams, run_episode
from .neural import DenseNet, load_checkpoint, policy_forward
from .training import sample_action

SWEEP_PARAMETERS = ("force_mag", "mass_pole")
DEFAULT_GRIDS = {
    "force_mag": (5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0),
    "mass_pole": (0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5),
}
CSV_COLUMNS = ("policy", "parameter", "value", "mean", "std", "n")


def actor_policy(actor: DenseNet, mode: str = "stochastic"):
    """Wrap an actor as ``policy(obs, rng) -> action``."""
    if mode not in ("stochastic", "greedy"):
        raise ValueError(f"mode must be 'stochastic' or 'greedy', got {mode!r}")

    def act(obs, rng):
        probs = policy_forward(actor, obs)
        if mode == "greedy":
            return int(np.argmax(probs))
        return sample_action(probs, rng)

    return act


def episode_lengths(policy, env_params: CartPoleParams, episodes: int, seed_base: int) -> np.ndarray:
    """Survived steps of episodes seeded ``seed_base .. seed_base + episodes - 1``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    return np.array([run_episode(policy, env_params, seed=seed_base + i)[0] for i in range(episodes)])


def evaluate_policy(actor, env_params: CartPoleParams, episodes: int = 100, seed_base: int = 0,
                    mode: str = "stochastic") -> tuple[float, float]:
    """Mean and population standard deviation of survived steps.

    ``actor`` is a softmax :class:`DenseNet` or any ``policy(obs, rng)`` callable.
    """
    policy = actor_policy(actor, mode) if isinstance(actor, DenseNet) else actor
    steps = episode_lengths(policy, env_params, episodes, seed_base)
    return float(steps.mean()), float(steps.std())


@dataclass
class SweepSpec:
    parameter: str
    grid: tuple
    policy_checkpoints: dict  # label -> checkpoint path or DenseNet
    episodes_per_point: int = 100
    seed_base: int = 10_000
    mode: str = "stochastic"
    base_params: CartPoleParams = field(default_factory=CartPoleParams)
    workers: int = 1

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"parameter must be one of {SWEEP_PARAMETERS}, got {self.parameter!r}")
        self.grid = tuple(float(v) for v in self.grid)
        if not self.grid:
            raise ValueError("grid must not be empty")
        if self.episodes_per_point < 1:
            raise ValueError("episodes_per_point must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    policy: str
    parameter: str
    value: float
    mean: float
    std: float
    n: int


@dataclass
class SweepReport:
    rows: list
    metadata: dict = field(default_factory=dict)


def _load_actor(source) -> DenseNet:
    if isinstance(source, DenseNet):
        return source
    path = Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def run_sweep(spec: SweepSpec) -> SweepReport:
    """Evaluate every policy at every grid value.

    Each grid point reuses the same episode seeds, so a row depends only on
    ``(policy, value)`` and never on the order the grid is visited.
    """
    actors = {label: _load_actor(src) for label, src in spec.policy_checkpoints.items()}
    jobs = [(label, value) for label in actors for value in spec.grid]

    def work(job):
        label, value = job
        params = spec.base_params.with_(**{spec.parameter: value})
        mean, std = evaluate_policy(actors[label], params, spec.episodes_per_point, spec.seed_base, spec.mode)
        return SweepRow(label, spec.parameter, value, mean, std, spec.episodes_per_point)

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]
    meta = {
        "parameter": spec.parameter,
        "grid": list(spec.grid),
        "episodes_per_point": spec.episodes_per_point,
        "seed_base": spec.seed_base,
        "mode": spec.mode,
        "policies": {k: str(v) if not isinstance(v, DenseNet) else "<in-memory>"
                     for k, v in spec.policy_checkpoints.items()},
    }
    return SweepReport(rows, meta)


def report_csv_text(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([r.policy, r.parameter, repr(r.value), repr(r.mean), repr(r.std), r.n])
    return buf.getvalue()


def emit_report(report: SweepReport, out_dir) -> list[Path]:
    """Write ``sweep.csv`` and one SVG per swept parameter (mean line, +-1 std band)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "sweep.csv"
        csv_path.write_text(report_csv_text(report))
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    written = [csv_path]
    for parameter in sorted({r.parameter for r in report.rows}):
        written.append(_plot_parameter(report, parameter, out_dir / f"sweep_{parameter}.svg"))
    return written


def _plot_parameter(report: SweepReport, parameter: str, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "wassrl"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in dict.fromkeys(r.policy for r in report.rows if r.parameter == parameter):
        rows = sorted((r for r in report.rows if r.parameter == parameter and r.policy == label),
                      key=lambda r: r.value)
        v = np.array([r.value for r in rows])
        mean = np.array([r.mean for r in rows])
        std = np.array([r.std for r in rows])
        ax.plot(v, mean, marker="o", label=label)
        ax.fill_between(v, mean - std, mean + std, alpha=0.25)
    ax.set_xlabel(parameter)
    ax.set_ylabel("survived steps")
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path
