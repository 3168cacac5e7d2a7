"""Episode generators: a parametric Cart-Pole and a 1-D chain MDP sampler.

Cart-Pole follows the classic-control reference dynamics (explicit Euler,
``tau = 0.02``).  Rewards are recast as costs: every surviving step costs
0 and the step that drops the pole or leaves the track costs 1, so
``c_bar = 1``.  Hitting the step cap ends the episode without cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .perturbation import Transition
from .robust_mdp import FiniteMDP

LEFT, RIGHT = 0, 1
STATE_DIM = 4
N_ACTIONS = 2
# rough per-coordinate magnitudes of on-track states, used to normalize network inputs
OBS_SCALE = np.array([2.4, 2.0, 0.21, 2.0])


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    pole_half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    theta_threshold: float = 12 * 2 * math.pi / 360
    x_threshold: float = 2.4
    max_steps: int = 200

    def __post_init__(self):
        for name in ("gravity", "mass_cart", "mass_pole", "pole_half_length", "force_mag", "tau",
                     "theta_threshold", "x_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")

    def with_(self, **changes) -> "CartPoleParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class EnvState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps: int = 0
    done: bool = False

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


def cartpole_reset(params: CartPoleParams, seed=None, rng=None) -> EnvState:
    """Start state with every coordinate uniform on [-0.05, 0.05]."""
    if rng is None:
        rng = np.random.default_rng(seed)
    x, x_dot, theta, theta_dot = rng.uniform(-0.05, 0.05, size=4)
    return EnvState(float(x), float(x_dot), float(theta), float(theta_dot))


def cartpole_step(state: EnvState, action: int, params: CartPoleParams) -> tuple[EnvState, float]:
    """Advance one step; returns the next state and the step cost."""
    if state.done:
        raise ValueError("cannot step a finished episode; reset first")
    if action not in (LEFT, RIGHT):
        raise ValueError(f"action must be 0 (left) or 1 (right), got {action}")
    force = params.force_mag if action == RIGHT else -params.force_mag
    total_mass = params.mass_cart + params.mass_pole
    pml = params.mass_pole * params.pole_half_length
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    temp = (force + pml * state.theta_dot ** 2 * sin_t) / total_mass
    theta_acc = (params.gravity * sin_t - cos_t * temp) / (
        params.pole_half_length * (4.0 / 3.0 - params.mass_pole * cos_t ** 2 / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    x = state.x + params.tau * state.x_dot
    x_dot = state.x_dot + params.tau * x_acc
    theta = state.theta + params.tau * state.theta_dot
    theta_dot = state.theta_dot + params.tau * theta_acc
    steps = state.steps + 1
    failed = abs(x) > params.x_threshold or abs(theta) > params.theta_threshold
    done = failed or steps >= params.max_steps
    return EnvState(x, x_dot, theta, theta_dot, steps, done), (1.0 if failed else 0.0)


def is_failure(state: EnvState, params: CartPoleParams) -> bool:
    return abs(state.x) > params.x_threshold or abs(state.theta) > params.theta_threshold


def run_episode(policy, params: CartPoleParams, seed=None, max_steps=None, rng=None):
    """Roll ``policy`` from a fresh reset until the episode ends.

    ``policy(obs, rng)`` returns an action; ``rng`` is the episode's
    generator (seeded by ``seed`` unless one is passed in).  Returns
    ``(survived_steps, transitions)``.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    if max_steps is not None:
        params = params.with_(max_steps=max_steps)
    state = cartpole_reset(params, rng=rng)
    transitions = []
    if params.max_steps == 0:
        return 0, transitions
    while not state.done:
        obs = state.vector()
        action = int(policy(obs, rng))
        nxt, cost = cartpole_step(state, action, params)
        transitions.append(Transition(obs, action, cost, nxt.vector(), terminal=cost > 0))
        state = nxt
    return state.steps, transitions


def write_trajectory_csv(transitions, path) -> Path:
    """Dump rows ``step, x, x_dot, theta, theta_dot, action, cost, done``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "x_dot", "theta", "theta_dot", "action", "cost", "done"])
        for i, t in enumerate(transitions):
            done = t.terminal or i == len(transitions) - 1
            writer.writerow([i, *(repr(float(v)) for v in t.x), t.a, repr(float(t.c)), int(done)])
    return path


# -- chain MDP -------------------------------------------------------------------


@dataclass(frozen=True)
class ChainMDPSpec:
    n_states: int
    slip: float = 0.0
    costs: tuple = ()
    gamma: float = 0.9

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("a chain needs at least 2 states")
        if not 0 <= self.slip <= 1:
            raise ValueError(f"slip must be in [0, 1], got {self.slip}")
        if len(self.costs) not in (0, self.n_states):
            raise ValueError("costs must give one value per state")


def make_chain_mdp(spec: ChainMDPSpec) -> FiniteMDP:
    """Left/right moves on ``0..n-1``; with probability ``slip`` the move goes the other way.

    Moves off either end stay put.  Costs depend on the state only; by
    default the last state costs 1 and all others 0.
    """
    n = spec.n_states
    costs = np.asarray(spec.costs, dtype=float) if spec.costs else np.eye(n)[-1]
    if np.any(costs < 0):
        raise ValueError("costs must be non-negative")
    P = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[s, LEFT, left] += 1.0 - spec.slip
        P[s, LEFT, right] += spec.slip
        P[s, RIGHT, right] += 1.0 - spec.slip
        P[s, RIGHT, left] += spec.slip
    cost = np.repeat(costs[:, None], 2, axis=1)
    return FiniteMDP(np.arange(n, dtype=float), P, cost, spec.gamma, c_bar=float(costs.max()))


def sample_chain(mdp: FiniteMDP, state: int, action: int, rng) -> int:
    return int(rng.choice(mdp.n_states, p=mdp.transition[state, action]))
