"""Wasserstein-robust advantage actor-critic (WRAAC) and the plain A2C baseline.

Both learners share one loop.  At every step, ``m`` actions are sampled
from the actor at the current state; each is rolled out ``n`` times from a
copy of the environment and scored either by the robust perturbation pass
(WRAAC) or by the ordinary TD error (A2C).  Then

    w     <- w - beta3 * mean(e) * mean(g_e)
    theta <- theta - beta4 * mean_i(grad log pi(a_i|x) * e_i)

With ``critic_update="residual"`` the critic step uses the full gradient
``g_e`` of ``e^2 / 2``; the default ``"semi"`` replaces ``g_e`` by
``-grad_w u(x)`` (the usual TD(0) step), which learns Cart-Pole at these
rates where the residual form does not.

after which one fresh action is sampled and the environment advances,
resetting when an episode ends.

RNG discipline: a single generator seeded with ``config.seed`` supplies,
in order, the actor init, the critic init, the first reset, and then per
step the ``m`` update actions, the acting action, and any reset.  WRAAC's
perturbation pass draws nothing, so WRAAC and A2C consume identical
streams.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .environments import N_ACTIONS, OBS_SCALE, STATE_DIM, CartPoleParams, cartpole_reset, cartpole_step
from .neural import DenseNet, policy_forward, policy_log_grad
from .perturbation import PerturbationConfig, PerturbationResult, Transition, perturb_rollouts

log = logging.getLogger(__name__)

DEFAULT_Z_OFFSET = (0.0, 1.0 / math.sqrt(26.0), 0.0, 5.0 / math.sqrt(26.0))


@dataclass
class TrainConfig:
    gamma: float = 0.99
    delta: float = 3.0
    order_p: float = 2.0
    m: int = 1
    n: int = 1
    beta1: float = 0.05
    beta2: float = 0.03
    beta3: float = 0.02
    beta4: float = 0.005
    lambda_init: float = 5.0
    total_steps: int = 100_000
    seed: int = 0
    robust: bool = True
    terminal_rule: bool = True
    z_init_offset: tuple | None = DEFAULT_Z_OFFSET
    z_steps: int = 20
    closed_form: bool = False
    paper_sign: bool = False
    mask_terminal: bool = True
    critic_update: str = "semi"
    hidden: tuple = (64, 64)
    log_interval: int = 1000

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not self.order_p >= 1:
            raise ValueError(f"order_p must be >= 1, got {self.order_p}")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        rates = (self.beta1, self.beta2, self.beta3, self.beta4)
        if not all(r > 0 for r in rates):
            raise ValueError("learning rates must be positive")
        if not self.lambda_init > 0:
            raise ValueError("lambda_init must be positive")
        if self.total_steps < 0 or self.log_interval < 1 or self.z_steps < 0:
            raise ValueError("total_steps, z_steps must be >= 0 and log_interval >= 1")
        if self.z_init_offset is not None:
            self.z_init_offset = tuple(float(v) for v in self.z_init_offset)
            if len(self.z_init_offset) != STATE_DIM:
                raise ValueError(f"z_init_offset must have {STATE_DIM} entries")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.critic_update not in ("residual", "semi"):
            raise ValueError(f"critic_update must be 'residual' or 'semi', got {self.critic_update!r}")
        if not (self.beta1 > self.beta2 > self.beta3 > self.beta4):
            warnings.warn(
                "learning rates do not follow beta1 > beta2 > beta3 > beta4; "
                "the multi-time-scale ordering is not respected",
                UserWarning,
                stacklevel=3,
            )

    def perturbation_config(self) -> PerturbationConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return PerturbationConfig(
                delta=self.delta,
                order_p=self.order_p,
                lambda_init=self.lambda_init,
                z_steps=self.z_steps,
                beta1=self.beta1,
                beta2=self.beta2,
                closed_form=self.closed_form,
                paper_sign=self.paper_sign,
                z_init_offset=None if self.z_init_offset is None else np.array(self.z_init_offset),
                mask_terminal=self.mask_terminal,
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["z_init_offset"] = None if self.z_init_offset is None else list(self.z_init_offset)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainRecord:
    step: int
    episode_return: float
    mean_e: float
    lam: float
    mean_kappa: float
    critic_loss: float


RECORD_COLUMNS = [f.name for f in fields(TrainRecord)]


class TrainingDiverged(RuntimeError):
    """Raised when a loss, penalty, or parameter becomes non-finite."""

    def __init__(self, step, lam, e, displacement):
        self.record = {"step": step, "lambda": lam, "e": e, "z_minus_y": displacement}
        super().__init__(f"non-finite training state at step {step}: lambda={lam} e={e} |z-y|={displacement}")


def z_initializer(y, terminal: bool, config: TrainConfig, delta: float | None = None):
    """Starting point of the perturbation search: ``(z0, lambda0)``.

    Non-terminal: ``z0 = y + delta * offset`` and ``lambda0 = lambda_init``.
    Terminal: ``z0 = y`` and ``lambda0 = 0``.
    """
    y = np.asarray(y, dtype=float)
    if terminal:
        return y.copy(), 0.0
    delta = config.delta if delta is None else delta
    if config.z_init_offset is None:
        return y.copy(), config.lambda_init
    offset = np.asarray(config.z_init_offset, dtype=float)
    if offset.shape != y.shape:
        raise ValueError(f"offset has shape {offset.shape}, state has {y.shape}")
    return y + delta * offset, config.lambda_init


class _FastCritic:
    """Critic evaluator that shares one forward pass between value and gradient."""

    def __init__(self, net: DenseNet):
        self.net = net
        self._key = None
        self._acts = None

    def _acts_for(self, s):
        s = np.asarray(s, dtype=float)
        key = s.tobytes()
        if key != self._key:
            self._acts = self.net._forward(s)
            self._key = key
        return self._acts

    def invalidate(self):
        self._key = None

    def value(self, s) -> float:
        return float(self._acts_for(s)[-1][0])

    def grad_params(self, s) -> np.ndarray:
        return self.net._backward(self._acts_for(s), _ONE)[0]

    def grad_input(self, s) -> np.ndarray:
        acts = self.net._forward(np.asarray(s, dtype=float))
        return self.net._backward(acts, _ONE, want_params=False, want_input=True)[1]


_ONE = np.ones(1)


def td_error(quadruples, critic, gamma: float, mask_terminal: bool = True) -> PerturbationResult:
    """Classical TD error ``c + gamma * u(y) * (1 - terminal) - u(x)`` and its full gradient."""
    quadruples = list(quadruples)
    if not quadruples:
        raise ValueError("need at least one rollout")
    x = np.asarray(quadruples[0].x, dtype=float)
    u_x = critic.value(x)
    gw_x = critic.grad_params(x)
    e = 0.0
    g_e = np.zeros_like(gw_x)
    for q in quadruples:
        if q.terminal and mask_terminal:
            u_y, gw_y = 0.0, np.zeros_like(gw_x)
        else:
            u_y, gw_y = critic.value(q.y), critic.grad_params(q.y)
        e += q.c + gamma * u_y - u_x
        g_e += gamma * gw_y - gw_x
    n = len(quadruples)
    return PerturbationResult(e=e / n, g_e=g_e / n, lam=0.0, z_list=[np.asarray(q.y) for q in quadruples],
                              kappa_mean=0.0)


def critic_step(critic: DenseNet, e: float, g_e, rate: float) -> None:
    """In place ``w <- w - rate * e * g_e``: one descent step on ``e^2 / 2``."""
    critic.params -= rate * (e * np.asarray(g_e))


def actor_step(actor: DenseNet, x, actions, errors, rate: float) -> None:
    """In place ``theta <- theta - rate * mean_i(grad log pi(a_i|x) * e_i)``.

    Errors are costs-to-go relative to the critic, so a positive ``e_i``
    lowers the probability of ``a_i``.
    """
    g = np.zeros_like(actor.params)
    for a, e_i in zip(actions, errors):
        g += policy_log_grad(actor, x, a) * e_i
    actor.params -= rate * (g / len(actions))


def sample_action(probs: np.ndarray, rng) -> int:
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"), probs.size - 1))


def init_networks(config: TrainConfig, rng):
    actor = DenseNet.initialize((STATE_DIM, *config.hidden, N_ACTIONS), head="softmax", rng=rng,
                                input_scale=OBS_SCALE)
    critic = DenseNet.initialize((STATE_DIM, *config.hidden, 1), head="linear", rng=rng, input_scale=OBS_SCALE)
    return actor, critic


def _train(config: TrainConfig, env_params: CartPoleParams, robust: bool, on_record=None, on_checkpoint=None,
           checkpoint_every: int = 0):
    rng = np.random.default_rng(config.seed)
    actor, critic = init_networks(config, rng)
    evaluator = _FastCritic(critic)
    pconfig = config.perturbation_config()
    state = cartpole_reset(env_params, rng=rng)
    records: list[TrainRecord] = []

    window_e = window_lam = window_kappa = window_loss = 0.0
    window_count = 0
    finished: list[int] = []
    m, n = config.m, config.n

    for step in range(1, config.total_steps + 1):
        x = state.vector()
        probs = policy_forward(actor, x)
        E = 0.0
        g_E = np.zeros_like(critic.params)
        sampled, errors = [], []
        lam_out = kappa_out = 0.0
        for _ in range(m):
            a = sample_action(probs, rng)
            quads = []
            for _ in range(n):
                nxt, cost = cartpole_step(state, a, env_params)
                quads.append(Transition(x, a, cost, nxt.vector(), terminal=config.terminal_rule and cost > 0))
            evaluator.invalidate()
            if robust:
                res = perturb_rollouts(quads, config.lambda_init, pconfig, evaluator, config.gamma)
            else:
                if not config.terminal_rule:
                    quads = [Transition(q.x, q.a, q.c, q.y, terminal=q.c > 0) for q in quads]
                res = td_error(quads, evaluator, config.gamma, config.mask_terminal)
            sampled.append(a)
            errors.append(res.e)
            E += res.e
            g_E += res.g_e
            lam_out += res.lam
            kappa_out += res.kappa_mean
            if not (math.isfinite(res.e) and math.isfinite(res.lam)):
                disp = max((float(np.linalg.norm(z - q.y)) for z, q in zip(res.z_list, quads)), default=0.0)
                raise TrainingDiverged(step, res.lam, res.e, disp)

        if config.critic_update == "semi":
            g_E = -m * evaluator.grad_params(x)
        critic_step(critic, E / m, g_E / m, config.beta3)
        actor_step(actor, x, sampled, errors, config.beta4)
        if not (np.all(np.isfinite(critic.params)) and np.all(np.isfinite(actor.params))):
            raise TrainingDiverged(step, lam_out / m, E / m, float("nan"))

        a = sample_action(policy_forward(actor, x), rng)
        state, _ = cartpole_step(state, a, env_params)
        if state.done:
            finished.append(state.steps)
            state = cartpole_reset(env_params, rng=rng)

        if on_checkpoint is not None and checkpoint_every > 0 and step % checkpoint_every == 0:
            on_checkpoint(step, actor, critic)

        window_e += E / m
        window_lam += lam_out / m
        window_kappa += kappa_out / m
        window_loss += 0.5 * (E / m) ** 2
        window_count += 1
        if step % config.log_interval == 0 or step == config.total_steps:
            ret = float(np.mean(finished)) if finished else float(state.steps)
            rec = TrainRecord(step, ret, window_e / window_count, window_lam / window_count,
                              window_kappa / window_count, window_loss / window_count)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            window_e = window_lam = window_kappa = window_loss = 0.0
            window_count = 0
            finished = []
    return actor, critic, records


def wraac_train(config: TrainConfig, env_params: CartPoleParams | None = None, **hooks):
    """Train with the robust perturbation pass.  Returns ``(actor, critic, records)``.

    Optional hooks: ``on_record(record)`` after each log window and
    ``on_checkpoint(step, actor, critic)`` every ``checkpoint_every`` steps.
    """
    return _train(config, env_params or CartPoleParams(), robust=True, **hooks)


def a2c_train(config: TrainConfig, env_params: CartPoleParams | None = None, **hooks):
    """Train the non-robust baseline with the classical TD error (same hooks as :func:`wraac_train`)."""
    return _train(config, env_params or CartPoleParams(), robust=False, **hooks)


def train(config: TrainConfig, env_params: CartPoleParams | None = None, **hooks):
    fn = wraac_train if config.robust else a2c_train
    return fn(config, env_params, **hooks)


def write_records_csv(records, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([r.step] + [repr(float(getattr(r, c))) for c in RECORD_COLUMNS[1:]])
    return path
