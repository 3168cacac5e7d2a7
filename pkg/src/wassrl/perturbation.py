"""Worst-case next-state perturbations for the function-approximation tier.

For a reference next state ``y`` and penalty ``lam`` the adversary picks

    z = argmax_z  u_w(z) - lam * |z - y|^p / p,

found either by fixed-step gradient ascent or, for ``p > 1``, by the
first-order closed form.  :func:`perturb_rollouts` runs one pass of the
perturbation loop over ``n`` rollouts of the same state-action pair,
accumulating the robust error ``e``, its gradient with respect to the
critic parameters, and one projected step on ``lam``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .neural import DenseNet, critic_forward, critic_grad_input, critic_grad_params
from .robust_mdp import ground_cost


@dataclass(frozen=True)
class Transition:
    """One rollout ``(x, a, c, y)``; ``terminal`` marks a failure-terminated step."""

    x: np.ndarray
    a: int
    c: float
    y: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"cost must be >= 0, got {self.c}")
        if np.shape(self.x) != np.shape(self.y):
            raise ValueError("x and y must have the same dimension")


@dataclass
class PerturbationConfig:
    delta: float = 3.0
    order_p: float = 2.0
    lambda_init: float = 5.0
    z_steps: int = 20
    beta1: float = 0.05
    beta2: float = 0.01
    closed_form: bool = False
    paper_sign: bool = False
    z_clip: tuple | None = None  # (low, high) per-dimension bounds
    z_init_offset: np.ndarray | None = None  # non-terminal start z0 = y + delta * offset
    mask_terminal: bool = False  # drop the bootstrap value on terminal rollouts

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not self.order_p >= 1:
            raise ValueError(f"order_p must be >= 1, got {self.order_p}")
        if not self.lambda_init > 0:
            raise ValueError(f"lambda_init must be > 0, got {self.lambda_init}")
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("beta1 and beta2 must be positive")
        if self.z_steps < 0:
            raise ValueError("z_steps must be >= 0")
        if self.z_init_offset is not None:
            self.z_init_offset = np.asarray(self.z_init_offset, dtype=float)
        if self.z_clip is not None:
            low, high = (np.asarray(b, dtype=float) for b in self.z_clip)
            if np.any(low > high):
                raise ValueError("z_clip lower bound exceeds upper bound")
            self.z_clip = (low, high)
        floor = lambda_floor(self.delta, self.order_p)
        if self.lambda_init <= floor:
            warnings.warn(
                f"lambda_init={self.lambda_init} is not above 1/epsilon = {floor:.4g}; "
                "a larger initial penalty is recommended",
                UserWarning,
                stacklevel=3,
            )


def lambda_floor(delta: float, order_p: float) -> float:
    """``(p * delta)^(-1/p)``, the suggested lower bound for the initial penalty."""
    if delta == 0:
        return math.inf
    return (order_p * delta) ** (-1.0 / order_p)


@dataclass
class PerturbationResult:
    e: float
    g_e: np.ndarray
    lam: float
    z_list: list = field(default_factory=list)
    kappa_mean: float = 0.0


class NetCritic:
    """Adapter exposing a linear-head :class:`DenseNet` as a critic evaluator."""

    def __init__(self, net: DenseNet):
        self.net = net

    def value(self, s) -> float:
        return critic_forward(self.net, s)

    def grad_input(self, s) -> np.ndarray:
        return critic_grad_input(self.net, s)

    def grad_params(self, s) -> np.ndarray:
        return critic_grad_params(self.net, s)


def as_critic(obj):
    return NetCritic(obj) if isinstance(obj, DenseNet) else obj


def grad_z(z, y, lam: float, p: float, grad_u_at_z) -> np.ndarray:
    """Ascent direction of ``u(z) - lam * |z - y|^p / p``.

    At ``z == y`` the penalty gradient is taken as zero (a valid
    subgradient when ``p < 2``, the true gradient otherwise).
    """
    z = np.asarray(z, dtype=float)
    diff = z - np.asarray(y, dtype=float)
    grad_u = np.asarray(grad_u_at_z, dtype=float)
    r = math.sqrt(float(diff @ diff))
    if r == 0.0:
        return grad_u.copy()
    return grad_u - lam * r ** (p - 2) * diff


def ascend_z(y, lam: float, config: PerturbationConfig, value_net, z0=None) -> np.ndarray:
    """Run ``config.z_steps`` fixed-step ascent iterations from ``z0`` (default ``y``)."""
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    critic = as_critic(value_net)
    y = np.asarray(y, dtype=float)
    z = y.copy() if z0 is None else np.array(z0, dtype=float)
    for _ in range(config.z_steps):
        z = z + config.beta1 * grad_z(z, y, lam, config.order_p, critic.grad_input(z))
        if config.z_clip is not None:
            z = np.clip(z, *config.z_clip)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"perturbation ascent diverged for y={y.tolist()} lam={lam}")
    return z


def closed_form_z(y, lam: float, p: float, grad_u_at_y, paper_sign: bool = False) -> np.ndarray:
    """First-order optimal transport map ``y +- lam^(-1/(p-1)) |g|^(-(p-2)/(p-1)) g``.

    The ``+`` sign (default) moves toward higher critic values, matching
    the ascent solved by :func:`ascend_z`; ``paper_sign=True`` flips it.
    Critical points (``g = 0``) are fixed.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not p > 1:
        raise ValueError(f"closed form needs p > 1, got {p}")
    y = np.asarray(y, dtype=float)
    g = np.asarray(grad_u_at_y, dtype=float)
    norm = math.sqrt(float(g @ g))
    if norm == 0.0:
        return y.copy()
    step = lam ** (-1.0 / (p - 1.0)) * norm ** (-(p - 2.0) / (p - 1.0)) * g
    return y - step if paper_sign else y + step


def lambda_gradient(kappa_values, delta: float) -> float:
    """``delta - mean(kappa)``: positive while the transport budget is under-used."""
    kappa_values = np.asarray(kappa_values, dtype=float)
    if kappa_values.size == 0:
        raise ValueError("need at least one transport cost")
    if np.any(kappa_values < 0):
        raise ValueError("transport costs must be non-negative")
    return float(delta - kappa_values.mean())


def perturb_z(y, lam: float, config: PerturbationConfig, critic) -> np.ndarray:
    """Perturbed state for a non-terminal rollout, by closed form or ascent."""
    if config.closed_form and config.order_p > 1 and lam > 0:
        z = closed_form_z(y, lam, config.order_p, critic.grad_input(y), config.paper_sign)
        if config.z_clip is not None:
            z = np.clip(z, *config.z_clip)
        return z
    z0 = None
    if config.z_init_offset is not None:
        z0 = np.asarray(y, dtype=float) + config.delta * config.z_init_offset
    return ascend_z(y, lam, config, critic, z0=z0)


def perturb_rollouts(quadruples, lam: float, config: PerturbationConfig, value_net, gamma: float) -> PerturbationResult:
    """One pass of the perturbation loop over rollouts of a single ``(x, a)``.

    Per rollout ``j`` the perturbed state ``z_j`` is computed and

        e   += c_j + gamma * (lam * delta + u(z_j) - lam * kappa(z_j, y_j)) - u(x)
        g_e += gamma * grad_w u(z_j) - grad_w u(x)

    Terminal rollouts use ``lam = 0`` and ``z_j = y_j``.  Afterwards
    ``lam <- max(0, lam + beta2 * (delta - mean kappa))`` and ``e``, ``g_e``
    are averaged.
    """
    quadruples = list(quadruples)
    if not quadruples:
        raise ValueError("need at least one rollout")
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    x0, a0 = np.asarray(quadruples[0].x, dtype=float), quadruples[0].a
    for q in quadruples[1:]:
        if q.a != a0 or not np.array_equal(np.asarray(q.x, dtype=float), x0):
            raise ValueError("all rollouts must share the same state and action")
    critic = as_critic(value_net)
    u_x = critic.value(x0)
    gw_x = critic.grad_params(x0)

    e = 0.0
    g_e = np.zeros_like(gw_x)
    kappa_sum = 0.0
    kappas = []
    z_list = []
    p, delta = config.order_p, config.delta
    for q in quadruples:
        y = np.asarray(q.y, dtype=float)
        if q.terminal:
            lam_j, z = 0.0, y.copy()
        else:
            lam_j, z = lam, perturb_z(y, lam, config, critic)
        k = ground_cost(z, y, p)
        if q.terminal and config.mask_terminal:
            u_z, gw_z = 0.0, np.zeros_like(gw_x)
        else:
            u_z, gw_z = critic.value(z), critic.grad_params(z)
        e += q.c + gamma * (lam_j * delta + u_z - lam_j * k) - u_x
        g_e += gamma * gw_z - gw_x
        kappa_sum += k
        kappas.append(k)
        z_list.append(z)
    n = len(quadruples)
    g_lam = lambda_gradient(kappas, delta)
    new_lam = max(0.0, lam + config.beta2 * g_lam)
    return PerturbationResult(e=e / n, g_e=g_e / n, lam=new_lam, z_list=z_list, kappa_mean=kappa_sum / n)
