"""Fast self-check suite: every check compares a library routine with an independent route."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environments import RIGHT, CartPoleParams, EnvState, cartpole_step
from .neural import DenseNet, critic_forward, critic_grad_input, critic_grad_params, policy_forward, policy_log_grad, policy_log_grad_input
from .perturbation import PerturbationConfig, Transition, perturb_rollouts
from .robust_mdp import (
    FiniteMDP,
    WassersteinBall,
    primal_backup_oracle,
    robust_bellman_operator,
    robust_q_backup,
)
from .training import TrainConfig, a2c_train, wraac_train


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_mdp(rng, n, n_actions=2):
    states = np.sort(rng.uniform(0, 2, n))
    while np.any(np.diff(states) < 1e-3):
        states = np.sort(rng.uniform(0, 2, n))
    P = rng.dirichlet(np.ones(n), size=(n, n_actions))
    P /= P.sum(axis=-1, keepdims=True)
    return FiniteMDP(states, P, rng.uniform(0, 1, (n, n_actions)), float(rng.uniform(0.5, 0.95)), c_bar=1.0)


def check_duality(seed=0, instances=20, grid_k=2000) -> CheckResult:
    """Two-state instances: the dual backup sits within one grid cell above the primal grid search."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(instances):
        mdp = _random_mdp(rng, 2)
        ball = WassersteinBall(float(rng.choice([1.0, 2.0])), float(rng.uniform(0, 1)))
        u = rng.uniform(0, mdp.value_bound, 2)
        for x in range(2):
            for a in range(2):
                gap = robust_q_backup(mdp, ball, u, x, a)[0] - primal_backup_oracle(mdp, ball, u, x, a, grid_k)
                bound = mdp.gamma * np.ptp(u) / grid_k + 1e-12
                worst = max(worst, gap / bound if bound else 0.0)
                ok &= -1e-12 <= gap <= bound
    return CheckResult("duality gap", ok, f"max gap / cell bound = {worst:.3f}")


def check_contraction(seed=1, pairs=200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(pairs):
        mdp = _random_mdp(rng, int(rng.integers(2, 4)))
        ball = WassersteinBall(float(rng.choice([1.0, 2.0])), float(rng.uniform(0, 1)))
        u1, u2 = (rng.uniform(0, mdp.value_bound, mdp.n_states) for _ in range(2))
        h1, h2 = robust_bellman_operator(mdp, ball, u1), robust_bellman_operator(mdp, ball, u2)
        ratio = np.max(np.abs(h1 - h2)) / max(np.max(np.abs(u1 - u2)), 1e-300)
        worst = max(worst, ratio / mdp.gamma)
        ok &= np.max(np.abs(h1 - h2)) <= mdp.gamma * np.max(np.abs(u1 - u2)) + 1e-9
        ok &= bool(np.all(robust_bellman_operator(mdp, ball, np.maximum(u1, u2)) >= np.maximum(h1, h2) - 1e-9))
    return CheckResult("contraction", ok, f"max ratio / gamma = {worst:.4f}")


def _central(f, v, h=1e-5):
    v = np.array(v, dtype=float)
    out = np.empty_like(v)
    for i in range(v.size):
        keep = v[i]
        v[i] = keep + h
        hi = f(v)
        v[i] = keep - h
        lo = f(v)
        v[i] = keep
        out[i] = (hi - lo) / (2 * h)
    return out


def check_gradients(seed=2, configs=5, corrupt_gradient=False) -> CheckResult:
    """Finite differences against critic and actor gradients, both in parameters and inputs.

    ``corrupt_gradient`` perturbs one analytic component by 1% as a negative control.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        critic = DenseNet.initialize((4, 6, 5, 1), rng=rng)
        actor = DenseNet.initialize((4, 6, 2), head="softmax", rng=rng)
        x = rng.normal(size=4)
        a = int(rng.integers(2))
        pairs = [
            (critic_grad_params(critic, x),
             _central(lambda w: critic_forward(DenseNet(critic.layer_sizes, w), x), critic.params)),
            (critic_grad_input(critic, x), _central(lambda v: critic_forward(critic, v), x)),
            (policy_log_grad(actor, x, a),
             _central(lambda w: math.log(policy_forward(DenseNet(actor.layer_sizes, w, "softmax"), x)[a]),
                      actor.params)),
            (policy_log_grad_input(actor, x, a), _central(lambda v: math.log(policy_forward(actor, v)[a]), x)),
        ]
        for analytic, numeric in pairs:
            if corrupt_gradient:
                analytic = analytic.copy()
                analytic[np.argmax(np.abs(analytic))] *= 1.01
            err = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8)
            worst = max(worst, err)
    return CheckResult("gradients", worst < 1e-4, f"max relative error = {worst:.2e}")


def check_step_through(seed=3) -> CheckResult:
    """Perturbation loop against a line-by-line replay with hand-placed perturbed states."""
    rng = np.random.default_rng(seed)
    net = DenseNet.initialize((4, 8, 1), rng=rng)
    offset = rng.normal(size=4)
    delta, lam, gamma = 0.8, 3.0, 0.95
    cfg = PerturbationConfig(delta=delta, order_p=2.0, lambda_init=lam, z_steps=0, beta2=0.05, z_init_offset=offset)
    x = rng.normal(size=4)
    quads = [Transition(x, 0, float(c), rng.normal(size=4), terminal=t) for c, t in ((0.0, False), (1.0, True))]
    res = perturb_rollouts(quads, lam, cfg, net, gamma)
    e, kap = 0.0, 0.0
    g = np.zeros_like(net.params)
    for q in quads:
        z = q.y if q.terminal else q.y + delta * offset
        lam_j = 0.0 if q.terminal else lam
        k = float(np.sum((z - q.y) ** 2) / 2)
        e += q.c + gamma * (lam_j * delta + critic_forward(net, z) - lam_j * k) - critic_forward(net, x)
        g += gamma * critic_grad_params(net, z) - critic_grad_params(net, x)
        kap += k
    lam_new = max(0.0, lam + 0.05 * (delta - kap / 2))
    ok = (math.isclose(res.e, e / 2, rel_tol=1e-12, abs_tol=1e-12)
          and np.allclose(res.g_e, g / 2, rtol=1e-12, atol=1e-14)
          and math.isclose(res.lam, lam_new, rel_tol=1e-12))
    return CheckResult("perturbation step-through", ok, f"e={res.e:.6g} lambda={res.lam:.6g}")


def check_cartpole_trace() -> CheckResult:
    nxt, _ = cartpole_step(EnvState(0.0, 0.0, 0.0, 0.0), RIGHT, CartPoleParams())
    expect = np.array([0.0, 8 / 41, 0.0, -12 / 41])
    err = float(np.max(np.abs(nxt.vector() - expect)))
    return CheckResult("cart-pole trace", err < 1e-12, f"max deviation = {err:.1e}")


def check_reduction(steps=300) -> CheckResult:
    cfg = TrainConfig(delta=0.0, z_steps=0, z_init_offset=None, total_steps=steps, hidden=(8,), seed=7,
                      log_interval=steps)
    wa, wc, _ = wraac_train(cfg)
    aa, ac, _ = a2c_train(cfg)
    same = np.array_equal(wa.params, aa.params) and np.array_equal(wc.params, ac.params)
    return CheckResult("zero-radius reduction", same, f"{steps} steps bit-identical" if same else "trajectories differ")


def run_checks(corrupt_gradient: bool = False) -> list[CheckResult]:
    return [
        check_duality(),
        check_contraction(),
        check_gradients(corrupt_gradient=corrupt_gradient),
        check_step_through(),
        check_cartpole_trace(),
        check_reduction(),
    ]


def format_report(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}" for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
