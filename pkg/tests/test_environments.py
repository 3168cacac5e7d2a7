import math

import numpy as np
import pytest

from wassrl.environments import (
    LEFT,
    RIGHT,
    CartPoleParams,
    ChainMDPSpec,
    EnvState,
    cartpole_reset,
    cartpole_step,
    is_failure,
    make_chain_mdp,
    run_episode,
    sample_chain,
    write_trajectory_csv,
)
from wassrl.robust_mdp import WassersteinBall, classical_value_iteration, solve_value_iteration


def accelerations_by_linear_solve(state, force, p):
    """Cart with a uniform rod: solve the 2x2 mass-matrix system for (x'', theta'')."""
    c, s = math.cos(state.theta), math.sin(state.theta)
    mt = p.mass_cart + p.mass_pole
    ml = p.mass_pole * p.pole_half_length
    M = np.array([[mt, ml * c], [c, 4.0 / 3.0 * p.pole_half_length]])
    rhs = np.array([force + ml * state.theta_dot ** 2 * s, p.gravity * s])
    return np.linalg.solve(M, rhs)


def test_single_step_trace():
    nxt, cost = cartpole_step(EnvState(0.0, 0.0, 0.0, 0.0), RIGHT, CartPoleParams())
    np.testing.assert_allclose(nxt.vector(), [0.0, 0.19512, 0.0, -0.29268], atol=1e-4)
    # exact values: 0.02 * (10/1.1 + ...) reduce to 8/41 and -12/41
    assert nxt.x_dot == pytest.approx(8 / 41, abs=1e-15)
    assert nxt.theta_dot == pytest.approx(-12 / 41, abs=1e-15)
    assert cost == 0.0 and not nxt.done and nxt.steps == 1


@pytest.mark.parametrize("seed", range(10))
def test_step_matches_mass_matrix_solution(seed):
    rng = np.random.default_rng(seed)
    p = CartPoleParams(force_mag=float(rng.uniform(1, 100)), mass_pole=float(rng.uniform(0.05, 1.5)))
    st = EnvState(*rng.uniform(-0.2, 0.2, 4))
    a = int(rng.integers(2))
    nxt, _ = cartpole_step(st, a, p)
    x_acc, th_acc = accelerations_by_linear_solve(st, p.force_mag if a == RIGHT else -p.force_mag, p)
    expect = [st.x + p.tau * st.x_dot, st.x_dot + p.tau * x_acc,
              st.theta + p.tau * st.theta_dot, st.theta_dot + p.tau * th_acc]
    np.testing.assert_allclose(nxt.vector(), expect, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_mirror_symmetry(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-0.1, 0.1, 4)
    p = CartPoleParams()
    a, _ = cartpole_step(EnvState(*v), RIGHT, p)
    b, _ = cartpole_step(EnvState(*(-v)), LEFT, p)
    np.testing.assert_allclose(a.vector(), -b.vector(), atol=1e-15)


def test_failure_cost_and_done():
    p = CartPoleParams()
    st = EnvState(0.0, 0.0, p.theta_threshold - 1e-4, 1.0)
    nxt, cost = cartpole_step(st, RIGHT, p)
    assert abs(nxt.theta) > p.theta_threshold
    assert nxt.done and cost == 1.0 and is_failure(nxt, p)
    with pytest.raises(ValueError):
        cartpole_step(nxt, LEFT, p)


def test_step_cap_is_not_a_failure():
    p = CartPoleParams(max_steps=3)
    st = EnvState(0.0, 0.0, 0.0, 0.0, steps=2)
    nxt, cost = cartpole_step(st, RIGHT, p)
    assert nxt.done and cost == 0.0


def test_invalid_action_and_params():
    with pytest.raises(ValueError):
        cartpole_step(EnvState(0, 0, 0, 0), 2, CartPoleParams())
    with pytest.raises(ValueError):
        CartPoleParams(mass_pole=0.0)
    with pytest.raises(ValueError):
        CartPoleParams(force_mag=-1.0)


def test_reset_bounds_and_seeds():
    rng = np.random.default_rng(0)
    starts = np.array([cartpole_reset(CartPoleParams(), rng=rng).vector() for _ in range(10_000)])
    assert np.all(np.abs(starts) <= 0.05)
    a = cartpole_reset(CartPoleParams(), seed=1).vector()
    b = cartpole_reset(CartPoleParams(), seed=2).vector()
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, cartpole_reset(CartPoleParams(), seed=1).vector())


def test_constant_push_fails_quickly():
    p = CartPoleParams()
    steps = [run_episode(lambda o, r: LEFT, p, seed=s)[0] for s in range(3)]
    assert steps == [11, 10, 9]
    assert all(run_episode(lambda o, r: RIGHT, p, seed=s)[0] < 20 for s in range(10))


def test_stronger_push_fails_sooner():
    weak = run_episode(lambda o, r: LEFT, CartPoleParams(), seed=0)[0]
    strong = run_episode(lambda o, r: LEFT, CartPoleParams(force_mag=100.0), seed=0)[0]
    assert strong < weak


def test_episode_edge_cases(tmp_path):
    steps, trans = run_episode(lambda o, r: LEFT, CartPoleParams(), seed=0, max_steps=0)
    assert steps == 0 and trans == []
    policy = lambda o, r: RIGHT if o[2] + 0.5 * o[3] > 0 else LEFT  # noqa: E731
    s1, t1 = run_episode(policy, CartPoleParams(), seed=7)
    s2, t2 = run_episode(policy, CartPoleParams(), seed=7)
    assert s1 == s2 == 200
    assert all(np.array_equal(a.y, b.y) for a, b in zip(t1, t2))
    assert sum(t.c for t in t1) == 0.0
    path = write_trajectory_csv(t1, tmp_path / "traj.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,x") and len(lines) == 201
    assert lines[-1].endswith(",1")


def test_episode_transitions_chain_together():
    _, trans = run_episode(lambda o, r: int(r.integers(2)), CartPoleParams(), seed=3)
    for a, b in zip(trans, trans[1:]):
        np.testing.assert_array_equal(a.y, b.x)
    assert trans[-1].terminal and trans[-1].c == 1.0


# -- chain ------------------------------------------------------------------------


def test_chain_slip_extremes():
    det = make_chain_mdp(ChainMDPSpec(4, slip=0.0))
    flip = make_chain_mdp(ChainMDPSpec(4, slip=1.0))
    assert np.all(np.isin(det.transition, (0.0, 1.0)))
    np.testing.assert_array_equal(det.transition[:, LEFT], flip.transition[:, RIGHT])
    assert det.transition[1, RIGHT, 2] == 1.0 and det.transition[0, LEFT, 0] == 1.0
    np.testing.assert_array_equal(det.cost[:, 0], [0, 0, 0, 1])


def test_chain_validation():
    with pytest.raises(ValueError):
        ChainMDPSpec(1)
    with pytest.raises(ValueError):
        ChainMDPSpec(3, slip=1.5)
    with pytest.raises(ValueError):
        ChainMDPSpec(3, costs=(1.0, 0.0))


def test_chain_sampler_frequencies():
    mdp = make_chain_mdp(ChainMDPSpec(5, slip=0.3))
    rng = np.random.default_rng(0)
    draws = [sample_chain(mdp, 2, RIGHT, rng) for _ in range(20_000)]
    assert abs(np.mean(np.array(draws) == 3) - 0.7) < 0.015


def test_chain_feeds_exact_tier():
    mdp = make_chain_mdp(ChainMDPSpec(5, slip=0.1, gamma=0.8))
    sol = solve_value_iteration(mdp, WassersteinBall(1, 0.0), tol=1e-10)
    u, pi, _ = classical_value_iteration(mdp, tol=1e-10)
    np.testing.assert_allclose(sol.value, u, atol=1e-8)
    assert np.all(pi[:-1] == LEFT)
