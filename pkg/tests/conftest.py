import time
import warnings

import numpy as np
import pytest

from wassrl.robust_mdp import FiniteMDP


def make_random_mdp(rng, n_states=3, n_actions=2, gamma=None, spread=True):
    """Random MDP on sorted random 1-D embeddings with costs in [0, 1]."""
    if spread:
        states = np.sort(rng.uniform(0.0, 2.0, n_states))
        while np.any(np.diff(states) < 1e-3):
            states = np.sort(rng.uniform(0.0, 2.0, n_states))
    else:
        states = np.arange(n_states, dtype=float)
    P = rng.dirichlet(np.ones(n_states) * 0.7, size=(n_states, n_actions))
    # exact row sums
    P[..., -1] = 1.0 - P[..., :-1].sum(axis=-1)
    P = np.clip(P, 0.0, None)
    P /= P.sum(axis=-1, keepdims=True)
    cost = rng.uniform(0.0, 1.0, (n_states, n_actions))
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.95))
    return FiniteMDP(states, P, cost, gamma, c_bar=1.0)


@pytest.fixture
def two_state():
    """Embeddings {0, 1}; from state 0 all mass stays at 0; zero cost; gamma 0.9."""
    P = np.array([[[1.0, 0.0]], [[1.0, 0.0]]])
    return FiniteMDP([0.0, 1.0], P, np.zeros((2, 1)), 0.9, c_bar=1.0)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    """Log one acceptance verdict; all lines are repeated in the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cartpole_runs():
    """Default-config WRAAC and A2C runs for seeds 0-4, each evaluated on 100 episodes at force 10 and 100.

    Shared by the training regression tests and the acceptance gate so the
    ten 10^5-step runs happen once per session.
    """
    from wassrl.environments import CartPoleParams
    from wassrl.evaluation import actor_policy, episode_lengths
    from wassrl.training import TrainConfig, train

    runs = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(5):
            for robust in (True, False):
                t0 = time.perf_counter()
                actor, _, records = train(TrainConfig(seed=seed, robust=robust))
                policy = actor_policy(actor)
                runs[(seed, robust)] = {
                    "records": records,
                    "lengths": {f: episode_lengths(policy, CartPoleParams(force_mag=f), 100, 10_000)
                                for f in (10.0, 100.0)},
                    "seconds": time.perf_counter() - t0,
                }
    return runs
