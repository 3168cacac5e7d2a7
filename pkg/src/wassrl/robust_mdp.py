"""Exact robust dynamic programming on finite MDPs with a Wasserstein ball.

The transition kernel at each state-action pair may be replaced by any
distribution whose optimal-transport cost from the reference row is at
most ``delta`` under the ground cost ``kappa(z, y) = |z - y|^p / p``.
Costs are minimized, so the adversary pushes probability mass toward
states with a high cost-to-go.

The robust backup is computed through its one-dimensional dual

    c(x, a) + gamma * min_{lam >= 0} [ lam * delta
                                       + sum_y P(y|x,a) max_z (u(z) - lam * kappa(z, y)) ]

where ``z`` ranges over the finite state set.  The bracket is convex and
piecewise linear in ``lam``, so its minimum sits at ``lam = 0`` or at a
crossing point of two lines ``u(z) - lam * kappa(z, y)``; enumerating all
such crossings gives the exact minimizer.  :func:`primal_backup_oracle`
solves the original sup over distributions by brute force on a simplex
grid and serves as an independent check.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
_FULL_EVAL_LIMIT = 200_000


def ground_cost(z, y, p: float) -> float:
    """Transport cost ``||z - y||_2^p / p``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if z.shape != y.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {y.shape}")
    if p < 1:
        raise ValueError(f"order p must be >= 1, got {p}")
    return float(np.linalg.norm(z - y) ** p / p)


@dataclass(frozen=True)
class WassersteinBall:
    """Transport budget ``delta`` of order ``p``; ``epsilon = (p * delta)^(1/p)``."""

    order_p: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.order_p >= 1:
            raise ValueError(f"order_p must be >= 1, got {self.order_p}")
        if not self.delta >= 0 or not math.isfinite(self.delta):
            raise ValueError(f"delta must be a finite value >= 0, got {self.delta}")

    @classmethod
    def from_epsilon(cls, epsilon: float, order_p: float = 1.0) -> "WassersteinBall":
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")
        return cls(order_p=order_p, delta=epsilon ** order_p / order_p)

    @property
    def epsilon(self) -> float:
        return (self.order_p * self.delta) ** (1.0 / self.order_p)


@dataclass
class FiniteMDP:
    """Finite MDP with a 1-D embedding of every state.

    ``transition[x, a]`` is the reference next-state distribution and
    ``cost[x, a]`` the immediate cost.  ``n_actions[x]`` admissible actions
    are available at ``x``; they are always the first ``n_actions[x]``
    indices, and entries beyond them are ignored.
    """

    states: np.ndarray
    transition: np.ndarray
    cost: np.ndarray
    gamma: float
    c_bar: float | None = None
    n_actions: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        n = self.states.size
        if self.states.ndim != 1 or n < 1:
            raise ValueError("states must be a non-empty 1-D array of embeddings")
        if np.any(np.diff(self.states) <= 0):
            raise ValueError("state embeddings must be strictly increasing")
        if self.transition.ndim != 3 or self.transition.shape[0] != n or self.transition.shape[2] != n:
            raise ValueError(f"transition must have shape ({n}, A, {n}), got {self.transition.shape}")
        n_act = self.transition.shape[1]
        if self.cost.shape != (n, n_act):
            raise ValueError(f"cost must have shape ({n}, {n_act}), got {self.cost.shape}")
        if self.n_actions is None:
            self.n_actions = np.full(n, n_act, dtype=int)
        self.n_actions = np.asarray(self.n_actions, dtype=int)
        if self.n_actions.shape != (n,) or np.any(self.n_actions < 1) or np.any(self.n_actions > n_act):
            raise ValueError("n_actions must give between 1 and A admissible actions per state")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        admissible = self.admissible_mask()
        if self.c_bar is None:
            self.c_bar = float(self.cost[admissible].max())
        if self.c_bar < 0:
            raise ValueError("c_bar must be >= 0")
        rows = self.transition[admissible]
        if np.any(rows < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.abs(rows.sum(axis=-1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("every transition row must sum to 1")
        costs = self.cost[admissible]
        if np.any(costs < 0) or np.any(costs > self.c_bar):
            raise ValueError(f"costs must lie in [0, c_bar={self.c_bar}]")

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def max_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def value_bound(self) -> float:
        return self.c_bar / (1.0 - self.gamma)

    def admissible_mask(self) -> np.ndarray:
        return np.arange(self.max_actions)[None, :] < self.n_actions[:, None]

    def kappa_matrix(self, p: float) -> np.ndarray:
        """``K[z, y] = |s_z - s_y|^p / p`` over state embeddings."""
        d = np.abs(self.states[:, None] - self.states[None, :])
        return d ** p / p

    def check_values(self, u) -> np.ndarray:
        """Validate a value table: one entry per state inside ``[0, c_bar / (1 - gamma)]``."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_states,):
            raise ValueError(f"value table must have shape ({self.n_states},), got {u.shape}")
        slack = 1e-9 * max(1.0, self.value_bound)
        if np.any(u < -slack) or np.any(u > self.value_bound + slack):
            raise ValueError(f"value table leaves [0, {self.value_bound}]")
        return u

    def _check_pair(self, x: int, a: int):
        if not 0 <= x < self.n_states:
            raise ValueError(f"state {x} out of range")
        if not 0 <= a < self.n_actions[x]:
            raise ValueError(f"action {a} is not admissible at state {x}")


@dataclass
class RobustSolution:
    value: np.ndarray
    policy: np.ndarray
    lambda_star: np.ndarray
    iterations: int
    residual: float
    converged: bool
    q_values: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


# -- dual backup -------------------------------------------------------------


def _inner_sup(kappa: np.ndarray, u: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """``S[k, y] = max_z u(z) - lams[k] * kappa[z, y]``."""
    vals = u[None, :, None] - lams[:, None, None] * kappa[None, :, :]
    return vals.max(axis=1)


def _dual_bracket(kappa, u, row, delta, lams):
    support = row > 0
    s = _inner_sup(kappa[:, support], u, np.atleast_1d(lams))
    return lams * delta + s @ row[support]


def dual_penalized_backup(mdp: FiniteMDP, ball: WassersteinBall, u, x: int, a: int, lam: float) -> float:
    """Dual objective of the robust backup at a fixed penalty ``lam``."""
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    u = mdp.check_values(u)
    mdp._check_pair(x, a)
    kappa = mdp.kappa_matrix(ball.order_p)
    bracket = _dual_bracket(kappa, u, mdp.transition[x, a], ball.delta, np.array([float(lam)]))[0]
    return float(mdp.cost[x, a] + mdp.gamma * bracket)


def breakpoint_candidates(kappa: np.ndarray, u: np.ndarray, row: np.ndarray) -> np.ndarray:
    """All non-negative crossing points of the lines ``u(z) - lam * kappa(z, y)``.

    Only ``y`` in the support of ``row`` matter.  ``0`` is always included.
    Returns sorted unique values.
    """
    k = kappa[:, row > 0]  # (z, y)
    du = u[:, None] - u[None, :]  # u(z1) - u(z2)
    dk = k[:, None, :] - k[None, :, :]  # kappa(z1,y) - kappa(z2,y)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = du[:, :, None] / dk
    lam = lam[(dk != 0) & np.isfinite(lam) & (lam >= 0)]
    return np.unique(np.concatenate([[0.0], lam]))


def _minimize_bracket(kappa, u, row, delta):
    """Exact minimizer of the convex piecewise-linear dual bracket.

    The bracket restricted to the sorted candidates is a convex sequence,
    so the first index where it stops decreasing is the smallest minimizer.
    """
    cands = breakpoint_candidates(kappa, u, row)
    tol = 1e-12 * (1.0 + float(np.max(np.abs(u))))
    width = int(np.count_nonzero(row > 0)) * kappa.shape[0]
    if cands.size * width <= _FULL_EVAL_LIMIT:
        vals = _dual_bracket(kappa, u, row, delta, cands)
        idx = int(np.argmax(vals <= vals.min() + tol))
        return float(vals[idx]), float(cands[idx])
    # first index where the convex sequence stops decreasing
    lo, hi = 0, cands.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        pair = _dual_bracket(kappa, u, row, delta, cands[mid:mid + 2])
        if pair[1] - pair[0] >= -tol:
            hi = mid
        else:
            lo = mid + 1
    return float(_dual_bracket(kappa, u, row, delta, cands[lo:lo + 1])[0]), float(cands[lo])


def robust_q_backup(mdp: FiniteMDP, ball: WassersteinBall, u, x: int, a: int) -> tuple[float, float]:
    """Robust backup ``(H^a u)(x)`` and the smallest optimal penalty ``lambda*``."""
    u = mdp.check_values(u)
    mdp._check_pair(x, a)
    return _q_backup(mdp, mdp.kappa_matrix(ball.order_p), ball.delta, u, x, a)


def _q_backup(mdp, kappa, delta, u, x, a):
    bracket, lam = _minimize_bracket(kappa, u, mdp.transition[x, a], delta)
    return float(mdp.cost[x, a] + mdp.gamma * bracket), lam


def _all_q_backups(mdp: FiniteMDP, ball: WassersteinBall, u):
    kappa = mdp.kappa_matrix(ball.order_p)
    q = np.full((mdp.n_states, mdp.max_actions), np.inf)
    lam = np.zeros((mdp.n_states, mdp.max_actions))
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions[x]):
            q[x, a], lam[x, a] = _q_backup(mdp, kappa, ball.delta, u, x, a)
    return q, lam


def robust_bellman_operator(mdp: FiniteMDP, ball: WassersteinBall, u) -> np.ndarray:
    """``(Hu)(x) = min_a (H^a u)(x)``."""
    u = mdp.check_values(u)
    q, _ = _all_q_backups(mdp, ball, u)
    return q.min(axis=1)


def policy_evaluation_operator(mdp: FiniteMDP, ball: WassersteinBall, u, policy) -> np.ndarray:
    """``(H^pi u)(x) = sum_a pi(a|x) (H^a u)(x)``, each term with its own optimal penalty."""
    u = mdp.check_values(u)
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.max_actions):
        raise ValueError(f"policy must have shape ({mdp.n_states}, {mdp.max_actions})")
    admissible = mdp.admissible_mask()
    if np.any(policy < 0) or np.any(policy[~admissible] != 0):
        raise ValueError("policy weights must be non-negative and zero on inadmissible actions")
    if np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must sum to 1")
    q, _ = _all_q_backups(mdp, ball, u)
    q = np.where(admissible, q, 0.0)
    return (policy * q).sum(axis=1)


# -- value iteration -----------------------------------------------------------


def solve_value_iteration(
    mdp: FiniteMDP,
    ball: WassersteinBall,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    u0=None,
) -> RobustSolution:
    """Iterate ``u <- Hu`` to the robust fixed point and extract a greedy policy.

    Stops once the sup-norm change is at most ``tol``; by contraction the
    returned table is then within ``tol * gamma / (1 - gamma)`` of the fixed
    point.  If ``max_iter`` runs out first, the solution comes back with
    ``converged=False`` and a warning is emitted.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    u = np.zeros(mdp.n_states) if u0 is None else mdp.check_values(u0).copy()
    residual = math.inf
    iterations = 0
    converged = False
    while iterations < max_iter:
        q, _ = _all_q_backups(mdp, ball, u)
        new = q.min(axis=1)
        residual = float(np.max(np.abs(new - u)))
        u = new
        iterations += 1
        if residual <= tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"value iteration stopped after {iterations} iterations with residual {residual:.3e} > tol {tol:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    q, lam = _all_q_backups(mdp, ball, u)
    policy = np.array([_argmin_first(q[x, : mdp.n_actions[x]]) for x in range(mdp.n_states)])
    return RobustSolution(
        value=u,
        policy=policy,
        lambda_star=lam,
        iterations=iterations,
        residual=residual,
        converged=converged,
        q_values=q,
    )


def _argmin_first(row, rtol=1e-12):
    best = row.min()
    return int(np.argmax(row <= best + rtol * max(1.0, abs(best))))


def classical_value_iteration(mdp: FiniteMDP, tol: float = 1e-8, max_iter: int = 100_000):
    """Plain value iteration on the reference kernel, ``u <- min_a c + gamma P u``.

    Returns ``(value, policy, iterations)``.  Kept independent of the
    robust code path so it can serve as the zero-radius oracle.
    """
    admissible = mdp.admissible_mask()
    u = np.zeros(mdp.n_states)
    for it in range(1, max_iter + 1):
        q = mdp.cost + mdp.gamma * np.einsum("xay,y->xa", mdp.transition, u)
        new = np.where(admissible, q, np.inf).min(axis=1)
        done = np.max(np.abs(new - u)) <= tol
        u = new
        if done:
            break
    q = np.where(admissible, mdp.cost + mdp.gamma * np.einsum("xay,y->xa", mdp.transition, u), np.inf)
    return u, q.argmin(axis=1), it


# -- primal oracle ---------------------------------------------------------------


def simplex_grid(n: int, grid_k: int) -> np.ndarray:
    """Integer compositions of ``grid_k`` into ``n`` non-negative parts, shape ``(N, n)``."""
    if n < 1 or grid_k < 1:
        raise ValueError("need n >= 1 and grid_k >= 1")
    rows = []
    for bars in itertools.combinations(range(grid_k + n - 1), n - 1):
        edges = (-1,) + bars + (grid_k + n - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(n)])
    return np.array(rows, dtype=np.int64)


def monotone_transport_cost(positions, q, p_ref, order_p: float) -> np.ndarray:
    """Optimal transport cost between distributions on sorted 1-D support.

    Uses the quantile (monotone) coupling, optimal for ``|z - y|^p / p``
    with ``p >= 1`` on the line.  ``q`` may be a batch of shape ``(N, n)``.
    """
    positions = np.asarray(positions, dtype=float)
    if np.any(np.diff(positions) <= 0):
        raise ValueError("positions must be strictly increasing")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p_ref = np.asarray(p_ref, dtype=float)
    n = positions.size
    cq = np.cumsum(q, axis=1)
    cp = np.broadcast_to(np.cumsum(p_ref), cq.shape)
    levels = np.sort(np.concatenate([cq, cp], axis=1), axis=1)
    levels = np.clip(levels, 0.0, 1.0)
    lower = np.concatenate([np.zeros((levels.shape[0], 1)), levels[:, :-1]], axis=1)
    width = levels - lower
    mid = 0.5 * (levels + lower)
    iq = np.minimum((cq[:, None, :] < mid[:, :, None]).sum(axis=2), n - 1)
    ip = np.minimum((cp[:, None, :] < mid[:, :, None]).sum(axis=2), n - 1)
    gap = np.abs(positions[iq] - positions[ip])
    return (width * gap ** order_p / order_p).sum(axis=1)


def primal_backup_oracle(mdp: FiniteMDP, ball: WassersteinBall, u, x: int, a: int, grid_k: int) -> float:
    """Brute-force ``c + gamma * max {Q.u : D(Q, P) <= delta}`` over a simplex grid.

    Every ``Q`` with entries in ``{0, 1/grid_k, ..., 1}`` is enumerated and its
    transport cost to the reference row computed exactly with the monotone
    coupling.  The result is a lower bound of the exact robust backup.
    """
    u = mdp.check_values(u)
    mdp._check_pair(x, a)
    if grid_k < 1:
        raise ValueError("grid_k must be >= 1")
    row = mdp.transition[x, a]
    grid = simplex_grid(mdp.n_states, grid_k) / grid_k
    cost = monotone_transport_cost(mdp.states, grid, row, ball.order_p)
    feasible = cost <= ball.delta + 1e-12
    best = float((grid[feasible] @ u).max()) if feasible.any() else -math.inf
    # the reference row itself is always feasible, even when it is off the grid
    best = max(best, float(row @ u))
    return float(mdp.cost[x, a] + mdp.gamma * best)


# -- sensitivities -----------------------------------------------------------------


def sensitivity_delta(solution: RobustSolution, mdp: FiniteMDP, x: int) -> float:
    """Envelope derivative of the robust value at ``x`` with respect to ``delta``: ``gamma * lambda*``.

    This is the derivative of one robust backup at the fixed point; it
    equals the derivative of ``u*(x)`` itself whenever the values of the
    states reachable under the worst-case kernel do not move with
    ``delta``.  :func:`fixed_point_delta_derivative` gives the full
    derivative.
    """
    lam = float(solution.lambda_star[x, solution.policy[x]])
    if lam == 0.0:
        warnings.warn(
            f"lambda* is 0 at state {x}: the value there is locally insensitive to delta",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return mdp.gamma * lam


def inner_argmax(kappa: np.ndarray, u: np.ndarray, y: int, lam: float, prefer_far: bool = True) -> int:
    """``argmax_z u(z) - lam * kappa(z, y)``; ties go to the largest displacement by default."""
    vals = u - lam * kappa[:, y]
    best = vals.max()
    ties = np.flatnonzero(vals >= best - 1e-12 * (1.0 + abs(best)))
    if not prefer_far:
        return int(ties[np.argmin(kappa[ties, y])])
    return int(ties[np.argmax(kappa[ties, y])])


def sensitivity_p(solution: RobustSolution, mdp: FiniteMDP, ball: WassersteinBall, x: int) -> float:
    """Envelope derivative with respect to the order ``p`` at fixed ``delta``.

    ``-gamma * lam* * sum_y P(y) * (d^p / p) * (log d - 1/p)`` with
    ``d = |z*(y) - y|``.  Terms with ``d = 0`` vanish.  At a breakpoint of
    the dual several ``z`` maximize the inner problem; the one that moves
    mass (largest displacement) is used.
    """
    a = int(solution.policy[x])
    lam = float(solution.lambda_star[x, a])
    if lam == 0.0:
        return 0.0
    p = ball.order_p
    kappa = mdp.kappa_matrix(p)
    row = mdp.transition[x, a]
    total = 0.0
    for y in np.flatnonzero(row > 0):
        z = inner_argmax(kappa, solution.value, y, lam)
        d = abs(mdp.states[z] - mdp.states[y])
        if d == 0.0:
            continue
        total += row[y] * (d ** p / p) * (math.log(d) - 1.0 / p)
    return -mdp.gamma * lam * total


def worst_case_kernel(mdp: FiniteMDP, ball: WassersteinBall, u, x: int, a: int) -> np.ndarray:
    """A worst-case next-state distribution for ``(x, a)`` at values ``u``.

    Mixes the two inner maximizers (nearest and farthest) at ``lambda*`` so
    that the transport budget is met exactly when the penalty is active.
    """
    u = mdp.check_values(u)
    kappa = mdp.kappa_matrix(ball.order_p)
    row = mdp.transition[x, a]
    _, lam = _q_backup(mdp, kappa, ball.delta, u, x, a)
    support = np.flatnonzero(row > 0)
    near = np.array([inner_argmax(kappa, u, y, lam, prefer_far=False) for y in support])
    far = np.array([inner_argmax(kappa, u, y, lam, prefer_far=True) for y in support])
    q_near = np.zeros(mdp.n_states)
    q_far = np.zeros(mdp.n_states)
    np.add.at(q_near, near, row[support])
    np.add.at(q_far, far, row[support])
    if lam == 0.0:
        return q_far
    c_near = float(row[support] @ kappa[near, support])
    c_far = float(row[support] @ kappa[far, support])
    if c_far - c_near <= 0:
        return q_near
    t = min(1.0, max(0.0, (ball.delta - c_near) / (c_far - c_near)))
    return (1.0 - t) * q_near + t * q_far


def fixed_point_delta_derivative(solution: RobustSolution, mdp: FiniteMDP, ball: WassersteinBall) -> np.ndarray:
    """Total derivative of ``u*`` in ``delta``: ``(I - gamma Q*)^{-1} gamma lambda*``.

    Differentiating ``u* = H_delta u*`` propagates the one-step sensitivity
    through the worst-case kernel ``Q*`` of the greedy policy.
    """
    n = mdp.n_states
    q_star = np.array([worst_case_kernel(mdp, ball, solution.value, x, int(solution.policy[x])) for x in range(n)])
    lam = solution.lambda_star[np.arange(n), solution.policy]
    return np.linalg.solve(np.eye(n) - mdp.gamma * q_star, mdp.gamma * lam)
