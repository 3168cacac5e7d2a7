"""Plain-text files for finite MDPs and their robust solutions.

MDP files are ``key = value`` lines; ``#`` starts a comment and blank
lines are ignored::

    gamma = 0.9
    states = 0.0 1.0            # strictly increasing 1-D embeddings
    actions = 2                 # actions per state
    c_bar = 1.0                 # optional cost bound
    cost[0] = 0.0 0.5           # one cost per action of state 0
    transition[0,1] = 0.25 0.75 # P(. | x=0, a=1), one entry per state

Every ``cost[x]`` and ``transition[x,a]`` line must be present exactly
once.  Parse errors name the offending line.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .robust_mdp import FiniteMDP, RobustSolution, WassersteinBall

_INDEXED = re.compile(r"^(cost|transition|lambda)\[(\d+)(?:,(\d+))?\]$")


class MDPFileError(ValueError):
    """Malformed or inconsistent MDP / solution file."""

    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


def _floats(text, path, lineno):
    try:
        return [float(t) for t in text.split()]
    except ValueError:
        raise MDPFileError(path, lineno, f"expected numbers, got {text!r}") from None


def _entries(text: str, path):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MDPFileError(path, lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        yield lineno, key.replace(" ", ""), value


def parse_mdp(text: str, path="<string>") -> FiniteMDP:
    scalars: dict = {}
    costs: dict = {}
    rows: dict = {}
    for lineno, key, value in _entries(text, path):
        m = _INDEXED.match(key)
        if m:
            kind, i, j = m.group(1), int(m.group(2)), m.group(3)
            if kind == "cost" and j is None:
                if i in costs:
                    raise MDPFileError(path, lineno, f"duplicate cost[{i}]")
                costs[i] = (lineno, _floats(value, path, lineno))
            elif kind == "transition" and j is not None:
                if (i, int(j)) in rows:
                    raise MDPFileError(path, lineno, f"duplicate transition[{i},{j}]")
                rows[(i, int(j))] = (lineno, _floats(value, path, lineno))
            else:
                raise MDPFileError(path, lineno, f"bad index in {key!r}")
        elif key in ("gamma", "states", "actions", "c_bar"):
            if key in scalars:
                raise MDPFileError(path, lineno, f"duplicate key {key!r}")
            scalars[key] = (lineno, _floats(value, path, lineno))
        else:
            raise MDPFileError(path, lineno, f"unknown key {key!r}")

    for key in ("gamma", "states", "actions"):
        if key not in scalars:
            raise MDPFileError(path, 0, f"missing required key {key!r}")
    states = scalars["states"][1]
    n = len(states)
    line_a, acts = scalars["actions"]
    if len(acts) != 1 or acts[0] != int(acts[0]) or acts[0] < 1:
        raise MDPFileError(path, line_a, "actions must be one positive integer")
    A = int(acts[0])
    line_g, gamma = scalars["gamma"]
    if len(gamma) != 1:
        raise MDPFileError(path, line_g, "gamma must be a single number")

    cost = np.zeros((n, A))
    P = np.zeros((n, A, n))
    for x in range(n):
        if x not in costs:
            raise MDPFileError(path, 0, f"missing cost[{x}]")
        lineno, vals = costs.pop(x)
        if len(vals) != A:
            raise MDPFileError(path, lineno, f"cost[{x}] needs {A} values, got {len(vals)}")
        cost[x] = vals
        for a in range(A):
            if (x, a) not in rows:
                raise MDPFileError(path, 0, f"missing transition[{x},{a}]")
            lineno, vals = rows.pop((x, a))
            if len(vals) != n:
                raise MDPFileError(path, lineno, f"transition[{x},{a}] needs {n} values, got {len(vals)}")
            P[x, a] = vals
    leftover = sorted([ln for ln, _ in costs.values()] + [ln for ln, _ in rows.values()])
    if leftover:
        raise MDPFileError(path, leftover[0], "index out of range")

    c_bar = scalars["c_bar"][1][0] if "c_bar" in scalars else None
    try:
        return FiniteMDP(states, P, cost, gamma[0], c_bar=c_bar)
    except ValueError as exc:
        raise MDPFileError(path, 0, str(exc)) from None


def load_mdp(path) -> FiniteMDP:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read MDP file {path}: {exc}") from None
    return parse_mdp(text, path)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def format_mdp(mdp: FiniteMDP) -> str:
    lines = [
        f"gamma = {mdp.gamma!r}",
        f"states = {_fmt(mdp.states)}",
        f"actions = {mdp.max_actions}",
        f"c_bar = {mdp.c_bar!r}",
    ]
    for x in range(mdp.n_states):
        lines.append(f"cost[{x}] = {_fmt(mdp.cost[x])}")
    for x in range(mdp.n_states):
        for a in range(mdp.max_actions):
            lines.append(f"transition[{x},{a}] = {_fmt(mdp.transition[x, a])}")
    return "\n".join(lines) + "\n"


def save_mdp(mdp: FiniteMDP, path) -> Path:
    path = Path(path)
    path.write_text(format_mdp(mdp))
    return path


def format_solution(solution: RobustSolution, ball: WassersteinBall) -> str:
    """Solution file: convergence data, then ``value``, ``policy`` and one ``lambda[x]`` line per state."""
    lines = [
        f"converged = {str(solution.converged).lower()}",
        f"iterations = {solution.iterations}",
        f"residual = {solution.residual!r}",
        f"delta = {ball.delta!r}",
        f"order_p = {ball.order_p!r}",
        f"value = {_fmt(solution.value)}",
        "policy = " + " ".join(str(int(a)) for a in solution.policy),
    ]
    for x, row in enumerate(solution.lambda_star):
        lines.append(f"lambda[{x}] = {_fmt(row)}")
    return "\n".join(lines) + "\n"


def parse_solution(text: str, path="<string>") -> dict:
    """Read a solution file back into plain arrays (``value``, ``policy``, ``lambda_star``, ...)."""
    out: dict = {}
    lams: dict = {}
    for lineno, key, value in _entries(text, path):
        m = _INDEXED.match(key)
        if m and m.group(1) == "lambda" and m.group(3) is None:
            lams[int(m.group(2))] = _floats(value, path, lineno)
        elif key == "converged":
            if value not in ("true", "false"):
                raise MDPFileError(path, lineno, "converged must be true or false")
            out[key] = value == "true"
        elif key == "iterations":
            out[key] = int(_floats(value, path, lineno)[0])
        elif key in ("residual", "delta", "order_p"):
            out[key] = _floats(value, path, lineno)[0]
        elif key == "value":
            out[key] = np.array(_floats(value, path, lineno))
        elif key == "policy":
            out[key] = np.array(_floats(value, path, lineno), dtype=int)
        else:
            raise MDPFileError(path, lineno, f"unknown key {key!r}")
    if "value" not in out:
        raise MDPFileError(path, 0, "missing value")
    out["lambda_star"] = np.array([lams[x] for x in sorted(lams)])
    return out
