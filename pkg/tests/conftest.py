import itertools

import numpy as np
import pytest

from CampPlanner.core import ACTION, STATE, Assignment, FactoredMdp, VariableSpec
from CampPlanner.domain_gridworld import GridworldConfig


BIN = (0, 1)


def _diagram_dist(s, a):
    """S1 <- (S1, S2, A1); S2 <- (S2, S3); S3 <- A2. Reward reads S1 only."""
    if s["S2"] == 1 and a["A1"] == 1:
        s1 = {1: 0.9, 0: 0.1} if s["S1"] == 0 else {1: 1.0}
    else:
        s1 = {s["S1"]: 1.0}
    s2 = {s["S3"]: 1.0} if s["S2"] == 1 else {s["S2"]: 1.0}
    s3 = {a["A2"]: 0.8, 1 - a["A2"]: 0.2}
    dist = {}
    for (v1, p1), (v2, p2), (v3, p3) in itertools.product(s1.items(), s2.items(), s3.items()):
        key = Assignment({"S1": v1, "S2": v2, "S3": v3})
        dist[key] = dist.get(key, 0.0) + p1 * p2 * p3
    return dist


def _sample_from(dist_fn):
    def transition(s, a, rng=None):
        dist = dist_fn(s, a)
        outcomes = list(dist)
        if rng is None:
            return max(outcomes, key=lambda o: dist[o])
        return outcomes[rng.choice(len(outcomes), p=[dist[o] for o in outcomes])]
    return transition


def build_diagram_mdp(horizon=4):
    state_vars = tuple(VariableSpec(n, STATE, BIN) for n in ("S1", "S2", "S3"))
    action_vars = tuple(VariableSpec(n, ACTION, BIN) for n in ("A1", "A2"))
    return FactoredMdp(state_vars, action_vars, _sample_from(_diagram_dist),
                       lambda s: 10.0 if s["S1"] == 1 else 0.0, frozenset({"S1"}),
                       horizon=horizon, transition_dist=_diagram_dist, max_reward=10.0, name="diagram")


def build_chain_mdp(n=3, goal_reward=10.0, horizon=5, gamma=1.0):
    pos = VariableSpec("pos", STATE, tuple(range(n)))
    move = VariableSpec("move", ACTION, ("stay", "advance"))

    def transition(s, a, rng=None):
        if a["move"] == "advance" and s["pos"] < n - 1:
            return s.updated({"pos": s["pos"] + 1})
        return s

    return FactoredMdp((pos,), (move,), transition,
                       lambda s: goal_reward if s["pos"] == n - 1 else 0.0, frozenset({"pos"}),
                       horizon=horizon, gamma=gamma,
                       transition_dist=lambda s, a: {transition(s, a): 1.0},
                       terminal=lambda s: s["pos"] == n - 1, max_reward=goal_reward,
                       deterministic=True, name="chain")


@pytest.fixture
def diagram_mdp():
    return build_diagram_mdp()


@pytest.fixture
def chain_mdp():
    return build_chain_mdp()


@pytest.fixture
def small_grid_config():
    return GridworldConfig(room_rows=1, room_cols=2, n_obstacles=2, horizon=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
