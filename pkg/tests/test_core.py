import dataclasses
import math

import numpy as np
import pytest

from CampPlanner.core import (EXPANSIONS, STATE, WALLCLOCK, Assignment, CampError, ConfigError,
                              CostMeter, InvalidAssignmentError, RolloutError, Step, Task, Trajectory,
                              VariableSpec, derive_rng, enumerate_assignments, evaluate_objective, joint,
                              marginal, most_likely_successor, objective_value, rollout, split_rng)
from CampPlanner.domain_dinner import DinnerConfig, make_task as dinner_task
from CampPlanner.planners import PlannerConfig, make_policy

from conftest import build_chain_mdp, build_diagram_mdp


def _advance(s):
    return Assignment({"move": "advance"})


def _chain_task(mdp):
    return Task("chain-0", Assignment({"pos": 0}), np.zeros(1), mdp)


def _random_policy(mdp, seed):
    rng = np.random.default_rng(seed)
    actions = mdp.action_list
    return lambda s: actions[int(rng.integers(len(actions)))]


def test_variable_spec_rejects_bad_domains():
    with pytest.raises(ConfigError):
        VariableSpec("x", STATE, ())
    with pytest.raises(ConfigError):
        VariableSpec("x", STATE, (1, 1))
    with pytest.raises(ConfigError):
        VariableSpec("x", "other", (0, 1))


def test_assignment_updated_matches_fresh_assignment():
    a = Assignment({"a": 1, "b": 2})
    b = a.updated({"a": 3})
    assert b == Assignment({"b": 2, "a": 3})
    assert hash(b) == hash(Assignment({"b": 2, "a": 3}))
    assert a["a"] == 1
    assert b.restrict(["b"]) == {"b": 2}


def test_joint_and_marginal():
    j = joint({"s": 1}, {"a": 0})
    assert dict(j) == {"s": 1, "a": 0}
    dist = {Assignment({"x": 0, "y": 1}): 0.25, Assignment({"x": 0, "y": 0}): 0.25,
            Assignment({"x": 1, "y": 0}): 0.5}
    assert marginal(dist, "x") == {0: 0.5, 1: 0.5}


def test_enumerate_assignments_first_variable_slowest():
    specs = [VariableSpec("a", STATE, (0, 1)), VariableSpec("b", STATE, ("x", "y", "z"))]
    out = enumerate_assignments(specs)
    assert len(out) == 6
    assert [dict(o) for o in out[:3]] == [{"a": 0, "b": "x"}, {"a": 0, "b": "y"}, {"a": 0, "b": "z"}]


def test_mdp_rejects_reward_on_unknown_variable():
    base = build_chain_mdp()
    with pytest.raises(ConfigError):
        type(base)(base.state_vars, base.action_vars, base.transition, base.reward, frozenset({"missing"}))


def test_task_validates_initial_state():
    mdp = build_chain_mdp()
    with pytest.raises(InvalidAssignmentError):
        Task("bad", Assignment({"pos": 7}), np.zeros(1), mdp)
    with pytest.raises(InvalidAssignmentError):
        Task("bad", Assignment({"pos": 0}), np.array([np.nan]), mdp)


def test_successor_distribution_sums_to_one(diagram_mdp):
    s = Assignment({"S1": 0, "S2": 1, "S3": 1})
    for a in diagram_mdp.action_list:
        assert math.isclose(sum(diagram_mdp.successor_distribution(s, a).values()), 1.0)


def test_bad_distribution_is_rejected():
    base = build_chain_mdp()
    broken = type(base)(base.state_vars, base.action_vars, base.transition, base.reward, base.reward_vars,
                        transition_dist=lambda s, a: {s: 0.5})
    with pytest.raises(CampError):
        broken.successor_distribution(Assignment({"pos": 0}), base.action_list[0])


def test_most_likely_successor_uses_distribution(diagram_mdp):
    s = Assignment({"S1": 0, "S2": 0, "S3": 0})
    a = Assignment({"A1": 0, "A2": 1})
    assert most_likely_successor(diagram_mdp, s, a) == Assignment({"S1": 0, "S2": 0, "S3": 1})


def test_most_likely_successor_prefers_the_model_rule(diagram_mdp):
    s = Assignment({"S1": 0, "S2": 0, "S3": 0})
    a = Assignment({"A1": 0, "A2": 1})
    pinned = Assignment({"S1": 1, "S2": 1, "S3": 1})
    ruled = dataclasses.replace(diagram_mdp, most_likely=lambda x, u: pinned)
    assert most_likely_successor(ruled, s, a) == pinned
    assert diagram_mdp.most_likely_next(s, a) is None


def test_rollout_horizon_one_has_two_steps():
    mdp = build_chain_mdp(horizon=1)
    traj = rollout(mdp, _advance, _chain_task(mdp), np.random.default_rng(0))
    assert len(traj) == 2
    assert traj.steps[-1].action is None
    assert traj.rewards == [0.0, 0.0]


def test_rollout_records_states_in_order_and_stops_at_terminal():
    mdp = build_chain_mdp()
    traj = rollout(mdp, _advance, _chain_task(mdp), np.random.default_rng(0))
    assert [s["pos"] for s in traj.states] == [0, 1, 2]
    assert traj.rewards == [0.0, 0.0, 10.0]
    assert traj.discounted_return() == 10.0
    assert len(traj.actions) == 2


def test_rollout_wraps_policy_failure_with_step_index():
    mdp = build_chain_mdp(n=5)
    calls = []

    def flaky(s):
        calls.append(s)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return Assignment({"move": "advance"})

    with pytest.raises(RolloutError) as info:
        rollout(mdp, flaky, _chain_task(mdp), np.random.default_rng(0))
    assert info.value.step == 1
    assert isinstance(info.value.cause, RuntimeError)


def test_rollout_meters_expansions():
    mdp = build_chain_mdp()

    class Metered:
        def __init__(self):
            self.meter = CostMeter()

        def __call__(self, s):
            self.meter.expand(7)
            return Assignment({"move": "advance"})

    traj = rollout(mdp, Metered(), _chain_task(mdp), np.random.default_rng(0))
    assert traj.expansions == 14
    assert traj.total_cost(EXPANSIONS) == pytest.approx(14 * 1e-5)


def test_rollout_is_deterministic_under_fixed_seed():
    mdp = build_diagram_mdp(horizon=10)
    task = Task("diagram-0", Assignment({"S1": 0, "S2": 1, "S3": 0}), np.zeros(2), mdp)
    first = rollout(mdp, _random_policy(mdp, 5), task, derive_rng(3, "eval", task.task_id))
    second = rollout(mdp, _random_policy(mdp, 5), task, derive_rng(3, "eval", task.task_id))
    assert first.states == second.states
    assert first.actions == second.actions


def test_objective_arithmetic():
    steps = [Step("s0", "a", 0.0, 0.5), Step("s1", "a", 0.0, 0.2), Step("s2", None, 1000.0, 0.1)]
    traj = Trajectory(steps, gamma=1.0)
    assert evaluate_objective([traj], 100.0, WALLCLOCK) == pytest.approx(920.0)
    assert evaluate_objective([traj], 0.0) == pytest.approx(1000.0)


def test_objective_is_non_increasing_in_lambda():
    traj = Trajectory([Step("s0", "a", 0.0, 0.3), Step("s1", None, 5.0, 0.0)])
    values = [evaluate_objective([traj], lam) for lam in (0.0, 1.0, 10.0, 100.0)]
    assert values == sorted(values, reverse=True)


def test_objective_rejects_empty_and_negative_lambda():
    traj = Trajectory([Step("s0", None, 0.0)])
    with pytest.raises(CampError):
        evaluate_objective([], 1.0)
    with pytest.raises(ConfigError):
        evaluate_objective([traj], -1.0)
    with pytest.raises(ConfigError):
        traj.total_cost("gpu")


def test_objective_value_guards_non_finite():
    assert objective_value(10.0, 0.5, 2.0) == pytest.approx(9.0)
    assert objective_value(float("nan"), 0.0, 1.0) == -math.inf


def test_charge_adds_to_first_step():
    traj = Trajectory([Step("s0", "a", 0.0, 0.1, 2), Step("s1", None, 1.0)])
    traj.charge(0.4, 3)
    assert traj.compute_seconds == pytest.approx(0.5)
    assert traj.expansions == 5


def test_derive_rng_is_stable_and_key_sensitive():
    a = derive_rng(7, "task", "train", 3).random(4)
    b = derive_rng(7, "task", "train", 3).random(4)
    c = derive_rng(7, "task", "train", 4).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_rng_keeps_the_environment_stream_fixed():
    policy_a, env_a = split_rng(derive_rng(0, "eval", "t-0"))
    policy_b, env_b = split_rng(derive_rng(0, "eval", "t-0"))
    policy_a.random(100)
    assert np.array_equal(env_a.random(5), env_b.random(5))
    assert np.array_equal(policy_a.random(3), policy_b.random(103)[100:])


def test_steak_plan_nets_78():
    task = dinner_task(DinnerConfig(), "dinner-steak", (10.0, 50.0, 100.0))
    policy = make_policy(task.mdp, PlannerConfig("optimal_search"))
    traj = rollout(task.mdp, policy, task, np.random.default_rng(0))
    assert traj.discounted_return() == pytest.approx(78.0)
    assert len(traj.actions) == 22
