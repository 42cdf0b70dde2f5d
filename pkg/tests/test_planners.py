import dataclasses
import time

import numpy as np
import pytest

from CampPlanner.abstraction import DEFAULT_SINK_REWARD, SINK, build_camp
from CampPlanner.contexts import Context
from CampPlanner.core import (ACTION, STATE, Assignment, ConfigError, CostMeter, FactoredMdp,
                              StateSpaceTooLargeError, VariableSpec, rollout)
from CampPlanner.csi import CsiSet
from CampPlanner.domain_dinner import DinnerConfig, initial_state as dinner_start, make_task as dinner_task
from CampPlanner.domain_gridworld import GridworldConfig, GridworldLayout, grid_geometry, make_task as grid_task
from CampPlanner.planners import (BFS_REPLAN, OPTIMAL_SEARCH, VALUE_ITERATION, PlannerConfig, bfs_replan_plan,
                                  bfs_search, make_policy, mcts_plan, optimal_search, value_iteration)

from conftest import build_chain_mdp


def _bandit():
    """One decision: arm 0 pays 1, arm 1 pays 5, then the episode ends."""
    pos = VariableSpec("pos", STATE, (0, 1, 2))
    arm = VariableSpec("arm", ACTION, (0, 1))

    def transition(s, a, rng=None):
        return Assignment({"pos": 1 + a["arm"]}) if s["pos"] == 0 else s

    return FactoredMdp((pos,), (arm,), transition, lambda s: {0: 0.0, 1: 1.0, 2: 5.0}[s["pos"]],
                       frozenset({"pos"}), horizon=3, transition_dist=lambda s, a: {transition(s, a): 1.0},
                       terminal=lambda s: s["pos"] != 0, max_reward=5.0, deterministic=True, name="bandit")


def _open_room_task():
    cfg = GridworldConfig(room_rows=1, room_cols=1, room_width=5, room_height=5, n_obstacles=0, horizon=10)
    geo = grid_geometry(cfg)
    layout = GridworldLayout((), geo.cell(1, 3), geo.cell(4, 3), ())
    return grid_task(cfg, "open-room", layout)


def _sink_camp(chain):
    ctx = Context.literal("move", "advance", negated=True)
    return build_camp(chain, ctx, CsiSet(ctx, frozenset()))


def test_planner_config_normalizes_and_validates():
    assert PlannerConfig("bfs-replan").kind == BFS_REPLAN
    assert PlannerConfig("vi").kind == VALUE_ITERATION
    assert PlannerConfig("optimal").kind == OPTIMAL_SEARCH
    with pytest.raises(ConfigError):
        PlannerConfig("dijkstra")
    with pytest.raises(ConfigError):
        PlannerConfig("mcts", timeout_seconds=0)
    with pytest.raises(ConfigError):
        PlannerConfig("mcts", timeout_seconds=61)


def test_mcts_single_action_is_returned_without_search():
    mdp = build_chain_mdp()
    only = Assignment({"move": "advance"})
    single = dataclasses.replace(mdp, action_list=(only,))
    meter = CostMeter()
    assert mcts_plan(single, Assignment({"pos": 0}), PlannerConfig("mcts"), np.random.default_rng(0), meter) == only
    assert meter.expansions == 0


def test_mcts_prefers_the_better_arm():
    cfg = PlannerConfig("mcts", mcts_budget_seconds=0.1, mcts_iterations_cap=200)
    a = mcts_plan(_bandit(), Assignment({"pos": 0}), cfg, np.random.default_rng(0))
    assert a == Assignment({"arm": 1})


def test_mcts_respects_time_budget():
    cfg = PlannerConfig("mcts", mcts_budget_seconds=0.2, mcts_iterations_cap=10**9)
    mdp = build_chain_mdp(n=30, horizon=25)
    start = time.perf_counter()
    mcts_plan(mdp, Assignment({"pos": 0}), cfg, np.random.default_rng(0))
    assert time.perf_counter() - start <= 0.2 * 1.2


def test_bfs_moves_toward_goal_in_open_room():
    task = _open_room_task()
    a = bfs_replan_plan(task.mdp, task.initial_state, PlannerConfig("bfs"))
    assert a["move"] == "right"
    result = bfs_search(task.mdp, task.initial_state, PlannerConfig("bfs"))
    assert len(result.plan) == 3
    assert result.target_reward == 1000.0


def test_bfs_replan_reaches_goal_at_step_three():
    task = _open_room_task()
    traj = rollout(task.mdp, make_policy(task.mdp, PlannerConfig("bfs")), task, np.random.default_rng(0))
    assert len(traj.states) == 4
    assert traj.rewards[3] == 1000.0


def test_bfs_removes_a_blocking_obstacle():
    # one-row corridor: the only move that is not into a wall hits the obstacle
    cfg = GridworldConfig(room_rows=1, room_cols=1, room_width=3, room_height=1, n_obstacles=1,
                          obstacle_move_prob=0.0, horizon=6)
    geo = grid_geometry(cfg)
    task = grid_task(cfg, "corridor", GridworldLayout((), geo.cell(1, 1), geo.cell(3, 1), (geo.cell(2, 1),)))
    s = task.initial_state
    for a in task.mdp.action_list[1:5]:
        assert task.mdp.transition(s, a, None)["agent_pos"] == s["agent_pos"]
    a = bfs_replan_plan(task.mdp, s, PlannerConfig("bfs"))
    assert a["remove_0"] == 1
    result = bfs_search(task.mdp, s, PlannerConfig("bfs"))
    assert [step["move"] for step in result.plan] == ["none", "right", "right"]
    assert result.target_reward == 1000.0


def test_bfs_terminal_state_returns_first_action(chain_mdp):
    s = Assignment({"pos": 2})
    assert bfs_replan_plan(chain_mdp, s, PlannerConfig("bfs")) == chain_mdp.action_list[0]


def test_value_iteration_geometric_series():
    s = VariableSpec("s", STATE, (0,))
    a = VariableSpec("a", ACTION, (0,))
    mdp = FactoredMdp((s,), (a,), lambda x, u, rng=None: x, lambda x: 1.0, frozenset({"s"}), gamma=0.9,
                      transition_dist=lambda x, u: {x: 1.0}, deterministic=True)
    table = value_iteration(mdp, 0.9, PlannerConfig("vi"))
    assert table.value(Assignment({"s": 0})) == pytest.approx(10.0, abs=1e-4)
    assert table.residual < 1e-6
    assert table.converged


def test_value_iteration_greedy_policy_advances():
    mdp = build_chain_mdp(gamma=0.9)
    table = value_iteration(mdp, 0.9, PlannerConfig("vi"), [Assignment({"pos": 0})])
    assert len(table) == 3
    assert table.greedy_action(Assignment({"pos": 0})) == Assignment({"move": "advance"})
    assert table.value(Assignment({"pos": 1})) == pytest.approx(10.0)
    assert table.value(Assignment({"pos": 0})) == pytest.approx(9.0)


def test_value_iteration_state_cap():
    mdp = build_chain_mdp(n=10)
    with pytest.raises(StateSpaceTooLargeError):
        value_iteration(mdp, 1.0, PlannerConfig("vi", vi_state_cap=3), [Assignment({"pos": 0})])


def test_optimal_search_dinner_steak():
    task = dinner_task(DinnerConfig(), "steak", (10.0, 50.0, 100.0))
    result = optimal_search(task.mdp, dinner_start())
    assert result.optimal
    assert result.value == pytest.approx(78.0)
    assert len(result.plan) == 22


def test_optimal_search_dinner_ramen():
    task = dinner_task(DinnerConfig(), "ramen", (90.0, 50.0, 10.0))
    result = optimal_search(task.mdp, dinner_start())
    assert result.value == pytest.approx(88.0)
    assert len(result.plan) == 2


def test_optimal_search_is_reproducible():
    task = dinner_task(DinnerConfig(), "sandwich", (10.0, 90.0, 20.0))
    first = optimal_search(task.mdp, dinner_start())
    second = optimal_search(task.mdp, dinner_start())
    assert first.plan == second.plan
    assert first.value == second.value


def test_optimal_search_rejects_stochastic_and_unbounded(diagram_mdp, chain_mdp):
    with pytest.raises(ConfigError):
        optimal_search(diagram_mdp, Assignment({"S1": 0, "S2": 0, "S3": 0}))
    with pytest.raises(ConfigError):
        optimal_search(dataclasses.replace(chain_mdp, max_reward=None), Assignment({"pos": 0}))
    with pytest.raises(ConfigError):
        optimal_search(dataclasses.replace(chain_mdp, max_reward=5.0), Assignment({"pos": 0}))


def test_optimal_search_terminal_start(chain_mdp):
    result = optimal_search(chain_mdp, Assignment({"pos": 2}))
    assert result.plan == []
    assert result.value == 0.0


def test_planners_avoid_the_sink(chain_mdp):
    camp = _sink_camp(chain_mdp)
    x = camp.project(Assignment({"pos": 0}))
    stay = Assignment({"move": "stay"})
    assert camp.successor_distribution(x, Assignment({"move": "advance"})) == {SINK: 1.0}
    assert camp.reward(SINK) == DEFAULT_SINK_REWARD
    for kind in ("optimal", "bfs", "mcts"):
        policy = make_policy(camp, PlannerConfig(kind, mcts_budget_seconds=0.05), np.random.default_rng(0))
        assert policy(Assignment({"pos": 0})) == stay, kind


def test_policy_on_camp_lifts_actions(diagram_mdp):
    ctx = Context.literal("S2", 1)
    camp = build_camp(diagram_mdp, ctx, CsiSet(ctx, frozenset({("S3", "S1"), ("A2", "S1"), ("S1", "S3"),
                                                                 ("A1", "S3"), ("S3", "S3")})))
    policy = make_policy(camp, PlannerConfig("mcts", mcts_budget_seconds=0.02), np.random.default_rng(0))
    a = policy(Assignment({"S1": 0, "S2": 1, "S3": 1}))
    assert set(a) == {"A1", "A2"}
    assert policy.t == 1
    policy.reset()
    assert policy.t == 0


def test_policy_stops_planning_once_the_context_is_violated():
    task = dinner_task(DinnerConfig(horizon=6), "d", (10.0, 90.0, 20.0))
    ctx = Context.literal("location", "kitchen")
    meter = CostMeter()
    policy = make_policy(build_camp(task.mdp, ctx, CsiSet(ctx, frozenset())), PlannerConfig("optimal"),
                         np.random.default_rng(0), meter)
    traj = rollout(task.mdp, policy, task, np.random.default_rng(0))
    assert meter.expansions == 0
    assert all(a in task.mdp.action_list for a in traj.actions)
    assert policy.t == len(traj.actions)
