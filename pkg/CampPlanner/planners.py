"""
Planners consumed as black boxes: Plan(M, s).

  mcts_plan         - UCT with uniform-random rollouts, anytime under a time budget
  bfs_replan_plan   - breadth-first graph search on the most-likely determinization
  value_iteration   - offline asynchronous value iteration over the reachable states
  optimal_search    - uniform-cost search for reward-maximizing plans (deterministic MDPs)

Every planner accepts either a FactoredMdp or a Camp and meters node
expansions through an optional CostMeter.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (Assignment, ConfigError, CostMeter, StateSpaceTooLargeError, enumerate_assignments,
                   most_likely_successor)

logger = logging.getLogger(__name__)

MCTS = "mcts"
BFS_REPLAN = "bfs_replan"
VALUE_ITERATION = "value_iteration"
OPTIMAL_SEARCH = "optimal_search"
PLANNER_KINDS = (MCTS, BFS_REPLAN, VALUE_ITERATION, OPTIMAL_SEARCH)
PLANNER_ALIASES = {
    "mcts": MCTS,
    "bfs-replan": BFS_REPLAN, "bfs_replan": BFS_REPLAN, "bfs": BFS_REPLAN,
    "vi": VALUE_ITERATION, "value_iteration": VALUE_ITERATION,
    "optimal": OPTIMAL_SEARCH, "optimal_search": OPTIMAL_SEARCH,
}

GLOBAL_TIMEOUT_SECONDS = 60.0
VI_BLOCK_SIZE = 1024


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = MCTS
    timeout_seconds: float = GLOBAL_TIMEOUT_SECONDS
    mcts_budget_seconds: float = 0.25
    mcts_iterations_cap: int = 10_000
    mcts_exploration: float = 1.41
    vi_tolerance: float = 1e-6
    vi_state_cap: int = 200_000
    vi_transition_cap: int = 20_000_000
    vi_max_sweeps: int = 100_000
    determinization: str = "most_likely"

    def __post_init__(self):
        kind = PLANNER_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"unknown planner {self.kind!r}; expected one of {sorted(PLANNER_ALIASES)}")
        object.__setattr__(self, "kind", kind)
        if not 0 < self.timeout_seconds <= GLOBAL_TIMEOUT_SECONDS:
            raise ConfigError(f"planner timeout must be in (0, {GLOBAL_TIMEOUT_SECONDS}] seconds")
        if self.determinization != "most_likely":
            raise ConfigError(f"unsupported determinization {self.determinization!r}")


def _meter(meter: Optional[CostMeter]) -> CostMeter:
    return meter if meter is not None else CostMeter()


# ---------- MCTS ----------

class _Node:
    __slots__ = ("state", "visits", "counts", "totals", "children")

    def __init__(self, state, n_actions: int):
        self.state = state
        self.visits = 0
        self.counts = [0] * n_actions
        self.totals = [0.0] * n_actions
        self.children: List[Dict[Any, "_Node"]] = [dict() for _ in range(n_actions)]


def _random_rollout(mdp, s, depth: int, rng, meter: CostMeter) -> float:
    total, discount = 0.0, 1.0
    for _ in range(depth):
        if mdp.is_terminal(s):
            break
        actions = mdp.legal_actions(s)
        s = mdp.sample_next(s, actions[int(rng.integers(len(actions)))], rng)
        meter.expand()
        total += discount * mdp.reward(s)
        discount *= mdp.gamma
    return total


def _simulate(mdp, node: _Node, depth: int, c: float, rng, meter: CostMeter) -> float:
    if depth <= 0 or mdp.is_terminal(node.state):
        return 0.0
    actions = mdp.legal_actions(node.state)
    untried = next((i for i, n in enumerate(node.counts) if n == 0), None)
    if untried is not None:
        i = untried
    else:
        log_n = math.log(node.visits)
        scores = [node.totals[j] / node.counts[j] + c * math.sqrt(log_n / node.counts[j])
                  for j in range(len(actions))]
        i = max(range(len(scores)), key=lambda j: (scores[j], -j))
    nxt = mdp.sample_next(node.state, actions[i], rng)
    meter.expand()
    r = mdp.reward(nxt)
    child = node.children[i].get(nxt)
    if child is None:
        child = _Node(nxt, len(mdp.legal_actions(nxt)))
        node.children[i][nxt] = child
        g = r + mdp.gamma * _random_rollout(mdp, nxt, depth - 1, rng, meter)
    else:
        g = r + mdp.gamma * _simulate(mdp, child, depth - 1, c, rng, meter)
    node.visits += 1
    node.counts[i] += 1
    node.totals[i] += g
    return g


def mcts_plan(mdp, s, cfg: PlannerConfig, rng: np.random.Generator,
              meter: Optional[CostMeter] = None, horizon: Optional[int] = None) -> Assignment:
    """UCT from `s` until the time budget or the iteration cap; best root mean wins, lowest index on ties."""
    meter = _meter(meter)
    actions = mdp.legal_actions(s)
    if len(actions) == 1:
        return actions[0]
    depth = horizon if horizon is not None else mdp.horizon
    deadline = time.perf_counter() + min(cfg.mcts_budget_seconds, cfg.timeout_seconds)
    root = _Node(s, len(actions))
    iterations = 0
    while iterations < cfg.mcts_iterations_cap and time.perf_counter() < deadline:
        _simulate(mdp, root, depth, cfg.mcts_exploration, rng, meter)
        iterations += 1
    if iterations == 0:
        meter.flag("mcts: no iteration completed within budget, acting randomly")
        return actions[int(rng.integers(len(actions)))]
    means = [root.totals[i] / root.counts[i] if root.counts[i] else -math.inf for i in range(len(actions))]
    best = max(range(len(actions)), key=lambda i: (means[i], -i))
    logger.debug(f"mcts: {iterations} iterations, best action {best} mean {means[best]:.3f}")
    return actions[best]


# ---------- BFS with replanning ----------

@dataclass
class BfsResult:
    plan: List[Assignment]
    target_reward: float
    timed_out: bool = False


def bfs_search(mdp, s, cfg: PlannerConfig, meter: Optional[CostMeter] = None,
               horizon: Optional[int] = None) -> BfsResult:
    """Breadth-first graph search on the most-likely determinization.

    The target is the nearest state with the highest reward found within the
    horizon; the search stops early once a state reaches `mdp.max_reward`.
    """
    meter = _meter(meter)
    depth_limit = horizon if horizon is not None else mdp.horizon
    if mdp.is_terminal(s):
        return BfsResult([], mdp.reward(s))
    deadline = time.perf_counter() + cfg.timeout_seconds
    target = mdp.max_reward
    parents: Dict[Any, Tuple[Any, Optional[Assignment]]] = {s: (None, None)}
    frontier = deque([(s, 0)])
    # a plan must reach a state strictly better than the current one
    best_state, best_reward = None, float(mdp.reward(s))
    timed_out = False
    done = False
    while frontier and not done:
        if time.perf_counter() > deadline:
            timed_out = True
            break
        x, d = frontier.popleft()
        if d >= depth_limit:
            continue
        meter.expand()
        for a in mdp.legal_actions(x):
            y = most_likely_successor(mdp, x, a)
            if y in parents:
                continue
            parents[y] = (x, a)
            r = mdp.reward(y)
            if r > best_reward:
                best_state, best_reward = y, r
            if target is not None and r >= target:
                done = True
                break
            if not mdp.is_terminal(y):
                frontier.append((y, d + 1))
    plan: List[Assignment] = []
    node = best_state
    while node is not None and parents[node][0] is not None:
        prev, a = parents[node]
        plan.append(a)
        node = prev
    plan.reverse()
    return BfsResult(plan, best_reward, timed_out)


def bfs_replan_plan(mdp, s, cfg: PlannerConfig, meter: Optional[CostMeter] = None,
                    horizon: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> Assignment:
    """First action of the BFS plan from `s`; the caller replans every step."""
    meter = _meter(meter)
    actions = mdp.legal_actions(s)
    if mdp.is_terminal(s):
        return actions[0]
    result = bfs_search(mdp, s, cfg, meter, horizon)
    if result.timed_out:
        meter.flag(f"bfs_replan: timed out after {cfg.timeout_seconds}s, using best partial plan")
    if result.plan:
        return result.plan[0]
    # nothing better than staying put was found: act randomly among the least harmful actions
    rng = rng if rng is not None else np.random.default_rng(0)
    rewards = [mdp.reward(most_likely_successor(mdp, s, a)) for a in actions]
    top = max(rewards)
    candidates = [a for a, r in zip(actions, rewards) if r == top]
    meter.flag("bfs_replan: no plan found, acting randomly")
    return candidates[int(rng.integers(len(candidates)))]


# ---------- Value iteration ----------

@dataclass
class ValueTable:
    """Values and greedy policy over an enumerated state set."""
    states: List[Any]
    index: Dict[Any, int]
    values: np.ndarray
    policy: np.ndarray
    actions: Tuple[Assignment, ...]
    residual: float
    sweeps: int
    converged: bool

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, s) -> bool:
        return s in self.index

    def value(self, s) -> float:
        return float(self.values[self.index[s]])

    def greedy_action(self, s) -> Assignment:
        return self.actions[int(self.policy[self.index[s]])]


@dataclass
class _TransitionArrays:
    states: List[Any]
    index: Dict[Any, int]
    sa: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    n_actions: int


def enumerate_states(mdp, initial_states: Sequence[Any], cap: int,
                     meter: Optional[CostMeter] = None, transition_cap: Optional[int] = None) -> _TransitionArrays:
    """Reachable states from `initial_states` with their exact successor distributions."""
    meter = _meter(meter)
    states: List[Any] = []
    index: Dict[Any, int] = {}
    sa, succ, prob = [], [], []
    actions = None
    queue = deque()
    for s in initial_states:
        if s not in index:
            index[s] = len(states)
            states.append(s)
            queue.append(s)
    while queue:
        x = queue.popleft()
        i = index[x]
        if mdp.is_terminal(x):
            continue
        meter.expand()
        acts = mdp.legal_actions(x)
        if actions is None:
            actions = acts
        for j, a in enumerate(acts):
            for y, p in mdp.successor_distribution(x, a).items():
                if p <= 0.0:
                    continue
                k = index.get(y)
                if k is None:
                    if len(states) >= cap:
                        raise StateSpaceTooLargeError(
                            f"{getattr(mdp, 'name', 'mdp')}: more than {cap} reachable states; "
                            f"use an online planner (mcts or bfs_replan) instead")
                    k = index[y] = len(states)
                    states.append(y)
                    queue.append(y)
                sa.append(i * len(acts) + j)
                succ.append(k)
                prob.append(p)
        if transition_cap is not None and len(sa) > transition_cap:
            raise StateSpaceTooLargeError(
                f"more than {transition_cap} transitions; use an online planner (mcts or bfs_replan) instead")
    if actions is None:
        actions = mdp.legal_actions(states[0])
    rewards = np.array([mdp.reward(x) for x in states], dtype=float)
    terminal = np.array([mdp.is_terminal(x) for x in states], dtype=bool)
    return _TransitionArrays(states, index, np.asarray(sa, dtype=np.int64), np.asarray(succ, dtype=np.int64),
                             np.asarray(prob, dtype=float), rewards, terminal, len(actions))


def _q_block(arr: _TransitionArrays, values: np.ndarray, gamma: float, lo: int, hi: int,
             bounds: np.ndarray) -> np.ndarray:
    m = arr.n_actions
    k0, k1 = bounds[lo], bounds[hi]
    contrib = arr.prob[k0:k1] * (arr.rewards[arr.succ[k0:k1]] + gamma * values[arr.succ[k0:k1]])
    q = np.bincount(arr.sa[k0:k1] - lo * m, weights=contrib, minlength=(hi - lo) * m)
    return q.reshape(hi - lo, m)


def value_iteration(mdp, gamma: float, cfg: PlannerConfig, initial_states: Optional[Sequence[Any]] = None,
                    meter: Optional[CostMeter] = None, horizon: Optional[int] = None) -> ValueTable:
    """Asynchronous value iteration over the states reachable from `initial_states`.

    States are swept in blocks, each block reading the values already updated
    in the same sweep. Without `horizon` sweeps run until the Bellman residual
    drops below cfg.vi_tolerance; with it at most `horizon` sweeps run
    (finite-horizon evaluation). Terminal states have value zero.
    """
    meter = _meter(meter)
    if initial_states is None:
        initial_states = enumerate_assignments(mdp.state_vars)
    arr = enumerate_states(mdp, initial_states, cfg.vi_state_cap, meter, cfg.vi_transition_cap)
    n, m = len(arr.states), arr.n_actions
    bounds = np.searchsorted(arr.sa, np.arange(n + 1) * m)
    values = np.zeros(n)
    max_sweeps = horizon if horizon is not None else cfg.vi_max_sweeps
    if horizon is None and gamma >= 1.0:
        logger.warning("value_iteration: gamma >= 1 without a horizon may not converge")
    residual, sweeps = math.inf, 0
    while sweeps < max_sweeps:
        residual = 0.0
        for lo in range(0, n, VI_BLOCK_SIZE):
            hi = min(n, lo + VI_BLOCK_SIZE)
            v_new = _q_block(arr, values, gamma, lo, hi, bounds).max(axis=1)
            v_new[arr.terminal[lo:hi]] = 0.0
            residual = max(residual, float(np.max(np.abs(v_new - values[lo:hi]))))
            values[lo:hi] = v_new
        sweeps += 1
        meter.expand(n)
        if residual < cfg.vi_tolerance:
            break
    q_all = _q_block(arr, values, gamma, 0, n, bounds)
    backed = q_all.max(axis=1)
    backed[arr.terminal] = 0.0
    bellman_residual = float(np.max(np.abs(backed - values))) if n else 0.0
    policy = np.argmax(q_all, axis=1)
    converged = bellman_residual < cfg.vi_tolerance
    if horizon is None and not converged:
        meter.flag(f"value_iteration: residual {bellman_residual:.2e} after {sweeps} sweeps")
    actions = mdp.legal_actions(arr.states[0])
    logger.info(f"value_iteration: {n} states, {sweeps} sweeps, residual {bellman_residual:.2e}")
    return ValueTable(arr.states, arr.index, values, policy, tuple(actions), bellman_residual, sweeps, converged)


# ---------- Optimal search ----------

@dataclass
class SearchResult:
    plan: List[Assignment]
    value: float
    optimal: bool = True
    states: List[Any] = field(default_factory=list)


_OPEN, _DONE, _IDLE = 0, 1, 2


def _successor(mdp, s, a):
    return most_likely_successor(mdp, s, a)


def optimal_search(mdp, s0, cfg: Optional[PlannerConfig] = None, meter: Optional[CostMeter] = None,
                   horizon: Optional[int] = None) -> SearchResult:
    """Reward-maximizing plan within the horizon by uniform-cost search over (state, t).

    Step costs are gamma^t * (max_reward - R(s')); finishing early (terminal
    state) pays max_reward per remaining step, so the cheapest finished node
    maximizes the discounted return. Undiscounted searches skip self-loops and
    instead close a plan by idling (action 0) until the horizon.
    """
    cfg = cfg or PlannerConfig(kind=OPTIMAL_SEARCH)
    meter = _meter(meter)
    if not mdp.deterministic:
        raise ConfigError("optimal_search requires a deterministic MDP")
    if mdp.max_reward is None:
        raise ConfigError("optimal_search needs mdp.max_reward to shift rewards into costs")
    H = horizon if horizon is not None else mdp.horizon
    gamma, rmax = mdp.gamma, float(mdp.max_reward)
    if mdp.is_terminal(s0):
        return SearchResult([], 0.0, True, [s0])
    discount = [gamma ** t for t in range(H + 1)]
    tail = [0.0] * (H + 1)
    for t in range(H - 1, -1, -1):
        tail[t] = tail[t + 1] + discount[t]

    # node id -> (parent id, action, state, return so far)
    nodes: List[Tuple[Optional[int], Optional[Assignment], Any, float]] = [(None, None, s0, 0.0)]
    tie = itertools.count()
    heap = [(0.0, next(tie), 0, 0, _OPEN)]
    closed = set()
    deadline = time.perf_counter() + cfg.timeout_seconds
    prune_loops = gamma == 1.0

    def _unwind(node_id: int, t: int, kind: int) -> SearchResult:
        plan, states = [], []
        value = nodes[node_id][3]
        if kind == _IDLE:
            value += tail[t] * float(mdp.reward(nodes[node_id][2]))
        while node_id is not None:
            parent, action, state, _ = nodes[node_id]
            states.append(state)
            if action is not None:
                plan.append(action)
            node_id = parent
        plan.reverse()
        states.reverse()
        return SearchResult(plan, value, True, states)

    def _check(r: float) -> float:
        if r > rmax + 1e-9:
            raise ConfigError(f"reward {r} exceeds declared max_reward {rmax}")
        return r

    while heap:
        if time.perf_counter() > deadline:
            done = [entry for entry in heap if entry[4] != _OPEN]
            if done:
                best = min(done)
                result = _unwind(best[2], best[3], best[4])
            else:
                result = _unwind(max(range(len(nodes)), key=lambda k: nodes[k][3]), 0, _DONE)
            result.optimal = False
            meter.flag(f"optimal_search: timed out after {cfg.timeout_seconds}s, plan may be suboptimal")
            return result
        g, _, node_id, t, kind = heapq.heappop(heap)
        if kind != _OPEN:
            return _unwind(node_id, t, kind)
        x = nodes[node_id][2]
        if (x, t) in closed:
            continue
        closed.add((x, t))
        if t == H or mdp.is_terminal(x):
            heapq.heappush(heap, (g + tail[t] * rmax, next(tie), node_id, t, _DONE))
            continue
        meter.expand()
        ret = nodes[node_id][3]
        for idx, a in enumerate(mdp.legal_actions(x)):
            y = _successor(mdp, x, a)
            if prune_loops and y == x:
                if idx == 0:
                    idle = tail[t] * (rmax - _check(float(mdp.reward(x))))
                    heapq.heappush(heap, (g + idle, next(tie), node_id, t, _IDLE))
                continue
            if (y, t + 1) in closed:
                continue
            r = _check(float(mdp.reward(y)))
            nodes.append((node_id, a, y, ret + discount[t] * r))
            heapq.heappush(heap, (g + discount[t] * (rmax - r), next(tie), len(nodes) - 1, t + 1, _OPEN))
    raise ConfigError("optimal_search: search space exhausted without a finished plan")


# ---------- Policies ----------

class PlannerPolicy:
    """State -> action policy that plans in `model` at every call.

    `model` may be the task MDP or a Camp over it; with a Camp the concrete
    state is projected before planning and the abstract action lifted after.
    Online planners replan each step; optimal_search plans once and follows
    the plan while states match; value_iteration solves offline on first use.

    Once a Camp step violates its context the abstract state is the sink for
    the rest of the episode; every action is then equivalent, so the policy
    stops planning and draws a uniformly random concrete action.
    """

    def __init__(self, model, cfg: PlannerConfig, rng: Optional[np.random.Generator] = None,
                 meter: Optional[CostMeter] = None):
        self.model = model
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.meter = meter if meter is not None else CostMeter()
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self._sunk = False
        self._plan: List[Assignment] = []
        self._expected: List[Any] = []
        self._table: Optional[ValueTable] = None

    def __call__(self, s) -> Assignment:
        model = self.model
        x = model.project(s) if hasattr(model, "project") else s
        violates = getattr(model, "violates", None)
        if violates is not None and (self._sunk or all(violates(x, a) for a in model.legal_actions(x))):
            return self._sink_action(s)
        remaining = max(1, model.horizon - self.t)
        a = self._act(x, remaining)
        if violates is not None and violates(x, a):
            self._sunk = True
        self.t += 1
        return model.lift_action(a) if hasattr(model, "lift_action") else a

    def _sink_action(self, s) -> Assignment:
        if not self._sunk:
            logger.debug(f"{self.model.name}: context violated at step {self.t}, acting at random")
        self._sunk = True
        self.t += 1
        actions = self.model.base.legal_actions(s)
        return actions[int(self.rng.integers(len(actions)))]

    def _act(self, x, remaining: int) -> Assignment:
        kind = self.cfg.kind
        if kind == MCTS:
            return mcts_plan(self.model, x, self.cfg, self.rng, self.meter, remaining)
        if kind == BFS_REPLAN:
            return bfs_replan_plan(self.model, x, self.cfg, self.meter, remaining, self.rng)
        if kind == OPTIMAL_SEARCH:
            if not self._plan or not self._expected or self._expected[0] != x:
                result = optimal_search(self.model, x, self.cfg, self.meter, remaining)
                self._plan = list(result.plan)
                self._expected = list(result.states)
            if not self._plan:
                return self.model.legal_actions(x)[0]
            self._expected.pop(0)
            return self._plan.pop(0)
        if self._table is None or x not in self._table:
            if self._table is not None:
                self.meter.flag("value_iteration: state outside the solved set, solving again")
            self._table = value_iteration(self.model, self.model.gamma, self.cfg, [x], self.meter)
        return self._table.greedy_action(x)


def make_policy(model, cfg: PlannerConfig, rng: Optional[np.random.Generator] = None,
                meter: Optional[CostMeter] = None) -> PlannerPolicy:
    return PlannerPolicy(model, cfg, rng, meter)
