"""
Context-specific relevance and context-specific abstract MDPs (CAMPs).

A CAMP keeps the relevant variables plus the context variables, sends every
context violation to an absorbing sink state and evaluates rewards on lifted
states.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, FrozenSet, Iterable, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from .contexts import Context, in_context
from .core import STATE, Assignment, SinkLiftError, VariableSpec
from .csi import CsiSet

logger = logging.getLogger(__name__)

DEFAULT_SINK_REWARD = -1e9


class _Sink:
    """The absorbing sink state; it has no concrete counterpart."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "SINK"

    def __reduce__(self):
        return (_Sink, ())


SINK = _Sink()


def dependency_graph(csis: CsiSet, reward_vars: Iterable[str], all_vars: Sequence[VariableSpec]) -> nx.DiGraph:
    """Directed graph over the variables outside the context (plus reward variables).

    Edge source -> target (target a state variable) is present unless the pair
    is a learned independence. Edges into context variables do not exist: the
    context pins them.
    """
    reward_vars = set(reward_vars)
    nodes = [v for v in all_vars if v.name not in csis.context.variables or v.name in reward_vars]
    graph = nx.DiGraph()
    graph.add_nodes_from(v.name for v in nodes)
    targets = [v.name for v in nodes if v.kind == STATE]
    for src in nodes:
        for tgt in targets:
            if not csis.is_independent(src.name, tgt):
                graph.add_edge(src.name, tgt)
    return graph


def relevant_variables(csis: CsiSet, reward_vars: Iterable[str], all_vars: Sequence[VariableSpec]) -> Set[str]:
    """Reward variables, context variables and every variable with a path to a reward variable."""
    reward_vars = set(reward_vars)
    graph = dependency_graph(csis, reward_vars, all_vars)
    relevant = set(reward_vars)
    for rv in reward_vars:
        if rv in graph:
            relevant |= nx.ancestors(graph, rv)
    declared = {v.name for v in all_vars}
    relevant |= csis.context.variables & declared
    return relevant


class Camp:
    """Context-specific abstract MDP over a base FactoredMdp.

    Exposes the same planning interface as FactoredMdp, with abstract states
    being Assignments over the kept state variables or SINK.
    """

    def __init__(self, base, context: Context, kept_state_vars: Sequence[VariableSpec],
                 kept_action_vars: Sequence[VariableSpec], sink_reward: float = DEFAULT_SINK_REWARD):
        self.base = base
        self.context = context
        self.state_vars = tuple(kept_state_vars)
        self.action_vars = tuple(kept_action_vars)
        self.sink_reward = float(sink_reward)
        kept = {v.name for v in self.state_vars + self.action_vars}
        missing = set(base.reward_vars) - kept
        if missing:
            raise ValueError(f"reward variables {sorted(missing)} must be kept")
        self.defaults: Dict[str, Any] = {v.name: v.domain[0] for v in base.variables if v.name not in kept}
        self._state_names = tuple(v.name for v in self.state_vars)
        self._action_names = tuple(v.name for v in self.action_vars)
        self._state_defaults = {n: val for n, val in self.defaults.items() if n not in base.action_names}
        self._action_defaults = {n: val for n, val in self.defaults.items() if n in base.action_names}
        seen: Dict[Assignment, None] = {}
        for a in base.legal_actions(None):
            seen.setdefault(a.restrict(self._action_names), None)
        self._actions = tuple(seen)

    # planning interface, mirrored from FactoredMdp
    @property
    def horizon(self) -> int:
        return self.base.horizon

    @property
    def gamma(self) -> float:
        return self.base.gamma

    @property
    def reward_vars(self) -> FrozenSet[str]:
        return self.base.reward_vars

    @property
    def deterministic(self) -> bool:
        return self.base.deterministic

    @property
    def max_reward(self) -> Optional[float]:
        return self.base.max_reward

    @property
    def supports_distribution(self) -> bool:
        return getattr(self.base, "supports_distribution", False)

    @property
    def name(self) -> str:
        return f"camp[{self.context.text}]"

    @property
    def variables(self) -> Tuple[VariableSpec, ...]:
        return self.state_vars + self.action_vars

    @property
    def state_names(self) -> Tuple[str, ...]:
        return self._state_names

    @property
    def dropped(self) -> Tuple[str, ...]:
        return tuple(self.defaults)

    def project(self, s) -> Any:
        if s is SINK:
            return SINK
        return s.restrict(self._state_names)

    def project_action(self, a: Assignment) -> Assignment:
        return a.restrict(self._action_names)

    def lift(self, x) -> Assignment:
        if x is SINK:
            raise SinkLiftError("the sink state has no concrete counterpart")
        return x.updated(self._state_defaults)

    def lift_action(self, a: Assignment) -> Assignment:
        return a.updated(self._action_defaults)

    def legal_actions(self, x) -> Tuple[Assignment, ...]:
        return self._actions

    def violates(self, x, a: Assignment) -> bool:
        return not in_context(self.context, self.lift(x), self.lift_action(a))

    def is_terminal(self, x) -> bool:
        # the sink is absorbing; planners stop there since nothing can follow
        if x is SINK:
            return True
        return self.base.is_terminal(self.lift(x))

    def reward(self, x) -> float:
        if x is SINK:
            return self.sink_reward
        return float(self.base.reward(self.lift(x)))

    def sample_next(self, x, a: Assignment, rng: Optional[np.random.Generator]):
        if x is SINK or self.violates(x, a):
            return SINK
        return self.project(self.base.sample_next(self.lift(x), self.lift_action(a), rng))

    def most_likely_next(self, x, a: Assignment):
        if x is SINK or self.violates(x, a):
            return SINK
        rule = getattr(self.base, "most_likely_next", None)
        nxt = rule(self.lift(x), self.lift_action(a)) if rule is not None else None
        return None if nxt is None else self.project(nxt)

    def successor_distribution(self, x, a: Assignment) -> Dict[Any, float]:
        if x is SINK or self.violates(x, a):
            return {SINK: 1.0}
        out: Dict[Any, float] = {}
        for outcome, p in self.base.successor_distribution(self.lift(x), self.lift_action(a)).items():
            key = self.project(outcome)
            out[key] = out.get(key, 0.0) + p
        return out


def build_camp(mdp, ctx: Context, csis: CsiSet, sink_reward: float = DEFAULT_SINK_REWARD,
               drop_irrelevant: bool = True) -> Camp:
    """Abstract MDP for `ctx`.

    With drop_irrelevant=False every variable is kept and only the sink rule is
    added (the ablation variant).
    """
    if csis.context != ctx:
        raise ValueError(f"CSI set for {csis.context.text} does not match context {ctx.text}")
    if drop_irrelevant:
        keep = relevant_variables(csis, mdp.reward_vars, mdp.variables) | ctx.variables
    else:
        keep = {v.name for v in mdp.variables}
    kept_states = [v for v in mdp.state_vars if v.name in keep]
    kept_actions = [v for v in mdp.action_vars if v.name in keep]
    camp = Camp(mdp, ctx, kept_states, kept_actions, sink_reward=sink_reward)
    logger.debug(f"CAMP {ctx.text}: kept {len(kept_states)}/{len(mdp.state_vars)} state and "
                 f"{len(kept_actions)}/{len(mdp.action_vars)} action variables, "
                 f"{len(camp.legal_actions(None))} abstract actions")
    return camp


def project(s, camp: Camp):
    return camp.project(s)


def lift(x, camp: Camp) -> Assignment:
    return camp.lift(x)
