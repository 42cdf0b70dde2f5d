"""
Core factored-MDP types
Variables, assignments, tasks, trajectories, the replanning rollout and the
reward-versus-compute objective.
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

STATE = "state"
ACTION = "action"

WALLCLOCK = "wallclock"
EXPANSIONS = "expansions"
COST_CHANNELS = (WALLCLOCK, EXPANSIONS)

DEFAULT_HORIZON = 25
DEFAULT_SECONDS_PER_EXPANSION = 1e-5
DIST_TOLERANCE = 1e-9


# ---------- Errors ----------

class CampError(Exception):
    """Base class for every error raised by this package."""


class InvalidAssignmentError(CampError, ValueError):
    pass


class RolloutError(CampError):
    """A policy failed during a rollout; carries the step index."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"policy failed at step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class ContextError(CampError, ValueError):
    pass


class SinkLiftError(CampError):
    pass


class StateSpaceTooLargeError(CampError):
    pass


class TrainingDivergedError(CampError):
    pass


class DimensionMismatchError(CampError, ValueError):
    pass


class ConfigError(CampError, ValueError):
    pass


# ---------- Variables and assignments ----------

@dataclass(frozen=True)
class VariableSpec:
    """A named discrete variable with an ordered, finite domain."""
    name: str
    kind: str
    domain: Tuple[Any, ...]

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(self.domain))
        if self.kind not in (STATE, ACTION):
            raise ConfigError(f"variable {self.name!r}: kind must be '{STATE}' or '{ACTION}', got {self.kind!r}")
        if not self.domain:
            raise ConfigError(f"variable {self.name!r}: domain is empty")
        if len(set(self.domain)) != len(self.domain):
            raise ConfigError(f"variable {self.name!r}: domain values are not unique")

    @property
    def size(self) -> int:
        return len(self.domain)

    def index(self, value: Any) -> int:
        return self.domain.index(value)


class Assignment(Mapping):
    """Immutable, hashable map from variable name to value.

    Used for factored states, factored actions and joint (state, action)
    assignments alike.
    """

    __slots__ = ("_values", "_key", "_hash")

    def __init__(self, values: Mapping[str, Any] = ()):
        self._values = dict(values)
        self._key = tuple(sorted(self._values.items(), key=lambda item: item[0]))
        self._hash = hash(self._key)

    def __getitem__(self, name: str) -> Any:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Assignment):
            return self._hash == other._hash and self._key == other._key
        if isinstance(other, Mapping):
            return self._values == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v!r}" for k, v in self._key)
        return f"Assignment({body})"

    def updated(self, changes: Mapping[str, Any]) -> "Assignment":
        merged = dict(self._values)
        merged.update(changes)
        if len(merged) == len(self._values):
            # same keys: reuse the sorted order
            out = Assignment.__new__(Assignment)
            out._values = merged
            out._key = tuple((k, merged[k]) for k, _ in self._key)
            out._hash = hash(out._key)
            return out
        return Assignment(merged)

    def restrict(self, names: Iterable[str]) -> "Assignment":
        return Assignment({n: self._values[n] for n in names})

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)


FactoredState = Assignment
FactoredAction = Assignment


def joint(state: Mapping[str, Any], action: Mapping[str, Any]) -> Assignment:
    """Merge a state and an action into one joint assignment."""
    merged = dict(state)
    merged.update(action)
    return Assignment(merged)


def check_assignment(specs: Sequence[VariableSpec], values: Mapping[str, Any]) -> None:
    """Raises InvalidAssignmentError unless `values` gives every spec exactly one in-domain value."""
    names = {v.name for v in specs}
    extra = set(values) - names
    if extra:
        raise InvalidAssignmentError(f"undeclared variables: {sorted(extra)}")
    for spec in specs:
        if spec.name not in values:
            raise InvalidAssignmentError(f"missing value for {spec.name!r}")
        if values[spec.name] not in spec.domain:
            raise InvalidAssignmentError(f"{spec.name}={values[spec.name]!r} is outside its domain")


def marginal(dist: Mapping[Assignment, float], name: str) -> Dict[Any, float]:
    """Marginal distribution of one variable under a joint successor distribution."""
    out: Dict[Any, float] = {}
    for outcome, p in dist.items():
        value = outcome[name]
        out[value] = out.get(value, 0.0) + p
    return out


# ---------- Compute metering ----------

class CostMeter:
    """Counts node expansions and collects flagged events for one policy."""

    def __init__(self):
        self.expansions = 0
        self.flags: List[str] = []

    def expand(self, n: int = 1) -> None:
        self.expansions += n

    def flag(self, message: str) -> None:
        logger.warning(message)
        self.flags.append(message)


# ---------- MDP ----------

@dataclass(frozen=True, eq=False)
class FactoredMdp:
    """A factored MDP consumed as a black box by every planner.

    Args:
        transition: sampler (s, a, rng) -> s'
        reward: state reward R(s'), received on entering s'
        transition_dist: optional exact joint successor distribution (s, a) -> {s': p}
        transition_marginals: optional per-variable successor marginals (s, a) -> {var: {value: p}}
        most_likely: optional rule (s, a) -> s' picking one most likely successor, ties included
        action_list: ordered legal joint actions; index 0 is the no-op. Defaults to the full product.
        terminal: optional terminal predicate on states
        valid_state: optional consistency predicate used when sampling assignments
        max_reward: upper bound on R, used by the uniform-cost shift
    """
    state_vars: Tuple[VariableSpec, ...]
    action_vars: Tuple[VariableSpec, ...]
    transition: Callable[[Assignment, Assignment, Optional[np.random.Generator]], Assignment]
    reward: Callable[[Assignment], float]
    reward_vars: FrozenSet[str]
    horizon: int = DEFAULT_HORIZON
    gamma: float = 1.0
    transition_dist: Optional[Callable[[Assignment, Assignment], Dict[Assignment, float]]] = None
    transition_marginals: Optional[Callable[[Assignment, Assignment], Dict[str, Dict[Any, float]]]] = None
    most_likely: Optional[Callable[[Assignment, Assignment], Assignment]] = None
    action_list: Optional[Tuple[Assignment, ...]] = None
    terminal: Optional[Callable[[Assignment], bool]] = None
    valid_state: Optional[Callable[[Mapping[str, Any]], bool]] = None
    max_reward: Optional[float] = None
    deterministic: bool = False
    name: str = "mdp"

    def __post_init__(self):
        object.__setattr__(self, "state_vars", tuple(self.state_vars))
        object.__setattr__(self, "action_vars", tuple(self.action_vars))
        object.__setattr__(self, "reward_vars", frozenset(self.reward_vars))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError(f"{self.name}: variable names are not unique")
        if any(v.kind != STATE for v in self.state_vars) or any(v.kind != ACTION for v in self.action_vars):
            raise ConfigError(f"{self.name}: variable kinds do not match their lists")
        missing = self.reward_vars - set(self.state_names)
        if missing:
            raise ConfigError(f"{self.name}: reward variables {sorted(missing)} are not state variables")
        if self.horizon < 1:
            raise ConfigError(f"{self.name}: horizon must be positive")
        if self.action_list is None:
            object.__setattr__(self, "action_list", tuple(enumerate_assignments(self.action_vars)))
        else:
            object.__setattr__(self, "action_list", tuple(self.action_list))

    @property
    def variables(self) -> Tuple[VariableSpec, ...]:
        return self.state_vars + self.action_vars

    @property
    def state_names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.state_vars)

    @property
    def action_names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.action_vars)

    def var(self, name: str) -> VariableSpec:
        for spec in self.variables:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def legal_actions(self, s: Assignment) -> Tuple[Assignment, ...]:
        return self.action_list

    def is_terminal(self, s: Assignment) -> bool:
        return bool(self.terminal(s)) if self.terminal is not None else False

    def validate_state(self, s: Mapping[str, Any]) -> None:
        check_assignment(self.state_vars, s)

    def sample_next(self, s: Assignment, a: Assignment, rng: Optional[np.random.Generator]) -> Assignment:
        return self.transition(s, a, rng)

    def successor_distribution(self, s: Assignment, a: Assignment) -> Dict[Assignment, float]:
        if self.transition_dist is None:
            raise CampError(f"{self.name}: no exact transition distribution available")
        dist = self.transition_dist(s, a)
        total = sum(dist.values())
        if abs(total - 1.0) > DIST_TOLERANCE:
            raise CampError(f"{self.name}: successor distribution sums to {total}, not 1")
        return dist

    def successor_marginals(self, s: Assignment, a: Assignment) -> Dict[str, Dict[Any, float]]:
        if self.transition_marginals is not None:
            return self.transition_marginals(s, a)
        dist = self.successor_distribution(s, a)
        return {name: marginal(dist, name) for name in self.state_names}

    def most_likely_next(self, s: Assignment, a: Assignment) -> Optional[Assignment]:
        return self.most_likely(s, a) if self.most_likely is not None else None

    @property
    def has_exact_dynamics(self) -> bool:
        return self.transition_dist is not None or self.transition_marginals is not None

    @property
    def supports_distribution(self) -> bool:
        return self.transition_dist is not None


def enumerate_assignments(specs: Sequence[VariableSpec]) -> List[Assignment]:
    """All joint assignments over `specs`, first variable varying slowest."""
    out = [Assignment()]
    for spec in specs:
        out = [a.updated({spec.name: v}) for a in out for v in spec.domain]
    return out


def most_likely_successor(mdp, s: Assignment, a: Assignment, n_samples: int = 32) -> Assignment:
    """Most likely outcome of (s, a).

    A model's own `most_likely_next` rule wins; otherwise ties go to the
    first outcome in distribution order.
    """
    rule = getattr(mdp, "most_likely_next", None)
    if rule is not None:
        outcome = rule(s, a)
        if outcome is not None:
            return outcome
    if getattr(mdp, "supports_distribution", False):
        dist = mdp.successor_distribution(s, a)
        best, best_p = None, -1.0
        for outcome, p in dist.items():
            if p > best_p + DIST_TOLERANCE:
                best, best_p = outcome, p
        return best
    rng = np.random.default_rng(0)
    if getattr(mdp, "deterministic", False):
        return mdp.sample_next(s, a, rng)
    counts = Counter(mdp.sample_next(s, a, rng) for _ in range(n_samples))
    return counts.most_common(1)[0][0]


# ---------- Tasks and trajectories ----------

@dataclass(frozen=True, eq=False)
class Task:
    """A task: initial state plus the MDP carrying its reward function, and features theta."""
    task_id: str
    initial_state: Assignment
    features: np.ndarray
    mdp: FactoredMdp
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float).ravel()
        if not np.all(np.isfinite(features)):
            raise InvalidAssignmentError(f"task {self.task_id}: features are not finite")
        object.__setattr__(self, "features", features)
        self.mdp.validate_state(self.initial_state)

    @property
    def reward(self) -> Callable[[Assignment], float]:
        return self.mdp.reward


@dataclass(frozen=True)
class Step:
    state: Any
    action: Optional[Assignment]
    reward: float
    cost_seconds: float = 0.0
    expansions: int = 0


@dataclass
class Trajectory:
    """Ordered (state, action, reward, compute cost) steps.

    Step t's reward is the reward received on entering state t (zero for the
    initial state); the final step has no action.
    """
    steps: List[Step]
    gamma: float = 1.0
    flags: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> List[Any]:
        return [st.state for st in self.steps]

    @property
    def actions(self) -> List[Assignment]:
        return [st.action for st in self.steps if st.action is not None]

    @property
    def rewards(self) -> List[float]:
        return [st.reward for st in self.steps]

    def discounted_return(self) -> float:
        return float(sum((self.gamma ** t) * st.reward for t, st in enumerate(self.steps)))

    @property
    def compute_seconds(self) -> float:
        return float(sum(st.cost_seconds for st in self.steps))

    @property
    def expansions(self) -> int:
        return int(sum(st.expansions for st in self.steps))

    def charge(self, seconds: float, expansions: int = 0) -> None:
        """Add up-front work (context selection, CAMP construction) to the first step."""
        if not self.steps:
            return
        first = self.steps[0]
        self.steps[0] = Step(first.state, first.action, first.reward,
                             first.cost_seconds + seconds, first.expansions + expansions)

    def total_cost(self, channel: str = WALLCLOCK,
                   seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION) -> float:
        if channel == WALLCLOCK:
            return self.compute_seconds
        if channel == EXPANSIONS:
            return self.expansions * seconds_per_expansion
        raise ConfigError(f"unknown cost channel {channel!r}")


def derive_rng(seed: int, *keys: Any) -> np.random.Generator:
    """Private RNG stream keyed by a global seed plus stable string keys."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def split_rng(rng: np.random.Generator) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (policy, environment) child streams of `rng`.

    The environment stream does not depend on how many numbers the policy
    draws, so runs sharing a seed see the same environment noise.
    """
    policy_rng, env_rng = rng.spawn(2)
    return policy_rng, env_rng


def rollout(mdp, policy: Callable[[Assignment], Assignment], task: Task,
            rng: np.random.Generator) -> Trajectory:
    """Run `policy` from the task's initial state, calling it at every step.

    Per-step compute cost is the wall-clock time of the policy call; when the
    policy carries a CostMeter (`policy.meter`) its expansion delta is recorded too.
    """
    if hasattr(policy, "reset"):
        policy.reset()
    meter: Optional[CostMeter] = getattr(policy, "meter", None)
    gamma = getattr(mdp, "gamma", 1.0)
    s = task.initial_state
    steps: List[Step] = []
    flags: List[str] = []
    reward_in = 0.0
    for t in range(mdp.horizon):
        if mdp.is_terminal(s):
            break
        before_exp = meter.expansions if meter else 0
        before_flags = len(meter.flags) if meter else 0
        start = time.perf_counter()
        try:
            a = policy(s)
        except Exception as e:
            logger.error(f"Rollout of task {task.task_id} aborted at step {t}", exc_info=True)
            raise RolloutError(t, e) from e
        elapsed = time.perf_counter() - start
        expanded = (meter.expansions - before_exp) if meter else 0
        if meter and len(meter.flags) > before_flags:
            flags.extend(f"t={t}: {m}" for m in meter.flags[before_flags:])
        steps.append(Step(s, a, reward_in, elapsed, expanded))
        s = mdp.sample_next(s, a, rng)
        reward_in = float(mdp.reward(s))
    steps.append(Step(s, None, reward_in, 0.0, 0))
    return Trajectory(steps, gamma=gamma, flags=flags)


def evaluate_objective(trajectories: Sequence[Trajectory], lam: float, channel: str = WALLCLOCK,
                       seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION) -> float:
    """Sample mean of discounted return minus lam times total compute cost."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    if not trajectories:
        raise CampError("cannot evaluate the objective of an empty trajectory set")
    values = [tr.discounted_return() - lam * tr.total_cost(channel, seconds_per_expansion)
              for tr in trajectories]
    return float(np.mean(values))


def objective_value(ret: float, cost: float, lam: float) -> float:
    value = ret - lam * cost
    return value if math.isfinite(value) else float("-inf")
