"""
Dinner-making: three meal plans of different length gated on location.

  ramen     2 steps, living room only
  sandwich  16 steps, go to the kitchen then 15 kitchen steps
  steak     22 steps, store steps, then kitchen steps

Making any meal ends the task. Every step costs a fixed penalty; only the
three meal rewards vary between tasks and they are the task features.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .core import ACTION, STATE, Assignment, ConfigError, FactoredMdp, Task, VariableSpec

logger = logging.getLogger(__name__)

LIVING_ROOM = "living_room"
KITCHEN = "kitchen"
STORE = "store"
LOCATIONS = (LIVING_ROOM, KITCHEN, STORE)

MEALS = ("ramen", "sandwich", "steak")
SANDWICH_STEPS = 14
STEAK_STORE_STEPS = 8
STEAK_KITCHEN_STEPS = 11

CONTEXT_VARIABLES = ("location",)
N_TRAIN = 20
N_TEST = 25
CSI_BUDGET = (40, 40)


@dataclass(frozen=True)
class DinnerConfig:
    rewards: Tuple[float, float, float] = (10.0, 50.0, 100.0)
    step_penalty: float = 1.0
    horizon: int = 25
    gamma: float = 1.0
    reward_low: int = 10
    reward_high: int = 100

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.rewards) != len(MEALS):
            raise ConfigError(f"expected {len(MEALS)} meal rewards, got {len(self.rewards)}")
        if self.step_penalty < 0:
            raise ConfigError("step_penalty must be non-negative")
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.reward_low > self.reward_high:
            raise ConfigError("reward_low must not exceed reward_high")


@dataclass(frozen=True)
class Operator:
    """Single-effect operator: sets `effect` to `value` when the location and fluent preconditions hold."""
    name: str
    location: Optional[str]
    requires: Tuple[str, ...]
    effect: str
    value: Any = 1
    forbid_location: Optional[str] = None

    def applicable(self, s: Mapping[str, Any]) -> bool:
        if self.location is not None and s["location"] != self.location:
            return False
        if self.forbid_location is not None and s["location"] == self.forbid_location:
            return False
        return all(s[f] for f in self.requires)


def _operators() -> List[Operator]:
    ops = [
        Operator("ramen_1", LIVING_ROOM, (), "ramen_1"),
        Operator("make_ramen", LIVING_ROOM, ("ramen_1",), "ramen_made"),
        Operator("go_living_room", None, (), "location", LIVING_ROOM, forbid_location=LIVING_ROOM),
        Operator("go_kitchen", None, (), "location", KITCHEN, forbid_location=KITCHEN),
        Operator("go_store", None, (), "location", STORE, forbid_location=STORE),
    ]
    for k in range(1, SANDWICH_STEPS + 1):
        ops.append(Operator(f"sandwich_{k}", KITCHEN, (f"sandwich_{k - 1}",) if k > 1 else (), f"sandwich_{k}"))
    ops.append(Operator("make_sandwich", KITCHEN, (f"sandwich_{SANDWICH_STEPS}",), "sandwich_made"))
    for k in range(1, STEAK_STORE_STEPS + 1):
        ops.append(Operator(f"steak_store_{k}", STORE, (f"steak_store_{k - 1}",) if k > 1 else (),
                            f"steak_store_{k}"))
    for k in range(1, STEAK_KITCHEN_STEPS + 1):
        prev = f"steak_kitchen_{k - 1}" if k > 1 else f"steak_store_{STEAK_STORE_STEPS}"
        ops.append(Operator(f"steak_kitchen_{k}", KITCHEN, (prev,), f"steak_kitchen_{k}"))
    ops.append(Operator("cook_steak", KITCHEN, (f"steak_kitchen_{STEAK_KITCHEN_STEPS}",), "steak_made"))
    return ops


OPERATORS: Tuple[Operator, ...] = tuple(_operators())


def fluent_names() -> List[str]:
    names = ["ramen_1", "ramen_made"]
    names += [f"sandwich_{k}" for k in range(1, SANDWICH_STEPS + 1)] + ["sandwich_made"]
    names += [f"steak_store_{k}" for k in range(1, STEAK_STORE_STEPS + 1)]
    names += [f"steak_kitchen_{k}" for k in range(1, STEAK_KITCHEN_STEPS + 1)] + ["steak_made"]
    return names


def dinner_variables() -> Tuple[Tuple[VariableSpec, ...], Tuple[VariableSpec, ...]]:
    states = [VariableSpec("location", STATE, LOCATIONS)]
    states += [VariableSpec(name, STATE, (0, 1)) for name in fluent_names()]
    actions = [VariableSpec(f"do_{op.name}", ACTION, (0, 1)) for op in OPERATORS]
    return tuple(states), tuple(actions)


def dinner_actions() -> Tuple[Assignment, ...]:
    """All-zero no-op first, then one action per operator."""
    idle = {f"do_{op.name}": 0 for op in OPERATORS}
    out = [Assignment(idle)]
    for op in OPERATORS:
        out.append(Assignment({**idle, f"do_{op.name}": 1}))
    return tuple(out)


def _made(s: Mapping[str, Any]) -> bool:
    return bool(s["ramen_made"] or s["sandwich_made"] or s["steak_made"])


@functools.lru_cache(maxsize=1024)
def _active_operators(a: Assignment) -> Tuple[Operator, ...]:
    return tuple(op for op in OPERATORS if a[f"do_{op.name}"])


def dinner_transition(s: Assignment, a: Assignment, rng: Optional[np.random.Generator] = None) -> Assignment:
    """Deterministic; `rng` is accepted for interface compatibility and never used."""
    changes: Dict[str, Any] = {}
    for op in _active_operators(a):
        if op.applicable(s):
            changes[op.effect] = op.value
    return s.updated(changes) if changes else s


@functools.lru_cache(maxsize=256)
def build_dinner_mdp(cfg: DinnerConfig) -> FactoredMdp:
    ramen, sandwich, steak = cfg.rewards

    def reward(s: Assignment) -> float:
        r = -cfg.step_penalty
        if s["ramen_made"]:
            r += ramen
        if s["sandwich_made"]:
            r += sandwich
        if s["steak_made"]:
            r += steak
        return r

    def transition_dist(s: Assignment, a: Assignment) -> Dict[Assignment, float]:
        return {dinner_transition(s, a): 1.0}

    state_vars, action_vars = dinner_variables()
    return FactoredMdp(
        state_vars=state_vars,
        action_vars=action_vars,
        transition=dinner_transition,
        reward=reward,
        reward_vars=frozenset({"ramen_made", "sandwich_made", "steak_made"}),
        horizon=cfg.horizon,
        gamma=cfg.gamma,
        transition_dist=transition_dist,
        action_list=dinner_actions(),
        terminal=_made,
        max_reward=max(cfg.rewards) - cfg.step_penalty,
        deterministic=True,
        name="dinner[" + ",".join(f"{r:g}" for r in cfg.rewards) + "]",
    )


def dinner_build(cfg: Optional[DinnerConfig] = None) -> FactoredMdp:
    return build_dinner_mdp(cfg or DinnerConfig())


def reference_mdp(cfg: DinnerConfig) -> FactoredMdp:
    return dinner_build(cfg)


def initial_state() -> Assignment:
    values: Dict[str, Any] = {"location": LIVING_ROOM}
    values.update({name: 0 for name in fluent_names()})
    return Assignment(values)


def make_task(cfg: DinnerConfig, task_id: str, rewards) -> Task:
    task_cfg = DinnerConfig(tuple(rewards), cfg.step_penalty, cfg.horizon, cfg.gamma, cfg.reward_low, cfg.reward_high)
    mdp = build_dinner_mdp(task_cfg)
    return Task(task_id, initial_state(), np.asarray(task_cfg.rewards, dtype=float), mdp,
                {"rewards": list(task_cfg.rewards), "_config": task_cfg})


def task_from_params(cfg: DinnerConfig, task_id: str, params: Mapping[str, Any]) -> Task:
    return make_task(cfg, task_id, params["rewards"])


def dinner_sample_task(cfg: DinnerConfig, rng: np.random.Generator, task_id: str = "dinner-0") -> Task:
    """Meal rewards drawn as integers in [reward_low, reward_high]; nothing else varies."""
    rewards = rng.integers(cfg.reward_low, cfg.reward_high + 1, size=len(MEALS))
    return make_task(cfg, task_id, [float(r) for r in rewards])


def state_features(task: Task, s: Assignment) -> np.ndarray:
    location = [1.0 if s["location"] == loc else 0.0 for loc in LOCATIONS]
    return np.asarray(location + [float(s[name]) for name in fluent_names()])


def plan_lengths() -> Dict[str, int]:
    """Steps of each meal plan from the initial state."""
    return {"ramen": 2,
            "sandwich": 1 + SANDWICH_STEPS + 1,
            "steak": 1 + STEAK_STORE_STEPS + 1 + STEAK_KITCHEN_STEPS + 1}
