"""
Benchmark harness: the method roster, per-task result rows, repeated runs,
lambda / training-size sweeps and mean +- SD summaries.
"""

from __future__ import annotations

import logging
import math
import os
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import domain_dinner, domain_gridworld
from .abstraction import DEFAULT_SINK_REWARD
from .contexts import Context, generate_contexts
from .core import (DEFAULT_SECONDS_PER_EXPANSION, EXPANSIONS, Assignment, ConfigError, CostMeter, FactoredMdp,
                   Task, Trajectory, derive_rng, objective_value, rollout, split_rng)
from .csi import CsiCache, CsiSet, discover_all
from .domain_dinner import DinnerConfig
from .domain_gridworld import GridworldConfig
from .learner import Classifier, train_classifier
from .planners import BFS_REPLAN, OPTIMAL_SEARCH, VALUE_ITERATION, PlannerConfig, make_policy
from .selector import ScoreCache, Selector, camp_trajectory, default_lambda, train_selector

logger = logging.getLogger(__name__)

CAMP = "camp"
CAMP_ABLATION = "camp_ablation"
PURE_PLANNING = "pure_planning"
PLAN_TRANSFER = "plan_transfer"
POLICY_LEARNING = "policy_learning"
TASK_CONDITIONED_POLICY = "task_conditioned_policy"
RANDOM_POLICY = "random_policy"
METHODS = (CAMP, CAMP_ABLATION, PURE_PLANNING, PLAN_TRANSFER, POLICY_LEARNING, TASK_CONDITIONED_POLICY,
           RANDOM_POLICY)

STATUS_OK = "ok"
STATUS_FLAGGED = "flagged"
STATUS_FAILED = "failed"

FAST_RUNS = 3


@dataclass(frozen=True)
class MethodSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ConfigError(f"unknown method {self.kind!r}; expected one of {METHODS}")

    @property
    def uses_selector(self) -> bool:
        return self.kind in (CAMP, CAMP_ABLATION)

    @property
    def drop_irrelevant(self) -> bool:
        # the ablation keeps every variable and adds only the sink rule
        return self.kind != CAMP_ABLATION

    @property
    def uses_training_plans(self) -> bool:
        return self.kind in (PLAN_TRANSFER, POLICY_LEARNING, TASK_CONDITIONED_POLICY)


@dataclass
class ResultRow:
    method: str
    domain: str
    planner: str
    task_id: str
    seed: int
    ret: float
    compute_seconds: float
    expansions: int
    objective: float
    lam: float
    cost_channel: str = EXPANSIONS
    context: str = ""
    status: str = STATUS_OK
    message: str = ""


RESULT_COLUMNS = {"ret": "return", "lam": "lambda"}


def rows_to_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=list(ResultRow.__dataclass_fields__))
    return frame.rename(columns=RESULT_COLUMNS)


def write_results(rows_or_frame, path: str) -> str:
    frame = rows_or_frame if isinstance(rows_or_frame, pd.DataFrame) else rows_to_frame(rows_or_frame)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"{len(frame)} result rows written to {path}")
    return path


# ---------- Domains ----------

@dataclass(frozen=True)
class DomainBinding:
    name: str
    config: Any
    sample_task: Callable[[Any, np.random.Generator, str], Task]
    reference_mdp: Callable[[Any], FactoredMdp]
    state_features: Callable[[Task, Assignment], np.ndarray]
    task_from_params: Callable[[Any, str, Mapping[str, Any]], Task]
    context_variables: Tuple[str, ...]
    n_train: int
    n_test: int
    default_planner: str
    csi_budget: Tuple[int, int]


def domain_binding(name: str, config: Any = None) -> DomainBinding:
    if name == "gridworld":
        cfg = config if config is not None else GridworldConfig()
        return DomainBinding("gridworld", cfg, domain_gridworld.gridworld_sample_task, domain_gridworld.reference_mdp,
                             domain_gridworld.state_features, domain_gridworld.task_from_params,
                             domain_gridworld.CONTEXT_VARIABLES, domain_gridworld.N_TRAIN, domain_gridworld.N_TEST,
                             BFS_REPLAN, domain_gridworld.CSI_BUDGET)
    if name == "dinner":
        cfg = config if config is not None else DinnerConfig()
        return DomainBinding("dinner", cfg, domain_dinner.dinner_sample_task, domain_dinner.reference_mdp,
                             domain_dinner.state_features, domain_dinner.task_from_params,
                             domain_dinner.CONTEXT_VARIABLES, domain_dinner.N_TRAIN, domain_dinner.N_TEST,
                             OPTIMAL_SEARCH, domain_dinner.CSI_BUDGET)
    raise ConfigError(f"unknown domain {name!r}; expected 'gridworld' or 'dinner'")


def sample_tasks(binding: DomainBinding, split: str, n: int, seed: int) -> List[Task]:
    """Task i of a split depends only on (seed, split, i), so larger splits extend smaller ones."""
    return [binding.sample_task(binding.config, derive_rng(seed, "task", split, i), f"{binding.name}-{split}-{seed}-{i}")
            for i in range(n)]


# ---------- Baseline policies ----------

class RandomPolicy:
    def __init__(self, mdp, rng: np.random.Generator):
        self.mdp = mdp
        self.rng = rng
        self.meter = CostMeter()

    def __call__(self, s) -> Assignment:
        actions = self.mdp.legal_actions(s)
        return actions[int(self.rng.integers(len(actions)))]


def plan_transfer_action(train_plans: Sequence[Sequence[int]], t: int, n_actions: int,
                         rng: np.random.Generator, meter: Optional[CostMeter] = None) -> int:
    """Majority vote over the training plans' step-t action indices; lowest index wins ties."""
    if not train_plans:
        raise ConfigError("plan transfer needs at least one training plan")
    votes = Counter(plan[t] for plan in train_plans if len(plan) > t)
    if not votes:
        if meter is not None:
            meter.flag(f"plan_transfer: every training plan ends before step {t}, acting randomly")
        return int(rng.integers(n_actions))
    top = max(votes.values())
    return min(idx for idx, count in votes.items() if count == top)


class PlanTransferPolicy:
    def __init__(self, mdp, train_plans: Sequence[Sequence[int]], rng: np.random.Generator):
        self.mdp = mdp
        self.train_plans = [list(p) for p in train_plans]
        self.rng = rng
        self.meter = CostMeter()
        self.t = 0

    def reset(self) -> None:
        self.t = 0

    def __call__(self, s) -> Assignment:
        actions = self.mdp.legal_actions(s)
        idx = plan_transfer_action(self.train_plans, self.t, len(actions), self.rng, self.meter)
        self.t += 1
        return actions[min(idx, len(actions) - 1)]


class LearnedPolicy:
    """Imitation policy: state features (optionally followed by task features) -> action index."""

    def __init__(self, classifier: Classifier, task: Task, featurize: Callable[[Task, Assignment], np.ndarray],
                 task_conditioned: bool = False):
        self.classifier = classifier
        self.task = task
        self.featurize = featurize
        self.task_conditioned = task_conditioned
        self.meter = CostMeter()

    def __call__(self, s) -> Assignment:
        x = policy_features(self.task, s, self.featurize, self.task_conditioned)
        actions = self.task.mdp.legal_actions(s)
        idx = self.classifier.predict(x)
        return actions[idx] if idx < len(actions) else actions[0]


def policy_features(task: Task, s: Assignment, featurize, task_conditioned: bool) -> np.ndarray:
    x = featurize(task, s)
    return np.concatenate([x, task.features]) if task_conditioned else x


# ---------- Experiments ----------

@dataclass
class ExperimentConfig:
    domain: str = "dinner"
    planner: Optional[PlannerConfig] = None
    methods: Tuple[str, ...] = METHODS
    lam: Optional[float] = None
    seed: int = 0
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    cost_channel: str = EXPANSIONS
    seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION
    domain_config: Any = None
    context_variables: Optional[Tuple[str, ...]] = None
    max_context_len: int = 2
    domain_size_threshold: int = 8
    distinct_contexts: bool = True
    # None takes the domain's CSI budget
    k1: Optional[int] = None
    k2: Optional[int] = None
    csi_mode: Optional[str] = None
    n_rollouts: Optional[int] = None
    sink_reward: float = DEFAULT_SINK_REWARD
    selector_lr: float = 1e-4
    selector_loss_target: float = 1e-3
    selector_max_epochs: int = 50_000
    policy_lr: float = 1e-3
    policy_loss_target: float = 1e-3
    policy_max_epochs: int = 5_000
    cache_dir: Optional[str] = None
    forced_context_index: Optional[int] = None

    def __post_init__(self):
        for kind in self.methods:
            MethodSpec(kind)
        binding = domain_binding(self.domain, self.domain_config)
        if self.planner is None:
            self.planner = PlannerConfig(kind=binding.default_planner)
        if self.k1 is None:
            self.k1 = binding.csi_budget[0]
        if self.k2 is None:
            self.k2 = binding.csi_budget[1]
        if self.lam is None:
            self.lam = default_lambda(self.planner.kind)
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")


@dataclass
class PreparedExperiment:
    """Everything run_experiment trains before evaluation; reused by the CLI subcommands."""
    binding: DomainBinding
    train_tasks: List[Task]
    test_tasks: List[Task]
    contexts: List[Context] = field(default_factory=list)
    csis: Dict[Context, CsiSet] = field(default_factory=dict)
    selector: Optional[Selector] = None
    train_plans: List[List[int]] = field(default_factory=list)
    policies: Dict[str, Classifier] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)


def candidate_contexts(binding: DomainBinding, config: ExperimentConfig) -> List[Context]:
    names = set(config.context_variables or binding.context_variables)
    eligible = [v for v in binding.reference_mdp(binding.config).variables if v.name in names]
    return generate_contexts(eligible, config.max_context_len, config.domain_size_threshold,
                             distinct_only=config.distinct_contexts)


def _csi_cache(binding: DomainBinding, config: ExperimentConfig) -> Optional[CsiCache]:
    if not config.cache_dir:
        return None
    meta = {"domain": binding.name, "config": repr(binding.config), "k1": config.k1, "k2": config.k2,
            "mode": config.csi_mode, "seed": config.seed}
    return CsiCache(os.path.join(config.cache_dir, f"csi_cache_{binding.name}_{config.seed}.json"), meta)


def discover_csis(binding: DomainBinding, config: ExperimentConfig,
                  contexts: Optional[Sequence[Context]] = None) -> Tuple[List[Context], Dict[Context, CsiSet]]:
    contexts = list(contexts) if contexts is not None else candidate_contexts(binding, config)
    csis = discover_all(binding.reference_mdp(binding.config), contexts, config.k1, config.k2, config.seed,
                        cache=_csi_cache(binding, config), mode=config.csi_mode)
    return contexts, csis


def training_plans(binding: DomainBinding, config: ExperimentConfig,
                   tasks: Sequence[Task]) -> Tuple[List[List[int]], List[Tuple[Task, List[Assignment]]]]:
    """Pure-planning rollouts on the training tasks: action-index plans plus visited states."""
    plans, visited = [], []
    for task in tasks:
        policy_rng, env_rng = split_rng(derive_rng(config.seed, "train-plan", task.task_id))
        policy = make_policy(task.mdp, config.planner, rng=policy_rng, meter=CostMeter())
        traj = rollout(task.mdp, policy, task, env_rng)
        actions = task.mdp.legal_actions(task.initial_state)
        plans.append([actions.index(a) for a in traj.actions])
        visited.append((task, [st.state for st in traj.steps if st.action is not None]))
    return plans, visited


def train_policy(binding: DomainBinding, config: ExperimentConfig, plans: Sequence[Sequence[int]],
                 visited: Sequence[Tuple[Task, List[Assignment]]], task_conditioned: bool) -> Classifier:
    X, Y = [], []
    for plan, (task, states) in zip(plans, visited):
        for s, idx in zip(states, plan):
            X.append(policy_features(task, s, binding.state_features, task_conditioned))
            Y.append(idx)
    if not X:
        raise ConfigError("no state-action pairs to imitate")
    n_actions = len(visited[0][0].mdp.legal_actions(visited[0][0].initial_state))
    result = train_classifier(np.stack(X), np.asarray(Y), n_classes=n_actions, lr=config.policy_lr,
                              loss_target=config.policy_loss_target, max_epochs=config.policy_max_epochs,
                              rng=derive_rng(config.seed, "policy", task_conditioned))
    return result.classifier


def prepare_experiment(config: ExperimentConfig, kinds: Optional[Sequence[str]] = None) -> PreparedExperiment:
    """Samples the splits and trains what the requested methods need; failures are kept per component."""
    binding = domain_binding(config.domain, config.domain_config)
    kinds = [MethodSpec(k) for k in (kinds or config.methods)]
    n_train = config.n_train if config.n_train is not None else binding.n_train
    n_test = config.n_test if config.n_test is not None else binding.n_test
    prepared = PreparedExperiment(binding, sample_tasks(binding, "train", n_train, config.seed),
                                  sample_tasks(binding, "test", n_test, config.seed))
    logger.info(f"{binding.name}: {n_train} training and {n_test} test tasks (seed {config.seed})")

    if any(m.uses_selector for m in kinds):
        try:
            prepared.contexts, prepared.csis = discover_csis(binding, config)
            cache = None
            if config.cache_dir:
                cache = ScoreCache(os.path.join(
                    config.cache_dir,
                    f"scores_{binding.name}_{config.planner.kind}_{config.lam:g}_{config.seed}.csv"))
            prepared.selector = train_selector(
                prepared.train_tasks, prepared.contexts, prepared.csis, config.planner, config.lam,
                derive_rng(config.seed, "selector"), n_rollouts=config.n_rollouts, cache=cache,
                channel=config.cost_channel, seconds_per_expansion=config.seconds_per_expansion,
                sink_reward=config.sink_reward, lr=config.selector_lr, loss_target=config.selector_loss_target,
                max_epochs=config.selector_max_epochs)
        except Exception as e:
            logger.error(f"Selector training failed: {e}", exc_info=True)
            prepared.errors["selector"] = f"{type(e).__name__}: {e}"

    if any(m.uses_training_plans for m in kinds):
        try:
            plans, visited = training_plans(binding, config, prepared.train_tasks)
            prepared.train_plans = plans
            for m in kinds:
                if m.kind in (POLICY_LEARNING, TASK_CONDITIONED_POLICY):
                    prepared.policies[m.kind] = train_policy(binding, config, plans, visited,
                                                             m.kind == TASK_CONDITIONED_POLICY)
        except Exception as e:
            logger.error(f"Training-plan collection failed: {e}", exc_info=True)
            prepared.errors["plans"] = f"{type(e).__name__}: {e}"
    return prepared


def _trajectory(method: MethodSpec, task: Task, prepared: PreparedExperiment, config: ExperimentConfig,
                rng: np.random.Generator) -> Tuple[Trajectory, str]:
    if method.uses_selector:
        if prepared.selector is None:
            raise ConfigError(f"no selector: {prepared.errors.get('selector', 'not trained')}")
        start = time.perf_counter()
        if config.forced_context_index is not None:
            ctx = prepared.selector.contexts[config.forced_context_index]
        else:
            ctx = prepared.selector.select(task.features)
        csis = prepared.csis[ctx]
        # selection and CSI lookup are charged to the first step, the CAMP build inside camp_trajectory
        overhead = time.perf_counter() - start
        traj = camp_trajectory(task, ctx, csis, config.planner, rng, sink_reward=config.sink_reward,
                               drop_irrelevant=method.drop_irrelevant, overhead_seconds=overhead)
        return traj, ctx.text
    policy_rng, env_rng = split_rng(rng)
    if method.kind == PURE_PLANNING:
        policy = make_policy(task.mdp, config.planner, rng=policy_rng, meter=CostMeter())
    elif method.kind == RANDOM_POLICY:
        policy = RandomPolicy(task.mdp, policy_rng)
    elif method.kind == PLAN_TRANSFER:
        if not prepared.train_plans:
            raise ConfigError(f"no training plans: {prepared.errors.get('plans', 'not collected')}")
        policy = PlanTransferPolicy(task.mdp, prepared.train_plans, policy_rng)
    else:
        clf = prepared.policies.get(method.kind)
        if clf is None:
            raise ConfigError(f"no trained policy: {prepared.errors.get('plans', 'not trained')}")
        policy = LearnedPolicy(clf, task, prepared.binding.state_features, method.kind == TASK_CONDITIONED_POLICY)
    return rollout(task.mdp, policy, task, env_rng), ""


def evaluate_method(method: MethodSpec, task: Task, prepared: PreparedExperiment,
                    config: ExperimentConfig) -> ResultRow:
    """One result row; failures become rows with status 'failed' instead of exceptions."""
    base = dict(method=method.kind, domain=prepared.binding.name, planner=config.planner.kind, task_id=task.task_id,
                seed=config.seed, lam=float(config.lam), cost_channel=config.cost_channel)
    rng = derive_rng(config.seed, "eval", task.task_id)
    try:
        traj, context = _trajectory(method, task, prepared, config, rng)
    except Exception as e:
        logger.error(f"{method.kind} failed on {task.task_id}: {e}", exc_info=True)
        return ResultRow(ret=math.nan, compute_seconds=math.nan, expansions=0, objective=math.nan,
                         status=STATUS_FAILED, message=f"{type(e).__name__}: {e}", **base)
    ret = traj.discounted_return()
    cost = traj.total_cost(config.cost_channel, config.seconds_per_expansion)
    return ResultRow(ret=ret, compute_seconds=traj.compute_seconds, expansions=traj.expansions,
                     objective=objective_value(ret, cost, config.lam), context=context,
                     status=STATUS_FLAGGED if traj.flags else STATUS_OK, message="; ".join(traj.flags[:3]), **base)


def run_experiment(config: ExperimentConfig) -> List[ResultRow]:
    """Train what each method needs, then evaluate every method on every test task."""
    methods = [MethodSpec(k) for k in config.methods]
    prepared = prepare_experiment(config)
    rows = []
    for task in prepared.test_tasks:
        for method in methods:
            rows.append(evaluate_method(method, task, prepared, config))
    failed = sum(r.status == STATUS_FAILED for r in rows)
    logger.info(f"Experiment {config.domain}/{config.planner.kind} lambda={config.lam:g} seed={config.seed}: "
                f"{len(rows)} rows, {failed} failed")
    return rows


def run_runs(config: ExperimentConfig, n_runs: int = FAST_RUNS) -> List[ResultRow]:
    """Independent runs of training and evaluation with seeds seed, seed+1, ..."""
    rows: List[ResultRow] = []
    for i in range(n_runs):
        rows.extend(run_experiment(replace(config, seed=config.seed + i)))
    return rows


def sweep(kind: str, grid: Sequence[float], config: ExperimentConfig, n_runs: int = FAST_RUNS) -> pd.DataFrame:
    """Long-format results for every grid value of lambda or the training-set size."""
    if kind not in ("lambda", "n_train"):
        raise ConfigError(f"unknown sweep kind {kind!r}; expected 'lambda' or 'n_train'")
    if not grid:
        raise ConfigError("sweep grid is empty")
    frames = []
    for value in grid:
        point = replace(config, lam=float(value)) if kind == "lambda" else replace(config, n_train=int(value))
        try:
            rows = run_runs(point, n_runs)
        except Exception as e:
            logger.error(f"Sweep point {kind}={value} failed: {e}", exc_info=True)
            rows = [ResultRow(method=m, domain=config.domain, planner=point.planner.kind, task_id="", seed=config.seed,
                              ret=math.nan, compute_seconds=math.nan, expansions=0, objective=math.nan,
                              lam=float(point.lam), cost_channel=config.cost_channel, status=STATUS_FAILED,
                              message=f"{type(e).__name__}: {e}") for m in config.methods]
        frame = rows_to_frame(rows)
        frame.insert(0, "sweep_value", value)
        frame.insert(0, "sweep_kind", kind)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def summarize(rows_or_frame) -> pd.DataFrame:
    """Mean and SD per (method, domain, planner, lambda); failed rows are left out."""
    frame = rows_or_frame if isinstance(rows_or_frame, pd.DataFrame) else rows_to_frame(rows_or_frame)
    frame = frame[frame["status"] != STATUS_FAILED]
    keys = ["method", "domain", "planner", "lambda"]
    if "sweep_kind" in frame.columns:
        keys = ["sweep_kind", "sweep_value"] + keys
    metrics = ["return", "objective", "compute_seconds", "expansions"]
    grouped = frame.groupby(keys)[metrics].agg(["mean", "std"])
    grouped.columns = [f"{metric}_{'sd' if stat == 'std' else stat}" for metric, stat in grouped.columns]
    grouped["n"] = frame.groupby(keys).size()
    return grouped.reset_index()


def offline_vi_experiment(config: ExperimentConfig, lam: Optional[float] = None) -> Dict[str, float]:
    """CAMP-with-VI versus full-space VI: total compute and objective on the test tasks.

    Lambda is the value-iteration default unless `lam` is given. The CAMP arm
    pays for context selection, CSI lookup and the CAMP build on top of its
    VI sweeps.
    """
    lam = default_lambda(VALUE_ITERATION) if lam is None else float(lam)
    config = replace(config, planner=replace(config.planner, kind=VALUE_ITERATION),
                     methods=(CAMP, PURE_PLANNING), lam=lam)
    frame = rows_to_frame(run_experiment(config))
    ok = frame[frame["status"] != STATUS_FAILED]
    camp = ok[ok["method"] == CAMP]
    pure = ok[ok["method"] == PURE_PLANNING]
    report = {
        "lambda": lam,
        "camp_compute_seconds": float(camp["compute_seconds"].sum()),
        "pure_compute_seconds": float(pure["compute_seconds"].sum()),
        "camp_expansions": float(camp["expansions"].sum()),
        "pure_expansions": float(pure["expansions"].sum()),
        "camp_objective": float(camp["objective"].mean()) if len(camp) else math.nan,
        "pure_objective": float(pure["objective"].mean()) if len(pure) else math.nan,
    }
    report["expansion_ratio"] = (report["pure_expansions"] / report["camp_expansions"]
                                 if report["camp_expansions"] else math.inf)
    logger.info(f"Offline VI: {report}")
    return report
