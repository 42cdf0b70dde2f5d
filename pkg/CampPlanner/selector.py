"""
Context scoring, selector training and test-time context selection.

Every training task is scored under every candidate context by planning in
the context's CAMP; the best-scoring context becomes the task's label and a
classifier learns task features -> label.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .abstraction import DEFAULT_SINK_REWARD, build_camp
from .contexts import Context, parse_context
from .core import (DEFAULT_SECONDS_PER_EXPANSION, WALLCLOCK, CampError, ConfigError, CostMeter, Task,
                   Trajectory, VariableSpec, derive_rng, evaluate_objective, rollout, split_rng)
from .csi import CsiSet
from .learner import (DEFAULT_LOSS_TARGET, DEFAULT_LR, DEFAULT_MAX_EPOCHS, Classifier, train_classifier)
from .planners import BFS_REPLAN, MCTS, OPTIMAL_SEARCH, VALUE_ITERATION, PlannerConfig, make_policy

logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = {MCTS: 0.0, BFS_REPLAN: 100.0, OPTIMAL_SEARCH: 250.0, VALUE_ITERATION: 100.0}
STOCHASTIC_ROLLOUTS = 3
DETERMINISTIC_ROLLOUTS = 1
MIN_TRAINING_ACCURACY = 0.95


def default_lambda(kind: str) -> float:
    if kind == VALUE_ITERATION:
        logger.info("value_iteration has no dedicated lambda; reusing the bfs_replan value")
    return DEFAULT_LAMBDAS[kind]


def default_rollouts(mdp) -> int:
    return DETERMINISTIC_ROLLOUTS if mdp.deterministic else STOCHASTIC_ROLLOUTS


def camp_trajectory(task: Task, ctx: Context, csis: CsiSet, planner: PlannerConfig,
                    rng: np.random.Generator, sink_reward: float = DEFAULT_SINK_REWARD,
                    drop_irrelevant: bool = True, overhead_seconds: float = 0.0) -> Trajectory:
    """One rollout on the task MDP, planning in the CAMP of `ctx` at every step.

    Building the CAMP is charged to the first step together with `overhead_seconds`.
    """
    start = time.perf_counter()
    camp = build_camp(task.mdp, ctx, csis, sink_reward=sink_reward, drop_irrelevant=drop_irrelevant)
    built = time.perf_counter() - start
    policy_rng, env_rng = split_rng(rng)
    policy = make_policy(camp, planner, rng=policy_rng, meter=CostMeter())
    traj = rollout(task.mdp, policy, task, env_rng)
    traj.charge(built + overhead_seconds)
    return traj


def score_context(task: Task, ctx: Context, csis: CsiSet, planner: PlannerConfig, lam: float,
                  n_rollouts: int, rng: np.random.Generator, channel: str = WALLCLOCK,
                  seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION,
                  sink_reward: float = DEFAULT_SINK_REWARD) -> float:
    """Objective of planning in the CAMP of `ctx` on `task`, averaged over seeded rollouts."""
    if csis.context != ctx:
        raise ConfigError(f"CSI set for {csis.context.text} does not match context {ctx.text}")
    if n_rollouts < 1:
        raise ConfigError("n_rollouts must be at least 1")
    seeds = rng.integers(0, 2 ** 31, size=n_rollouts)
    trajectories: List[Trajectory] = []
    for i, seed in enumerate(seeds):
        try:
            trajectories.append(camp_trajectory(task, ctx, csis, planner, np.random.default_rng(int(seed)),
                                                sink_reward=sink_reward))
        except CampError as e:
            logger.warning(f"Scoring {ctx.text} on {task.task_id}: rollout {i} failed: {e}")
    if not trajectories:
        floor = sink_reward * task.mdp.horizon
        logger.warning(f"Scoring {ctx.text} on {task.task_id}: every rollout failed, score floored at {floor:g}")
        return float(floor)
    return evaluate_objective(trajectories, lam, channel, seconds_per_expansion)


class ScoreCache:
    """(task id, context text) -> score, persisted as CSV so labeling can resume."""

    COLUMNS = ["task_id", "context", "score"]

    def __init__(self, cache_file: Optional[str] = None):
        self.cache_file = cache_file
        self._scores: Dict[Tuple[str, str], float] = {}
        if cache_file and os.path.exists(cache_file):
            self.load()

    def __len__(self) -> int:
        return len(self._scores)

    def get(self, task_id: str, ctx: Context) -> Optional[float]:
        return self._scores.get((task_id, ctx.text))

    def put(self, task_id: str, ctx: Context, score: float) -> None:
        self._scores[(task_id, ctx.text)] = float(score)

    def load(self) -> bool:
        try:
            frame = pd.read_csv(self.cache_file, dtype={"task_id": str, "context": str})
            self._scores = {(str(r.task_id), str(r.context)): float(r.score) for r in frame.itertuples(index=False)}
            logger.info(f"Loaded {len(self._scores)} cached scores from {self.cache_file}")
            return True
        except Exception as e:
            logger.error(f"Failed to load score cache {self.cache_file}: {e}", exc_info=True)
            self._scores = {}
            return False

    def save(self) -> bool:
        if not self.cache_file:
            return False
        try:
            directory = os.path.dirname(self.cache_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            rows = [(t, c, s) for (t, c), s in self._scores.items()]
            pd.DataFrame(rows, columns=self.COLUMNS).to_csv(self.cache_file, index=False)
            return True
        except Exception as e:
            logger.error(f"Failed to save score cache {self.cache_file}: {e}", exc_info=True)
            return False


@dataclass
class Selector:
    """Classifier over task features; class i stands for contexts[i]."""
    classifier: Classifier
    contexts: List[Context]
    lam: float
    planner: PlannerConfig
    label_table: Optional[pd.DataFrame] = None
    training_loss: float = 0.0
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.contexts or not self.contexts[0].is_universal:
            raise ConfigError("the first selector context must be the universal context")
        if self.classifier.n_classes != len(self.contexts):
            raise ConfigError(f"classifier has {self.classifier.n_classes} classes for {len(self.contexts)} contexts")

    def select(self, theta) -> Context:
        return self.contexts[self.classifier.predict(theta)]

    def save(self, path: str) -> None:
        self.classifier.save(path, meta={"contexts": [c.text for c in self.contexts], "lambda": self.lam,
                                         "planner": self.planner.kind})

    @classmethod
    def load(cls, path: str, vars: Sequence[VariableSpec], planner: Optional[PlannerConfig] = None) -> "Selector":
        clf, meta = Classifier.load(path)
        contexts = [parse_context(text, vars) for text in meta["contexts"]]
        planner = planner or PlannerConfig(kind=meta.get("planner", MCTS))
        return cls(clf, contexts, float(meta.get("lambda", 0.0)), planner)


def features_digest(features: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(features, dtype=float).tobytes()).hexdigest()[:12]


def label_tasks(train_tasks: Sequence[Task], contexts: Sequence[Context], all_csis: Mapping[Context, CsiSet],
                planner: PlannerConfig, lam: float, rng: np.random.Generator, *,
                n_rollouts: Optional[int] = None, cache: Optional[ScoreCache] = None,
                channel: str = WALLCLOCK, seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION,
                sink_reward: float = DEFAULT_SINK_REWARD) -> Tuple[np.ndarray, pd.DataFrame]:
    """Argmax-scoring context index per task (lower index on ties) and the label table.

    Every context of a task is scored on the same rollout seeds, so contexts
    that lead to the same behavior get the same return.
    """
    seed = int(rng.integers(0, 2 ** 31))
    labels = np.zeros(len(train_tasks), dtype=int)
    records = []
    for n, task in enumerate(train_tasks):
        rollouts = n_rollouts if n_rollouts is not None else default_rollouts(task.mdp)
        scores = []
        for ctx in contexts:
            score = cache.get(task.task_id, ctx) if cache is not None else None
            if score is None:
                score = score_context(task, ctx, all_csis[ctx], planner, lam, rollouts,
                                      derive_rng(seed, "score", task.task_id),
                                      channel, seconds_per_expansion, sink_reward)
                if cache is not None:
                    cache.put(task.task_id, ctx, score)
            scores.append(score)
        best = int(np.argmax(scores))
        labels[n] = best
        record = {"task_id": task.task_id, "features_digest": features_digest(task.features),
                  "label": contexts[best].text, "label_index": best}
        record.update({f"score[{ctx.text}]": s for ctx, s in zip(contexts, scores)})
        records.append(record)
        logger.info(f"Task {task.task_id}: label {contexts[best].text} (score {scores[best]:.3f}, "
                    f"universal {scores[0]:.3f})")
        if cache is not None:
            cache.save()
    return labels, pd.DataFrame.from_records(records)


def write_label_table(table: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    table.to_csv(path, index=False)
    logger.info(f"Label table written to {path}")


def train_selector(train_tasks: Sequence[Task], contexts: Sequence[Context], all_csis: Mapping[Context, CsiSet],
                   planner: PlannerConfig, lam: float, rng: np.random.Generator, *,
                   n_rollouts: Optional[int] = None, cache: Optional[ScoreCache] = None,
                   channel: str = WALLCLOCK, seconds_per_expansion: float = DEFAULT_SECONDS_PER_EXPANSION,
                   sink_reward: float = DEFAULT_SINK_REWARD, lr: float = DEFAULT_LR,
                   loss_target: float = DEFAULT_LOSS_TARGET, max_epochs: int = DEFAULT_MAX_EPOCHS,
                   label_table_path: Optional[str] = None) -> Selector:
    """Labels every training task with its best context, then fits the classifier."""
    if not train_tasks:
        raise ConfigError("train_selector needs at least one training task")
    contexts = list(contexts)
    if not contexts or not contexts[0].is_universal:
        raise ConfigError("contexts must start with the universal context")
    labels, table = label_tasks(train_tasks, contexts, all_csis, planner, lam, rng, n_rollouts=n_rollouts,
                                cache=cache, channel=channel, seconds_per_expansion=seconds_per_expansion,
                                sink_reward=sink_reward)
    if label_table_path:
        write_label_table(table, label_table_path)
    X = np.stack([task.features for task in train_tasks])
    result = train_classifier(X, labels, n_classes=len(contexts), lr=lr, loss_target=loss_target,
                              max_epochs=max_epochs, rng=rng)
    flags = list(result.flags)
    accuracy = result.classifier.accuracy(X, labels)
    if result.converged and accuracy < MIN_TRAINING_ACCURACY:
        message = f"selector training accuracy {accuracy:.2%} below {MIN_TRAINING_ACCURACY:.0%}"
        logger.warning(message)
        flags.append(message)
    logger.info(f"Selector trained on {len(train_tasks)} tasks: loss {result.loss:.4g}, accuracy {accuracy:.2%}, "
                f"{len(set(labels.tolist()))} distinct labels")
    return Selector(result.classifier, contexts, lam, planner, table, result.loss, flags)


def select_context(selector: Selector, theta) -> Context:
    return selector.select(theta)
