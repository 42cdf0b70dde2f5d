"""
Approximate context-specific independence (CSI) discovery.

All ordered pairs (source, target) outside the context start out independent;
a pair is removed as soon as perturbing the source in some in-context
assignment changes the target's next-step distribution.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .contexts import DISJUNCTION, Context, parse_context
from .core import (ACTION, STATE, Assignment, ContextError, VariableSpec, derive_rng,
                   enumerate_assignments)

logger = logging.getLogger(__name__)

EXACT = "exact"
SAMPLING = "sampling"

EXACT_TOLERANCE = 1e-9
SAMPLES_PER_QUERY = 64
TV_THRESHOLD = 0.15
MAX_TRIES_PER_SAMPLE = 200


@dataclass(frozen=True)
class CsiSet:
    """Pairs (source, target) with target_{t+1} independent of source_t under the context."""
    context: Context
    independent_pairs: FrozenSet[Tuple[str, str]]

    def __post_init__(self):
        object.__setattr__(self, "independent_pairs", frozenset(tuple(p) for p in self.independent_pairs))
        bad = [p for p in self.independent_pairs if p[0] in self.context.variables or p[1] in self.context.variables]
        if bad:
            raise ContextError(f"CSI pairs may not involve context variables: {sorted(bad)}")

    def is_independent(self, source: str, target: str) -> bool:
        return (source, target) in self.independent_pairs


def _split(specs: Sequence[VariableSpec], values: Mapping[str, Any]) -> Tuple[Assignment, Assignment]:
    s = Assignment({v.name: values[v.name] for v in specs if v.kind == STATE})
    a = Assignment({v.name: values[v.name] for v in specs if v.kind == ACTION})
    return s, a


def _draw_candidate(specs: Sequence[VariableSpec], ctx: Context, rng: np.random.Generator) -> Dict[str, Any]:
    values = {v.name: v.domain[int(rng.integers(v.size))] for v in specs}
    if ctx.is_universal:
        return values
    by_name = {v.name: v for v in specs}
    atoms = ctx.atoms if ctx.shape != DISJUNCTION else [ctx.atoms[int(rng.integers(len(ctx.atoms)))]]
    for atom in atoms:
        spec = by_name[atom.variable]
        if not atom.negated:
            values[atom.variable] = atom.value
        elif values[atom.variable] == atom.value and spec.size > 1:
            others = [v for v in spec.domain if v != atom.value]
            values[atom.variable] = others[int(rng.integers(len(others)))]
    return values


def _unsatisfiable(ctx: Context):
    raise ContextError(f"could not sample any assignment inside context {ctx.text}")


def _joint_domain(vars: Sequence[VariableSpec], actions: Optional[Sequence[Assignment]]) -> List[Assignment]:
    if actions is None:
        return enumerate_assignments(vars)
    states = enumerate_assignments([v for v in vars if v.kind == STATE])
    return [s.updated(a) for s in states for a in actions]


def sample_in_context(vars: Sequence[VariableSpec], ctx: Context, k1: int, rng: np.random.Generator,
                      valid: Optional[Callable[[Mapping[str, Any]], bool]] = None,
                      actions: Optional[Sequence[Assignment]] = None) -> List[Assignment]:
    """Up to k1 joint (state, action) assignments satisfying the context.

    State values are drawn uniformly per variable with the context's atoms
    pinned; the action is drawn from `actions` when given (legal joint
    actions), else per variable too. Candidates are filtered by the context
    and the optional consistency predicate.
    """
    if k1 < 1:
        raise ContextError("k1 must be at least 1")
    missing = ctx.variables - {v.name for v in vars}
    if missing:
        raise ContextError(f"context {ctx.text} references undeclared variables {sorted(missing)}")
    n_actions = len(actions) if actions is not None else math.prod(v.size for v in vars if v.kind == ACTION)
    if math.prod(v.size for v in vars if v.kind == STATE) * n_actions <= k1:
        # budget covers the joint domain: enumerate instead of sampling
        samples = [u for u in _joint_domain(vars, actions) if ctx.holds(u) and (valid is None or valid(u))]
        if not samples:
            _unsatisfiable(ctx)
        return samples
    samples: List[Assignment] = []
    for _ in range(k1 * MAX_TRIES_PER_SAMPLE):
        if len(samples) >= k1:
            break
        values = _draw_candidate(vars, ctx, rng)
        if actions is not None:
            values.update(actions[int(rng.integers(len(actions)))])
        if not ctx.holds(values):
            continue
        if valid is not None and not valid(values):
            continue
        samples.append(Assignment(values))
    if not samples:
        _unsatisfiable(ctx)
    if len(samples) < k1:
        logger.warning(f"Context {ctx.text}: only {len(samples)}/{k1} in-context samples found")
    return samples


def _perturbation_values(spec: VariableSpec, current: Any, k2: int, rng: np.random.Generator) -> List[Any]:
    if spec.size <= k2:
        values = list(spec.domain)
    else:
        picks = rng.choice(spec.size, size=k2, replace=False)
        values = [spec.domain[int(i)] for i in sorted(picks)]
    return [v for v in values if v != current]


def _empirical(transition, s, a, targets, rng, n_samples) -> Dict[str, Dict[Any, float]]:
    counts: Dict[str, Dict[Any, float]] = {t: {} for t in targets}
    for _ in range(n_samples):
        nxt = transition(s, a, rng)
        for t in targets:
            counts[t][nxt[t]] = counts[t].get(nxt[t], 0.0) + 1.0
    return {t: {v: c / n_samples for v, c in dist.items()} for t, dist in counts.items()}


def _total_variation(p: Mapping[Any, float], q: Mapping[Any, float]) -> float:
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


def _differs_exact(p: Mapping[Any, float], q: Mapping[Any, float], tol: float) -> bool:
    return any(abs(p.get(k, 0.0) - q.get(k, 0.0)) > tol for k in set(p) | set(q))


def learn_csis(vars: Sequence[VariableSpec], transition: Callable, ctx: Context, k1: int, k2: int,
               rng: np.random.Generator, *,
               marginals: Optional[Callable[[Assignment, Assignment], Dict[str, Dict[Any, float]]]] = None,
               valid: Optional[Callable[[Mapping[str, Any]], bool]] = None,
               actions: Optional[Sequence[Assignment]] = None,
               n_samples: int = SAMPLES_PER_QUERY, tv_threshold: float = TV_THRESHOLD,
               tolerance: float = EXACT_TOLERANCE) -> CsiSet:
    """Approximate CSIs of `transition` under `ctx`.

    Args:
        vars: all state and action variables
        transition: black-box sampler (s, a, rng) -> s'
        marginals: exact per-variable successor marginals; when given, distributions
            are compared pointwise within `tolerance`, otherwise empirically by
            total-variation distance over `n_samples` draws
        valid: consistency predicate for joint assignments; perturbations that
            violate it are skipped
        actions: legal joint actions; action perturbations outside this list are skipped
    Returns:
        CsiSet of the pairs never shown dependent
    """
    if k2 < 1:
        raise ContextError("k2 must be at least 1")
    start = time.perf_counter()
    free = [v for v in vars if v.name not in ctx.variables]
    sources = free
    targets = [v.name for v in free if v.kind == STATE]
    independent: Set[Tuple[str, str]] = {(src.name, tgt) for src in sources for tgt in targets}

    def _query(values: Mapping[str, Any]) -> Dict[str, Dict[Any, float]]:
        s, a = _split(vars, values)
        if marginals is not None:
            m = marginals(s, a)
            return {t: m[t] for t in targets}
        return _empirical(transition, s, a, targets, rng, n_samples)

    def _differs(p, q) -> bool:
        if marginals is not None:
            return _differs_exact(p, q, tolerance)
        return _total_variation(p, q) > tv_threshold

    action_names = [v.name for v in vars if v.kind == ACTION]
    legal = set(actions) if actions is not None else None

    def _admissible(u: Assignment, changed: VariableSpec) -> bool:
        if legal is not None and changed.kind == ACTION and u.restrict(action_names) not in legal:
            return False
        return valid is None or valid(u)

    bases = sample_in_context(vars, ctx, k1, rng, valid=valid, actions=actions)
    for base in bases:
        if not independent:
            break
        base_dist = _query(base)
        for src in sources:
            pending = [t for t in targets if (src.name, t) in independent]
            if not pending:
                continue
            for value in _perturbation_values(src, base[src.name], k2, rng):
                perturbed = base.updated({src.name: value})
                if not _admissible(perturbed, src):
                    continue
                dist = _query(perturbed)
                for t in pending:
                    if (src.name, t) in independent and _differs(base_dist[t], dist[t]):
                        independent.discard((src.name, t))
                pending = [t for t in pending if (src.name, t) in independent]
                if not pending:
                    break
    logger.info(f"Context {ctx.text}: {len(independent)} independent pairs "
                f"({len(bases)} bases, {time.perf_counter() - start:.2f}s)")
    return CsiSet(ctx, frozenset(independent))


def learn_csis_for_mdp(mdp, ctx: Context, k1: int, k2: int, rng: np.random.Generator,
                       mode: Optional[str] = None, **kwargs) -> CsiSet:
    """learn_csis wired to a FactoredMdp; exact mode whenever the MDP exposes exact dynamics."""
    use_exact = mdp.has_exact_dynamics if mode is None else mode == EXACT
    return learn_csis(list(mdp.variables), mdp.transition, ctx, k1, k2, rng,
                      marginals=mdp.successor_marginals if use_exact else None,
                      valid=mdp.valid_state, actions=mdp.action_list, **kwargs)


class CsiCache:
    """CSI sets persisted as JSON, one record per canonical context text."""

    def __init__(self, cache_file: Optional[str] = None, meta: Optional[Mapping[str, Any]] = None):
        self.cache_file = cache_file
        self.meta = dict(meta or {})
        self._records: Dict[str, List[List[str]]] = {}
        if cache_file and os.path.exists(cache_file):
            self.load()

    def __contains__(self, ctx: Context) -> bool:
        return ctx.text in self._records

    def __len__(self) -> int:
        return len(self._records)

    def get(self, ctx: Context) -> Optional[CsiSet]:
        pairs = self._records.get(ctx.text)
        if pairs is None:
            return None
        return CsiSet(ctx, frozenset((p[0], p[1]) for p in pairs))

    def put(self, csis: CsiSet) -> None:
        self._records[csis.context.text] = sorted([list(p) for p in csis.independent_pairs])

    def load(self) -> bool:
        try:
            with open(self.cache_file, "r", encoding="utf-8") as f:
                data = json.load(f)
            stored_meta = data.get("meta", {})
            if self.meta and stored_meta and stored_meta != self.meta:
                logger.warning(f"CSI cache {self.cache_file} was built with {stored_meta}, "
                               f"expected {self.meta}; ignoring it")
                self._records = {}
                return False
            self._records = data.get("contexts", {})
            logger.info(f"Loaded {len(self._records)} CSI records from {self.cache_file}")
            return True
        except Exception as e:
            logger.error(f"Failed to load CSI cache {self.cache_file}: {e}", exc_info=True)
            self._records = {}
            return False

    def save(self) -> bool:
        if not self.cache_file:
            return False
        try:
            directory = os.path.dirname(self.cache_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.cache_file, "w", encoding="utf-8") as f:
                json.dump({"meta": self.meta, "contexts": self._records}, f, ensure_ascii=False, indent=2)
            logger.info(f"CSI cache saved to {self.cache_file}")
            return True
        except Exception as e:
            logger.error(f"Failed to save CSI cache {self.cache_file}: {e}", exc_info=True)
            return False

    def contexts(self, vars: Sequence[VariableSpec]) -> List[Context]:
        return [parse_context(text, vars) for text in self._records]


def discover_all(mdp, contexts: Iterable[Context], k1: int, k2: int, seed: int,
                 cache: Optional[CsiCache] = None, mode: Optional[str] = None) -> Dict[Context, CsiSet]:
    """CSIs for every context, reusing cached records; each context gets its own RNG stream."""
    out: Dict[Context, CsiSet] = {}
    learned = 0
    for ctx in contexts:
        cached = cache.get(ctx) if cache is not None else None
        if cached is not None:
            out[ctx] = cached
            continue
        out[ctx] = learn_csis_for_mdp(mdp, ctx, k1, k2, derive_rng(seed, "csi", ctx.text), mode=mode)
        learned += 1
        if cache is not None:
            cache.put(out[ctx])
    if cache is not None and learned:
        cache.save()
    logger.info(f"CSI discovery: {learned} learned, {len(out) - learned} from cache")
    return out
