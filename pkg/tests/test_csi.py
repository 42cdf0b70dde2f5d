import itertools

import numpy as np
import pytest

from CampPlanner.contexts import DISJUNCTION, Atom, Context, generate_contexts
from CampPlanner.core import ACTION, STATE, Assignment, ContextError, FactoredMdp, VariableSpec, enumerate_assignments
from CampPlanner.csi import (EXACT, SAMPLING, CsiCache, CsiSet, discover_all, learn_csis, learn_csis_for_mdp,
                             sample_in_context)


def _random_factored_mdp(seed):
    """Binary X0..X2 and a ternary action U; each X_i' reads a random parent subset."""
    rng = np.random.default_rng(seed)
    state_vars = tuple(VariableSpec(f"X{i}", STATE, (0, 1)) for i in range(3))
    action_vars = (VariableSpec("U", ACTION, (0, 1, 2)),)
    names = [v.name for v in state_vars + action_vars]
    cpts = {}
    for v in state_vars:
        parents = tuple(n for n in names if rng.random() < 0.5)
        sizes = [3 if n == "U" else 2 for n in parents]
        table = {combo: float(rng.uniform(0.05, 0.95)) for combo in itertools.product(*[range(k) for k in sizes])}
        cpts[v.name] = (parents, table)

    def marginals(s, a):
        values = {**s, **a}
        out = {}
        for name, (parents, table) in cpts.items():
            p = table[tuple(values[n] for n in parents)]
            out[name] = {1: p, 0: 1.0 - p}
        return out

    def transition(s, a, rng=None):
        m = marginals(s, a)
        return Assignment({n: int(rng.random() < m[n][1]) if rng is not None else int(m[n][1] >= 0.5) for n in m})

    mdp = FactoredMdp(state_vars, action_vars, transition, lambda s: float(s["X0"]), frozenset({"X0"}),
                      transition_marginals=marginals, name=f"random-{seed}")
    return mdp


def _oracle(mdp, ctx):
    """Pairs never shown dependent by exhaustive perturbation inside the context."""
    free = [v for v in mdp.variables if v.name not in ctx.variables]
    targets = [v.name for v in free if v.kind == STATE]
    independent = {(src.name, t) for src in free for t in targets}
    for u in enumerate_assignments(mdp.variables):
        if not ctx.holds(u):
            continue
        s, a = u.restrict(mdp.state_names), u.restrict(mdp.action_names)
        base = mdp.successor_marginals(s, a)
        for src in free:
            for value in src.domain:
                if value == u[src.name]:
                    continue
                v = u.updated({src.name: value})
                other = mdp.successor_marginals(v.restrict(mdp.state_names), v.restrict(mdp.action_names))
                for t in targets:
                    if any(abs(base[t].get(k, 0.0) - other[t].get(k, 0.0)) > 1e-9 for k in (0, 1)):
                        independent.discard((src.name, t))
    return independent


def test_constant_transition_makes_every_pair_independent():
    specs = [VariableSpec("a", STATE, (0, 1)), VariableSpec("b", STATE, (0, 1, 2)), VariableSpec("u", ACTION, (0, 1))]
    fixed = Assignment({"a": 0, "b": 2})
    csis = learn_csis(specs, lambda s, a, rng=None: fixed, Context.universal(), 100, 4,
                      np.random.default_rng(0), marginals=lambda s, a: {"a": {0: 1.0}, "b": {2: 1.0}})
    expected = {(src, tgt) for src in ("a", "b", "u") for tgt in ("a", "b")}
    assert csis.independent_pairs == expected


def test_context_induces_independence(diagram_mdp):
    rng = np.random.default_rng(0)
    universal = learn_csis_for_mdp(diagram_mdp, Context.universal(), 1000, 4, rng)
    idle = learn_csis_for_mdp(diagram_mdp, Context.literal("A1", 0), 1000, 4, rng)
    assert not universal.is_independent("S2", "S1")
    assert idle.is_independent("S2", "S1")
    assert not idle.is_independent("S1", "S1")


def test_diagram_csis_under_universal_context(diagram_mdp):
    csis = learn_csis_for_mdp(diagram_mdp, Context.universal(), 1000, 4, np.random.default_rng(0))
    dependent = {("S1", "S1"), ("S2", "S1"), ("A1", "S1"), ("S2", "S2"), ("S3", "S2"), ("A2", "S3")}
    every = {(src, tgt) for src in ("S1", "S2", "S3", "A1", "A2") for tgt in ("S1", "S2", "S3")}
    assert csis.independent_pairs == every - dependent


def test_context_variables_never_appear_in_pairs(diagram_mdp):
    ctx = Context.literal("S2", 1)
    csis = learn_csis_for_mdp(diagram_mdp, ctx, 1000, 4, np.random.default_rng(0))
    assert all("S2" not in pair for pair in csis.independent_pairs)
    with pytest.raises(ContextError):
        CsiSet(ctx, frozenset({("S2", "S1")}))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_exact_mode_matches_exhaustive_oracle(seed):
    mdp = _random_factored_mdp(seed)
    specs = list(mdp.variables)
    for ctx in generate_contexts(specs, max_len=1, domain_size_threshold=4)[:6]:
        csis = learn_csis_for_mdp(mdp, ctx, 1000, 4, np.random.default_rng(seed), mode=EXACT)
        assert set(csis.independent_pairs) == _oracle(mdp, ctx), ctx.text


def test_sampling_mode_finds_strong_dependencies(diagram_mdp):
    csis = learn_csis_for_mdp(diagram_mdp, Context.universal(), 1000, 4, np.random.default_rng(0),
                              mode=SAMPLING, n_samples=400)
    assert not csis.is_independent("A2", "S3")
    assert not csis.is_independent("S3", "S2")
    assert csis.is_independent("S1", "S3")


def test_disjunction_sampling_stays_inside_context():
    specs = [VariableSpec("room", STATE, (0, 1, 2, 3))]
    specs += [VariableSpec(f"b{i}", STATE, (0, 1)) for i in range(10)]
    ctx = Context(DISJUNCTION, [Atom("room", 0), Atom("room", 1)])
    samples = sample_in_context(specs, ctx, 50, np.random.default_rng(0))
    assert len(samples) == 50
    assert {s["room"] for s in samples} <= {0, 1}


def test_small_domains_are_enumerated():
    specs = [VariableSpec("a", STATE, (0, 1)), VariableSpec("u", ACTION, (0, 1))]
    samples = sample_in_context(specs, Context.literal("a", 1), 100, np.random.default_rng(0))
    assert sorted((s["a"], s["u"]) for s in samples) == [(1, 0), (1, 1)]


def test_sampling_respects_validity_predicate():
    specs = [VariableSpec(f"b{i}", STATE, (0, 1)) for i in range(12)]
    samples = sample_in_context(specs, Context.universal(), 30, np.random.default_rng(0),
                                valid=lambda u: u["b0"] == 0)
    assert samples and all(s["b0"] == 0 for s in samples)


def test_unsatisfiable_context_raises():
    specs = [VariableSpec("a", STATE, (0,))]
    with pytest.raises(ContextError):
        sample_in_context(specs, Context.literal("a", 0, negated=True), 10, np.random.default_rng(0))


def test_cache_round_trip(tmp_path, diagram_mdp):
    path = str(tmp_path / "csi.json")
    contexts = [Context.universal(), Context.literal("S2", 1)]
    cache = CsiCache(path, meta={"k1": 1000, "k2": 4})
    first = discover_all(diagram_mdp, contexts, 1000, 4, seed=0, cache=cache)
    reloaded = CsiCache(path, meta={"k1": 1000, "k2": 4})
    assert len(reloaded) == 2
    assert Context.literal("S2", 1) in reloaded
    assert reloaded.contexts(list(diagram_mdp.variables)) == contexts
    for ctx in contexts:
        assert reloaded.get(ctx) == first[ctx]
    assert discover_all(diagram_mdp, contexts, 1000, 4, seed=0, cache=reloaded) == first


def test_cache_with_other_budget_is_ignored(tmp_path):
    path = str(tmp_path / "csi.json")
    cache = CsiCache(path, meta={"k1": 10})
    cache.put(CsiSet(Context.universal(), frozenset({("a", "b")})))
    assert cache.save()
    assert len(CsiCache(path, meta={"k1": 20})) == 0
    assert len(CsiCache(path, meta={"k1": 10})) == 1
