import pytest

from CampPlanner.contexts import (CONJUNCTION, DISJUNCTION, LITERAL, UNIVERSAL, Atom, Context,
                                  generate_contexts, in_context, is_satisfiable, parse_context)
from CampPlanner.core import ACTION, STATE, ContextError, VariableSpec


V1 = VariableSpec("V1", STATE, (0, 1))
V2 = VariableSpec("V2", STATE, (0, 1, 2))
ROOM = VariableSpec("room", STATE, (0, 1, 2, 3))
MOVE = VariableSpec("move", ACTION, ("none", "up"))


def test_literal_space_size_and_order():
    contexts = generate_contexts([V1, V2], max_len=1, domain_size_threshold=4)
    assert len(contexts) == 11
    assert contexts[0].is_universal
    assert all(c.shape == LITERAL for c in contexts[1:])
    assert [c.text for c in contexts[1:5]] == ["V1=0", "NOT(V1=0)", "V1=1", "NOT(V1=1)"]


def test_no_variables_gives_universal_only():
    assert generate_contexts([], max_len=2, domain_size_threshold=4) == [Context.universal()]


def test_large_domains_are_excluded():
    big = VariableSpec("big", STATE, tuple(range(10)))
    assert generate_contexts([big], max_len=2, domain_size_threshold=4) == [Context.universal()]


def test_length_two_adds_conjunctions_then_disjunctions():
    contexts = generate_contexts([V1, V2], max_len=2, domain_size_threshold=4)
    shapes = [c.shape for c in contexts]
    assert shapes[0] == UNIVERSAL
    first_conj = shapes.index(CONJUNCTION)
    first_disj = shapes.index(DISJUNCTION)
    assert all(s == LITERAL for s in shapes[1:first_conj])
    assert first_conj < first_disj
    assert all(s == DISJUNCTION for s in shapes[first_disj:])
    assert len(set(contexts)) == len(contexts)
    for c in contexts:
        if c.shape == CONJUNCTION:
            assert len(c.variables) == 2


def test_atom_values_are_ordered_by_text():
    shuffled = VariableSpec("dish", STATE, ("steak", "ramen", "sandwich"))
    texts = [c.text for c in generate_contexts([shuffled], max_len=1, domain_size_threshold=4)[1:]]
    assert texts == ["dish=ramen", "NOT(dish=ramen)", "dish=sandwich", "NOT(dish=sandwich)",
                     "dish=steak", "NOT(dish=steak)"]


def test_distinct_only_drops_equivalent_contexts():
    contexts = generate_contexts([ROOM], max_len=2, domain_size_threshold=4, distinct_only=True)
    assert len(contexts) == 1 + 8 + 6
    disjunctions = [c for c in contexts if c.shape == DISJUNCTION]
    assert all(not a.negated for c in disjunctions for a in c.atoms)
    assert disjunctions[0].text == "OR(room=0,room=1)"
    assert len(generate_contexts([ROOM], max_len=2, domain_size_threshold=4)) > len(contexts)
    binary = generate_contexts([V1], max_len=1, domain_size_threshold=4, distinct_only=True)
    assert [c.text for c in binary] == ["TRUE", "V1=0", "NOT(V1=0)"]


def test_shapes_filter():
    contexts = generate_contexts([V1], max_len=2, domain_size_threshold=4, shapes=(LITERAL,))
    assert {c.shape for c in contexts} == {UNIVERSAL, LITERAL}


def test_in_context_examples():
    not_room_two = Context.literal("room", 2, negated=True)
    assert in_context(not_room_two, {"room": 1}, {"move": "up"})
    assert not in_context(not_room_two, {"room": 2}, {"move": "up"})
    either = Context(DISJUNCTION, [Atom("room", 0), Atom("move", "none")])
    assert in_context(either, {"room": 3}, {"move": "none"})
    assert not in_context(either, {"room": 3}, {"move": "up"})
    assert in_context(Context.universal(), {}, {})


def test_conjunction_of_same_variable_is_rejected():
    with pytest.raises(ContextError):
        Context(CONJUNCTION, [Atom("V1", 0), Atom("V1", 1, True)])


def test_satisfiability_checks_declared_variables():
    assert is_satisfiable(Context.literal("V1", 0), [V1])
    with pytest.raises(ContextError):
        is_satisfiable(Context.literal("missing", 0), [V1])


def test_context_equality_ignores_atom_order():
    a = Context(DISJUNCTION, [Atom("V1", 0), Atom("V2", 2)])
    b = Context(DISJUNCTION, [Atom("V2", 2), Atom("V1", 0)])
    assert a == b
    assert hash(a) == hash(b)
    assert a != Context(CONJUNCTION, [Atom("V1", 0), Atom("V2", 2)])


def test_parse_context_inverts_text():
    specs = [V1, V2, ROOM, MOVE]
    for ctx in generate_contexts(specs, max_len=2, domain_size_threshold=4)[:40]:
        assert parse_context(ctx.text, specs) == ctx
    assert parse_context("NOT(move=up)", specs) == Context.literal("move", "up", negated=True)


def test_parse_context_rejects_unknown_values():
    with pytest.raises(ContextError):
        parse_context("V1=5", [V1])
    with pytest.raises(ContextError):
        parse_context("nope=1", [V1])
