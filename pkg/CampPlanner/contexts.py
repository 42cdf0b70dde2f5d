"""
Contexts: formulas over discrete variables that an agent may impose on itself.
Includes membership testing, the canonical text form and candidate generation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core import ContextError, VariableSpec, enumerate_assignments

logger = logging.getLogger(__name__)

UNIVERSAL = "universal"
LITERAL = "literal"
CONJUNCTION = "conjunction"
DISJUNCTION = "disjunction"
SHAPES = (UNIVERSAL, LITERAL, CONJUNCTION, DISJUNCTION)

_PREFIX = {CONJUNCTION: "AND", DISJUNCTION: "OR"}


@dataclass(frozen=True)
class Atom:
    variable: str
    value: Any
    negated: bool = False

    def holds(self, values: Mapping[str, Any]) -> bool:
        return (values[self.variable] == self.value) != self.negated

    @property
    def text(self) -> str:
        body = f"{self.variable}={self.value}"
        return f"NOT({body})" if self.negated else body


class Context:
    """A context (C, allowed assignments) expressed as a formula over atoms.

    Equality is atom-set equality within a shape.
    """

    __slots__ = ("shape", "atoms", "_key")

    def __init__(self, shape: str, atoms: Iterable[Atom] = (), max_len: Optional[int] = None):
        atoms = tuple(atoms)
        if shape not in SHAPES:
            raise ContextError(f"unknown context shape {shape!r}")
        if (shape == UNIVERSAL) != (len(atoms) == 0):
            raise ContextError("only the universal context has no atoms")
        if shape == LITERAL and len(atoms) != 1:
            raise ContextError("a literal context has exactly one atom")
        if shape == CONJUNCTION and len({a.variable for a in atoms}) != len(atoms):
            raise ContextError("conjunction atoms must reference distinct variables")
        if max_len is not None and len(atoms) > max_len:
            raise ContextError(f"context longer than {max_len} atoms")
        self.shape = shape
        self.atoms = atoms
        self._key = (shape, frozenset(atoms))

    @classmethod
    def universal(cls) -> "Context":
        return cls(UNIVERSAL)

    @classmethod
    def literal(cls, variable: str, value: Any, negated: bool = False) -> "Context":
        return cls(LITERAL, [Atom(variable, value, negated)])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Context) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"Context({self.text})"

    @property
    def variables(self) -> FrozenSet[str]:
        return frozenset(a.variable for a in self.atoms)

    @property
    def is_universal(self) -> bool:
        return self.shape == UNIVERSAL

    @property
    def text(self) -> str:
        if self.shape == UNIVERSAL:
            return "TRUE"
        if self.shape == LITERAL:
            return self.atoms[0].text
        return f"{_PREFIX[self.shape]}({','.join(a.text for a in self.atoms)})"

    def holds(self, values: Mapping[str, Any]) -> bool:
        if self.shape == UNIVERSAL:
            return True
        if self.shape == DISJUNCTION:
            return any(a.holds(values) for a in self.atoms)
        return all(a.holds(values) for a in self.atoms)


def in_context(ctx: Context, s: Mapping[str, Any], a: Mapping[str, Any]) -> bool:
    """True iff the joint assignment of (s, a) to the context's variables is allowed."""
    if ctx.is_universal:
        return True
    values = {}
    for name in ctx.variables:
        values[name] = s[name] if name in s else a[name]
    return ctx.holds(values)


def is_satisfiable(ctx: Context, specs: Sequence[VariableSpec]) -> bool:
    """Checks by enumeration over the domains of the context's variables."""
    if ctx.is_universal:
        return True
    by_name = {v.name: v for v in specs}
    missing = ctx.variables - set(by_name)
    if missing:
        raise ContextError(f"context {ctx.text} references undeclared variables {sorted(missing)}")
    involved = [by_name[n] for n in sorted(ctx.variables)]
    return any(ctx.holds(values) for values in enumerate_assignments(involved))


def truth_table(ctx: Context, specs: Sequence[VariableSpec]) -> Tuple[Tuple[str, ...], Tuple[bool, ...]]:
    """The context's variable names and its truth value on every joint assignment of them."""
    by_name = {v.name: v for v in specs}
    names = tuple(sorted(ctx.variables))
    return names, tuple(ctx.holds(values) for values in enumerate_assignments([by_name[n] for n in names]))


def _atoms_for(specs: Sequence[VariableSpec]) -> List[Atom]:
    atoms = []
    for spec in sorted(specs, key=lambda v: v.name):
        for value in sorted(spec.domain, key=str):
            for negated in (False, True):
                atoms.append(Atom(spec.name, value, negated))
    return atoms


def generate_contexts(vars: Sequence[VariableSpec], max_len: int, domain_size_threshold: int,
                      shapes: Sequence[str] = (LITERAL, CONJUNCTION, DISJUNCTION),
                      distinct_only: bool = False) -> List[Context]:
    """Candidate context space, universal first.

    Variables whose domain size exceeds `domain_size_threshold` are not eligible.
    Order: literals, then per length conjunctions and disjunctions, atoms
    sorted by variable name, then value text, positive before negated.
    With `distinct_only` a context is skipped when it holds everywhere or
    allows exactly the assignments of an earlier context over the same
    variables, e.g. OR(V=0,NOT(V=1)) after V=0.
    """
    if max_len < 1:
        raise ContextError("max_len must be at least 1")
    if domain_size_threshold < 1:
        raise ContextError("domain_size_threshold must be at least 1")
    eligible = [v for v in vars if v.size <= domain_size_threshold]
    skipped = [v.name for v in vars if v.size > domain_size_threshold]
    if skipped:
        logger.debug(f"Variables excluded from contexts by domain size: {skipped}")

    contexts: List[Context] = [Context.universal()]
    seen = {contexts[0]}
    tables = set()

    def _add(ctx: Context) -> None:
        if ctx in seen or not is_satisfiable(ctx, eligible):
            return
        if distinct_only:
            table = truth_table(ctx, eligible)
            if all(table[1]) or table in tables:
                return
            tables.add(table)
        seen.add(ctx)
        contexts.append(ctx)

    atoms = _atoms_for(eligible)
    if LITERAL in shapes:
        for atom in atoms:
            _add(Context(LITERAL, [atom]))
    for length in range(2, max_len + 1):
        for shape in (CONJUNCTION, DISJUNCTION):
            if shape not in shapes:
                continue
            for combo in itertools.combinations(atoms, length):
                if shape == CONJUNCTION and len({a.variable for a in combo}) != length:
                    continue
                _add(Context(shape, combo))
    logger.info(f"Generated {len(contexts)} contexts over {len(eligible)} eligible variables (max_len={max_len})")
    return contexts


def _split_top_level(body: str) -> List[str]:
    parts, depth, current = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


def _parse_atom(text: str, by_name: Dict[str, VariableSpec]) -> Atom:
    negated = text.startswith("NOT(") and text.endswith(")")
    if negated:
        text = text[4:-1]
    name, _, raw = text.partition("=")
    if name not in by_name:
        raise ContextError(f"unknown variable {name!r} in context text")
    for value in by_name[name].domain:
        if str(value) == raw:
            return Atom(name, value, negated)
    raise ContextError(f"value {raw!r} is not in the domain of {name!r}")


def parse_context(text: str, vars: Sequence[VariableSpec]) -> Context:
    """Inverse of Context.text, resolving values against the declared domains."""
    text = text.strip()
    if text == "TRUE":
        return Context.universal()
    by_name = {v.name: v for v in vars}
    for shape, prefix in _PREFIX.items():
        if text.startswith(prefix + "(") and text.endswith(")"):
            inner = text[len(prefix) + 1:-1]
            return Context(shape, [_parse_atom(part, by_name) for part in _split_top_level(inner)])
    return Context(LITERAL, [_parse_atom(text, by_name)])
