"""First-order terms, substitutions and unification.

The term language is deliberately small: variables, signed integers,
lowercase symbols and compound terms.  Lists are ordinary compounds built
from the reserved cell functor ``'.'`` and the reserved empty-list functor
``'[]'`` so that the rest of the engine never special-cases them.
"""

from __future__ import annotations

import itertools
import sys
import threading
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Union

# ---------------------------------------------------------------------------
# Term representation
# ---------------------------------------------------------------------------

LIST_CELL = "."
LIST_NIL = "[]"


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __repr__(self) -> str:
        return f"Var({self.name})"


@dataclass(frozen=True, slots=True)
class Int:
    value: int

    def __repr__(self) -> str:
        return f"Int({self.value})"


@dataclass(frozen=True, slots=True)
class Sym:
    name: str

    def __repr__(self) -> str:
        return f"Sym({self.name})"


@dataclass(frozen=True, slots=True)
class Struct:
    functor: str
    args: "tuple[Term, ...]"

    def __repr__(self) -> str:
        return f"Struct({self.functor}/{len(self.args)})"


Term = Union[Var, Int, Sym, Struct]


@dataclass(frozen=True, slots=True)
class Atom:
    """A predicate applied to arguments.  0-ary predicates have args == ()."""

    pred: str
    args: "tuple[Term, ...]"

    @property
    def arity(self) -> int:
        return len(self.args)

    def key(self) -> "tuple[str, int]":
        return (self.pred, len(self.args))


@dataclass(frozen=True, slots=True)
class Clause:
    head: Atom
    body: "tuple[Atom, ...]"


def intern_name(name: str) -> str:
    # Interned names make the many string comparisons in unification cheap.
    return sys.intern(name)


def mk_sym(name: str) -> Sym:
    return Sym(intern_name(name))


def mk_struct(functor: str, args: "tuple[Term, ...]") -> Struct:
    return Struct(intern_name(functor), args)


def mk_list(items, tail: Term = Struct(LIST_NIL, ())) -> Term:
    """Build a list term from a Python iterable, optionally open-tailed."""
    out = tail
    for item in reversed(list(items)):
        out = Struct(LIST_CELL, (item, out))
    return out


NIL = Struct(LIST_NIL, ())


def list_parts(t: Term) -> "tuple[list[Term], Term]":
    """Split a (possibly improper) list term into (items, tail)."""
    items: list[Term] = []
    while isinstance(t, Struct) and t.functor == LIST_CELL and len(t.args) == 2:
        items.append(t.args[0])
        t = t.args[1]
    return items, t


def is_nil(t: Term) -> bool:
    return isinstance(t, Struct) and t.functor == LIST_NIL and not t.args


def proper_list_items(t: Term) -> "Optional[list[Term]]":
    items, tail = list_parts(t)
    return items if is_nil(tail) else None


# ---------------------------------------------------------------------------
# Substitutions
# ---------------------------------------------------------------------------


class Subst:
    """An immutable variable binding map.

    Bindings are triangular: a variable may be bound to a term containing
    further bound variables.  ``walk`` chases top-level variable chains and
    ``apply`` resolves a term fully so the result contains no bound variable
    (which is what makes application idempotent).
    """

    __slots__ = ("_m",)

    def __init__(self, m: Optional[dict] = None):
        self._m = m or {}

    def bind(self, name: str, term: Term) -> "Subst":
        m = dict(self._m)
        m[name] = term
        return Subst(m)

    def get(self, name: str) -> Optional[Term]:
        return self._m.get(name)

    def __len__(self) -> int:
        return len(self._m)

    def __contains__(self, name: str) -> bool:
        return name in self._m

    def items(self):
        return self._m.items()

    def walk(self, t: Term) -> Term:
        while isinstance(t, Var):
            nxt = self._m.get(t.name)
            if nxt is None:
                return t
            t = nxt
        return t

    def apply(self, t: Term) -> Term:
        t = self.walk(t)
        if isinstance(t, Struct) and t.args:
            return Struct(t.functor, tuple(self.apply(a) for a in t.args))
        return t

    def apply_atom(self, a: Atom) -> Atom:
        return Atom(a.pred, tuple(self.apply(t) for t in a.args))

    def apply_clause(self, c: Clause) -> Clause:
        return Clause(self.apply_atom(c.head), tuple(self.apply_atom(b) for b in c.body))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={print_term(v)}" for k, v in sorted(self._m.items()))
        return f"Subst({inner})"


EMPTY_SUBST = Subst()


# ---------------------------------------------------------------------------
# Unification
# ---------------------------------------------------------------------------


def occurs(name: str, t: Term, s: Subst) -> bool:
    t = s.walk(t)
    if isinstance(t, Var):
        return t.name == name
    if isinstance(t, Struct):
        return any(occurs(name, a, s) for a in t.args)
    return False


def unify(t1: Term, t2: Term, s: Subst = EMPTY_SUBST, occurs_check: bool = True) -> Optional[Subst]:
    """Most general unifier of t1 and t2 under s, or None.

    The occurs check is on by default; callers that have already renamed
    apart and want the speed can disable it explicitly.
    """
    stack = [(t1, t2)]
    while stack:
        a, b = stack.pop()
        a = s.walk(a)
        b = s.walk(b)
        if a is b:
            continue
        if isinstance(a, Var):
            if isinstance(b, Var) and b.name == a.name:
                continue
            if occurs_check and occurs(a.name, b, s):
                return None
            s = s.bind(a.name, b)
        elif isinstance(b, Var):
            if occurs_check and occurs(b.name, a, s):
                return None
            s = s.bind(b.name, a)
        elif isinstance(a, Int) and isinstance(b, Int):
            if a.value != b.value:
                return None
        elif isinstance(a, Sym) and isinstance(b, Sym):
            if a.name != b.name:
                return None
        elif isinstance(a, Struct) and isinstance(b, Struct):
            if a.functor != b.functor or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
        else:
            return None
    return s


def unify_atoms(a1: Atom, a2: Atom, s: Subst = EMPTY_SUBST, occurs_check: bool = True) -> Optional[Subst]:
    if a1.pred != a2.pred or len(a1.args) != len(a2.args):
        return None
    for x, y in zip(a1.args, a2.args):
        nxt = unify(x, y, s, occurs_check)
        if nxt is None:
            return None
        s = nxt
    return s


# ---------------------------------------------------------------------------
# Fresh variable renaming
# ---------------------------------------------------------------------------

_fresh_counter = itertools.count(1)
_fresh_lock = threading.Lock()


def fresh_name(hint: str = "G") -> str:
    # The counter is global and never reused, so renamed clauses can never
    # collide with each other even across threads.
    with _fresh_lock:
        n = next(_fresh_counter)
    return f"_{hint}{n}"


def term_vars(t: Term, acc: Optional[list] = None) -> "list[str]":
    """Variable names in t, in first-occurrence order."""
    if acc is None:
        acc = []
    if isinstance(t, Var):
        if t.name not in acc:
            acc.append(t.name)
    elif isinstance(t, Struct):
        for a in t.args:
            term_vars(a, acc)
    return acc


def clause_vars(c: Clause) -> "list[str]":
    acc: list[str] = []
    for t in c.head.args:
        term_vars(t, acc)
    for b in c.body:
        for t in b.args:
            term_vars(t, acc)
    return acc


def rename_term(t: Term, mapping: Mapping[str, str]) -> Term:
    if isinstance(t, Var):
        return Var(mapping.get(t.name, t.name))
    if isinstance(t, Struct) and t.args:
        return Struct(t.functor, tuple(rename_term(a, mapping) for a in t.args))
    return t


def rename_apart(c: Clause) -> Clause:
    """Copy a clause with every variable replaced by a globally fresh one."""
    mapping = {v: fresh_name() for v in clause_vars(c)}
    head = Atom(c.head.pred, tuple(rename_term(t, mapping) for t in c.head.args))
    body = tuple(Atom(b.pred, tuple(rename_term(t, mapping) for t in b.args)) for b in c.body)
    return Clause(head, body)


# ---------------------------------------------------------------------------
# Printing (canonical text form; parse . print is the identity)
# ---------------------------------------------------------------------------


def print_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Int):
        return str(t.value)
    if isinstance(t, Sym):
        return t.name
    if isinstance(t, Struct):
        if t.functor == LIST_NIL and not t.args:
            return "[]"
        if t.functor == LIST_CELL and len(t.args) == 2:
            items, tail = list_parts(t)
            inner = ",".join(print_term(i) for i in items)
            if is_nil(tail):
                return f"[{inner}]"
            return f"[{inner}|{print_term(tail)}]"
        inner = ",".join(print_term(a) for a in t.args)
        return f"{t.functor}({inner})"
    raise TypeError(f"not a term: {t!r}")


def print_atom(a: Atom) -> str:
    if not a.args:
        return a.pred
    return f"{a.pred}({','.join(print_term(t) for t in a.args)})"


def print_clause(c: Clause) -> str:
    if not c.body:
        return f"{print_atom(c.head)}."
    return f"{print_atom(c.head)} :- {', '.join(print_atom(b) for b in c.body)}."


def pretty_clause(c: Clause) -> str:
    """Clause text with variables normalised to A, B, C, ... per clause."""
    names = clause_vars(c)
    mapping = {}
    for i, n in enumerate(names):
        if i < 26:
            mapping[n] = chr(ord("A") + i)
        else:
            mapping[n] = f"V{i}"
    head = Atom(c.head.pred, tuple(rename_term(t, mapping) for t in c.head.args))
    body = tuple(Atom(b.pred, tuple(rename_term(t, mapping) for t in b.args)) for b in c.body)
    return print_clause(Clause(head, body))


def iter_subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, Struct):
        for a in t.args:
            yield from iter_subterms(a)
