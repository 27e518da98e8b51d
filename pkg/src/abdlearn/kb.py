"""Knowledge base and depth-limited SLD resolution.

The deductive engine is a plain depth-first resolution prover over definite
clauses plus a small table of native builtins (list permutation and integer
comparison; the clause text format stays free of host conveniences).
"""

from __future__ import annotations

import itertools
import sys
import time
from typing import Callable, Iterable, Iterator, Optional

from .parser import parse_program
from .terms import (
    Atom,
    Clause,
    Int,
    Struct,
    Subst,
    Term,
    Var,
    mk_list,
    proper_list_items,
    rename_apart,
    unify,
    unify_atoms,
)

DEFAULT_DEPTH_LIMIT = 512

BuiltinFn = Callable[[tuple, Subst], Iterable[Subst]]


class KBError(ValueError):
    pass


class Budget:
    """Mutable search-resource accounting shared across one query or search.

    nodes counts resolution steps, solver_nodes/solver_leaves count
    finite-domain branching work.  depth_hits records how often a branch was
    cut by the depth limit, which is what distinguishes "finitely failed"
    from "ran out of resources".
    """

    __slots__ = (
        "max_nodes",
        "deadline",
        "nodes",
        "depth_hits",
        "solver_nodes",
        "solver_leaves",
        "exhausted",
    )

    def __init__(self, max_nodes: Optional[int] = None, wall_ms: Optional[float] = None):
        self.max_nodes = max_nodes
        self.deadline = (time.monotonic() + wall_ms / 1000.0) if wall_ms else None
        self.nodes = 0
        self.depth_hits = 0
        self.solver_nodes = 0
        self.solver_leaves = 0
        self.exhausted = False

    def tick(self) -> bool:
        self.nodes += 1
        if self.max_nodes is not None and self.nodes > self.max_nodes:
            self.exhausted = True
            return False
        if self.deadline is not None and self.nodes % 256 == 0 and time.monotonic() > self.deadline:
            self.exhausted = True
            return False
        return True

    def ok(self) -> bool:
        if self.exhausted:
            return False
        if self.deadline is not None and time.monotonic() > self.deadline:
            self.exhausted = True
            return False
        return True


class KnowledgeBase:
    """Clauses indexed by (predicate, arity) plus native builtins."""

    def __init__(self):
        self.clauses: dict[tuple[str, int], list[Clause]] = {}
        self.builtins: dict[tuple[str, int], BuiltinFn] = {}

    def copy(self) -> "KnowledgeBase":
        out = KnowledgeBase()
        out.clauses = {k: list(v) for k, v in self.clauses.items()}
        out.builtins = dict(self.builtins)
        return out

    def add_clause(self, c: Clause) -> None:
        key = c.head.key()
        if key in self.builtins:
            raise KBError(f"clause for {key[0]}/{key[1]} would override a builtin")
        self.clauses.setdefault(key, []).append(c)

    def add_text(self, text: str) -> None:
        for c in parse_program(text):
            self.add_clause(c)

    def add_builtin(self, name: str, arity: int, fn: BuiltinFn) -> None:
        key = (name, arity)
        if key in self.clauses:
            raise KBError(f"builtin {name}/{arity} would shadow existing clauses")
        self.builtins[key] = fn

    def defines(self, key: tuple) -> bool:
        return key in self.clauses or key in self.builtins

    def predicates(self) -> "set[tuple[str, int]]":
        return set(self.clauses) | set(self.builtins)


def kb_from_text(text: str) -> KnowledgeBase:
    kb = KnowledgeBase()
    kb.add_text(text)
    return kb


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------


def _bi_permutation(args: tuple, s: Subst) -> Iterator[Subst]:
    """permutation(L, P): P ranges over permutations of the proper list L."""
    items = proper_list_items(s.apply(args[0]))
    if items is None:
        return
    for perm in itertools.permutations(items):
        s2 = unify(args[1], mk_list(perm), s)
        if s2 is not None:
            yield s2


def _bi_permute(args: tuple, s: Subst) -> Iterator[Subst]:
    """permute(L, Order, Out): Out[Order[i]] = L[i], Order a 1-based ranking.

    With Order ground this is deterministic placement; with Order unbound it
    enumerates all rankings of 1..len(L) in lexicographic order.
    """
    items = proper_list_items(s.apply(args[0]))
    if items is None:
        return
    n = len(items)
    order_t = s.apply(args[1])
    order_items = proper_list_items(order_t)

    def place(order: "list[int]") -> Optional[list]:
        out: list = [None] * n
        for item, pos in zip(items, order):
            if not 1 <= pos <= n or out[pos - 1] is not None:
                return None
            out[pos - 1] = item
        return out

    if order_items is not None and all(isinstance(t, Int) for t in order_items):
        if len(order_items) != n:
            return
        out = place([t.value for t in order_items])
        if out is None:
            return
        s2 = unify(args[2], mk_list(out), s)
        if s2 is not None:
            yield s2
        return
    for perm in itertools.permutations(range(1, n + 1)):
        out = place(list(perm))
        assert out is not None
        s2 = unify(args[1], mk_list([Int(p) for p in perm]), s)
        if s2 is None:
            continue
        s3 = unify(args[2], mk_list(out), s2)
        if s3 is not None:
            yield s3


def _bi_geq(args: tuple, s: Subst) -> Iterator[Subst]:
    a, b = s.apply(args[0]), s.apply(args[1])
    if isinstance(a, Int) and isinstance(b, Int) and a.value >= b.value:
        yield s


def standard_builtins() -> "dict[tuple[str, int], BuiltinFn]":
    return {
        ("permutation", 2): _bi_permutation,
        ("permute", 3): _bi_permute,
        ("geq", 2): _bi_geq,
    }


def standard_kb(text: str = "") -> KnowledgeBase:
    kb = KnowledgeBase()
    for (name, arity), fn in standard_builtins().items():
        kb.add_builtin(name, arity, fn)
    if text:
        kb.add_text(text)
    return kb


# ---------------------------------------------------------------------------
# Deduction
# ---------------------------------------------------------------------------


def deduce(
    goal: "Atom | list[Atom]",
    kb: KnowledgeBase,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    budget: Optional[Budget] = None,
    occurs_check: bool = True,
) -> Iterator[Subst]:
    """Solve goal(s) against kb, yielding solutions projected to goal vars.

    Solutions come in depth-first clause order.  When a branch is cut by
    depth_limit the budget's depth_hits counter is bumped, so an empty
    stream with depth_hits == 0 means finite failure while depth_hits > 0
    means the search was truncated.
    """
    goals = [goal] if isinstance(goal, Atom) else list(goal)
    if budget is None:
        budget = Budget()
    goal_vars: list[str] = []
    for g in goals:
        for t in g.args:
            _collect_vars(t, goal_vars)

    # generator frames stack with proof depth; long lists need headroom
    if sys.getrecursionlimit() < 20000:
        sys.setrecursionlimit(20000)
    for s in _solve(goals, Subst(), depth_limit, kb, budget, occurs_check):
        yield _project(s, goal_vars)


def _collect_vars(t: Term, acc: "list[str]") -> None:
    if isinstance(t, Var):
        if t.name not in acc:
            acc.append(t.name)
    elif isinstance(t, Struct):
        for a in t.args:
            _collect_vars(a, acc)


def _project(s: Subst, names: "list[str]") -> Subst:
    out = Subst()
    for n in names:
        v = s.apply(Var(n))
        if not (isinstance(v, Var) and v.name == n):
            out = out.bind(n, v)
    return out


def _solve(
    goals: "list[Atom]",
    s: Subst,
    depth: int,
    kb: KnowledgeBase,
    budget: Budget,
    occurs_check: bool,
) -> Iterator[Subst]:
    if not goals:
        yield s
        return
    if not budget.tick():
        return
    if depth <= 0:
        budget.depth_hits += 1
        return
    goal, rest = goals[0], goals[1:]
    key = goal.key()
    bi = kb.builtins.get(key)
    if bi is not None:
        for s2 in bi(goal.args, s):
            yield from _solve(rest, s2, depth - 1, kb, budget, occurs_check)
        return
    for clause in kb.clauses.get(key, ()):
        c = rename_apart(clause)
        s2 = unify_atoms(goal, c.head, s, occurs_check)
        if s2 is None:
            continue
        yield from _solve(list(c.body) + rest, s2, depth - 1, kb, budget, occurs_check)
