"""Meta-interpretive induction with probabilistic abduction.

prove() is a meta-interpreter that handles each goal by one of four
alternatives, tried in this order:

  1. empty goal list: succeed, emitting the current program together with
     the assumptions made along the proof and their joint probability;
  2. deductive predicate (background clause or builtin): resolve, recurse;
  3. abducible predicate: record the assumption; arithmetic abducibles post
     a finite-domain constraint over the sequence items touched, the dyadic
     fact abducible multiplies the fact's probability into the running
     score and, under pruning, the branch is abandoned as soon as it can no
     longer beat the best completed proof;
  4. inducible predicate (the induction target or an invented symbol):
     reuse a recorded template instantiation, or, within the clause budget,
     bind a new one, inventing a fresh auxiliary symbol as a last resort.

induce() wraps prove() in an iterative-deepening search over program size
and scores every surviving candidate on the whole batch, where a program's
score is a simplicity prior times the per-example abduction probabilities.

Termination does not rely on iterative deepening alone: any call whose
predicate already occurs among its proper ancestors must strictly shrink
its first (list) argument, which rules out left recursion and non-reducing
loops while admitting the structural recursion the templates express.
"""

from __future__ import annotations

import math
import sys
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Protocol, Sequence, Union

from .fd import ConstraintStore, Labeling, _completion_exists, solve_best
from .kb import DEFAULT_DEPTH_LIMIT, Budget, KnowledgeBase
from .metarules import (
    MetaSub,
    Metarule,
    Program,
    materialize,
    metarule_library,
    program_clauses,
    program_text,
)
from .terms import (
    Atom,
    Int,
    Struct,
    Subst,
    Term,
    print_term,
    proper_list_items,
    rename_apart,
    unify,
    unify_atoms,
)

__all__ = [
    "Abducible",
    "Abduced",
    "AbductionResult",
    "ExampleLabeling",
    "ExactFacts",
    "FactOracle",
    "GoalExample",
    "Incumbent",
    "Induced",
    "InduceOutcome",
    "InductionSetting",
    "SearchBudget",
    "TableFacts",
    "entails",
    "fdv_term",
    "induce",
    "invent_symbol",
    "item_term",
    "log_prior",
    "prior",
    "prove",
    "score_example",
]


# ---------------------------------------------------------------------------
# Prior
# ---------------------------------------------------------------------------


def prior(n_clauses: int) -> float:
    """Simplicity prior over program sizes: 6 / (pi * n)^2.

    Normalized over n >= 1 (Basel series); undefined for n < 1.
    """
    if n_clauses < 1:
        raise ValueError(f"program size must be >= 1, got {n_clauses}")
    return 6.0 / (math.pi * n_clauses) ** 2


def log_prior(n_clauses: int) -> float:
    return math.log(prior(n_clauses))


def invent_symbol(base: str, taken: Iterable[str] = ()) -> str:
    """First base_i (i = 1, 2, ...) not already taken."""
    taken = set(taken)
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


# ---------------------------------------------------------------------------
# Fact oracles
# ---------------------------------------------------------------------------


class FactOracle(Protocol):
    """Probabilities the perception side assigns to abducible facts.

    Items are referred to by integer handles; what a handle denotes (an
    image, a feature vector) is the caller's business.
    """

    value_base: int

    def item_logweights(self, item: int) -> Sequence[float]:
        """Log-probability table over the item's possible values."""
        ...

    def pair_logprob(self, a: int, b: int) -> float:
        """Log-probability that the dyadic relation holds of (a, b)."""
        ...


class ExactFacts:
    """Oracle with certainty: known labels get probability 1."""

    def __init__(
        self,
        labels: Optional[dict] = None,
        n_values: int = 10,
        value_base: int = 0,
        pairs=None,
    ):
        self.labels = dict(labels or {})
        self.n_values = n_values
        self.value_base = value_base
        self._pairs = pairs

    def item_logweights(self, item: int) -> Sequence[float]:
        true = self.labels[item] - self.value_base
        return tuple(0.0 if v == true else -math.inf for v in range(self.n_values))

    def pair_logprob(self, a: int, b: int) -> float:
        if self._pairs is None:
            raise KeyError("no pair relation configured")
        truth = self._pairs(a, b) if callable(self._pairs) else self._pairs[(a, b)]
        return 0.0 if truth else -math.inf


class TableFacts:
    """Oracle backed by explicit probability tables (handy in tests)."""

    def __init__(self, tables: dict, value_base: int = 0, pairs: Optional[dict] = None):
        self.tables = {
            k: tuple(math.log(p) if p > 0.0 else -math.inf for p in tbl)
            for k, tbl in tables.items()
        }
        self.value_base = value_base
        self.pairs = pairs or {}

    def item_logweights(self, item: int) -> Sequence[float]:
        return self.tables[item]

    def pair_logprob(self, a: int, b: int) -> float:
        p = self.pairs[(a, b)]
        return math.log(p) if p > 0.0 else -math.inf


# ---------------------------------------------------------------------------
# Item handles inside terms
# ---------------------------------------------------------------------------

ITEM_F = "item"
FDV_F = "fdv"


def item_term(i: int) -> Struct:
    """Opaque handle for the i-th perceived item."""
    return Struct(ITEM_F, (Int(i),))


def fdv_term(vid: int) -> Struct:
    """Reference to a finite-domain variable inside a term."""
    return Struct(FDV_F, (Int(vid),))


def _item_id(t: Term) -> Optional[int]:
    if isinstance(t, Struct) and t.functor == ITEM_F and len(t.args) == 1:
        a = t.args[0]
        if isinstance(a, Int):
            return a.value
    return None


def _fdv_id(t: Term) -> Optional[int]:
    if isinstance(t, Struct) and t.functor == FDV_F and len(t.args) == 1:
        a = t.args[0]
        if isinstance(a, Int):
            return a.value
    return None


# ---------------------------------------------------------------------------
# Settings and budgets
# ---------------------------------------------------------------------------

ABD_ADD = "add"
ABD_MUL = "mul"
ABD_EQC = "eqc"
ABD_FACT = "fact"


@dataclass(frozen=True, slots=True)
class Abducible:
    """One abducible predicate.

    kind "add"/"mul": name(In, Out) where In = [X,Y|T]; posts X op Y = N
    over the store and binds Out = [N|T].
    kind "eqc": name(In, C) where In = [X] and C is a ground integer; pins
    X to C.  These three carry no probability of their own.
    kind "fact": name(In) where In = [X,Y|_]; assumes the dyadic relation
    of the first two items, weighted by the fact oracle.
    """

    name: str
    kind: str

    @property
    def arity(self) -> int:
        return 1 if self.kind == ABD_FACT else 2


class SettingError(ValueError):
    pass


@dataclass
class InductionSetting:
    """Everything the meta-interpreter may draw on for one task."""

    kb: KnowledgeBase
    metarules: "list[Metarule]"
    abducibles: "dict[tuple[str, int], Abducible]"
    target: "tuple[str, int]"
    body_pool: "list[tuple[str, int]]"
    max_invented: int = 1
    invent_base: Optional[str] = None
    library: dict = field(init=False)

    def __post_init__(self):
        self.library = metarule_library(self.metarules)
        kb_names = {n for n, _ in self.kb.predicates()}
        for (name, arity), spec in self.abducibles.items():
            if spec.name != name or spec.arity != arity:
                raise SettingError(f"abducible table key mismatch for {name}/{arity}")
            if name in kb_names:
                raise SettingError(f"abducible {name} collides with a deductive predicate")
        abd_names = {n for n, _ in self.abducibles}
        if self.target[0] in kb_names or self.target[0] in abd_names:
            raise SettingError(f"target {self.target[0]} collides with an existing predicate")
        for key in self.body_pool:
            if not (self.kb.defines(key) or key in self.abducibles or key == self.target):
                raise SettingError(f"body pool entry {key[0]}/{key[1]} is undefined")

    def taken_names(self) -> "set[str]":
        names = {n for n, _ in self.kb.predicates()}
        names.update(n for n, _ in self.abducibles)
        names.add(self.target[0])
        names.update(n for n, _ in self.body_pool)
        return names


@dataclass
class SearchBudget:
    max_clauses: int = 3
    depth_limit: int = DEFAULT_DEPTH_LIMIT
    max_nodes: Optional[int] = None
    wall_ms: Optional[float] = None
    solver_max_nodes: Optional[int] = None
    pruning: bool = True
    workers: int = 1

    def runtime(self) -> Budget:
        return Budget(self.max_nodes, self.wall_ms)


class Incumbent:
    """Monotone best-so-far score, safe to share across worker threads."""

    __slots__ = ("best", "_lock")

    def __init__(self, best: float = -math.inf):
        self.best = best
        self._lock = threading.Lock()

    def update(self, value: float) -> None:
        with self._lock:
            if value > self.best:
                self.best = value


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Abduced:
    kind: str  # "constraint" | "fact"
    text: str
    key: tuple = ()
    log_prob: float = 0.0


@dataclass(frozen=True, slots=True)
class AbductionResult:
    program: Program
    abduced: "tuple[Abduced, ...]"
    log_prob: float
    labeling: Optional[Labeling] = None
    item_vars: "tuple[tuple[int, int], ...]" = ()  # (item handle, store var)

    def item_assignment(self) -> "dict[int, int]":
        if self.labeling is None:
            return {}
        out = {}
        for item, vid in self.item_vars:
            if vid in self.labeling.assignment:
                out[item] = self.labeling.assignment[vid]
        return out


@dataclass(frozen=True, slots=True)
class GoalExample:
    goal: Atom
    positive: bool = True


@dataclass(frozen=True, slots=True)
class ExampleLabeling:
    """Most probable pseudo-labels for one example under a fixed program."""

    log_prob: float
    item_labels: "tuple[tuple[int, int], ...]" = ()
    pair_facts: "tuple[tuple[tuple, bool], ...]" = ()

    def items_dict(self) -> dict:
        return dict(self.item_labels)

    def pairs_dict(self) -> dict:
        return dict(self.pair_facts)


@dataclass(frozen=True, slots=True)
class Induced:
    program: Program
    labelings: "tuple[ExampleLabeling, ...]"
    log_score: float

    @property
    def score(self) -> float:
        return math.exp(self.log_score)


@dataclass(frozen=True, slots=True)
class InduceOutcome:
    induced: Optional[Induced]
    budget_exhausted: bool = False
    candidates_tried: int = 0


# ---------------------------------------------------------------------------
# Proof state
# ---------------------------------------------------------------------------


class _AbdState:
    """Constraint store plus the item -> store-variable map, copy-on-write."""

    __slots__ = ("store", "item_vars")

    def __init__(self, store: Optional[ConstraintStore] = None, item_vars: Optional[dict] = None):
        self.store = store
        self.item_vars = item_vars if item_vars is not None else {}

    def cloned(self) -> "_AbdState":
        return _AbdState(
            self.store.clone() if self.store is not None else ConstraintStore(),
            dict(self.item_vars),
        )


class _Ctx:
    __slots__ = (
        "setting",
        "facts",
        "budget",
        "runtime",
        "incumbent",
        "prune",
        "allow_new",
        "feasibility_only",
    )

    def __init__(self, setting, facts, budget, runtime, incumbent, prune, allow_new, feasibility_only):
        self.setting = setting
        self.facts = facts
        self.budget = budget
        self.runtime = runtime
        self.incumbent = incumbent
        self.prune = prune
        self.allow_new = allow_new
        self.feasibility_only = feasibility_only


def _arg1_size(g: Atom) -> Optional[int]:
    if not g.args:
        return None
    items = proper_list_items(g.args[0])
    return None if items is None else len(items)


def _descends(anc: tuple, pred: str, size: Optional[int]) -> bool:
    # Self-recursion must strictly shrink the first list argument.
    for p, sz in reversed(anc):
        if p == pred:
            return size is not None and sz is not None and size < sz
    return True


def _var_for(t: Term, ab: _AbdState, facts) -> Optional[int]:
    """Store variable for an item handle, integer literal, or fd reference."""
    iid = _item_id(t)
    if iid is not None:
        vid = ab.item_vars.get(iid)
        if vid is None:
            vid = ab.store.new_weighted_var(facts.item_logweights(iid), facts.value_base)
            ab.item_vars[iid] = vid
        return vid
    if isinstance(t, Int):
        return ab.store.new_derived_var(t.value, t.value)
    return _fdv_id(t)


def _first_two(t: Term):
    """Split a list term into (first, second, rest-after-second)."""
    if not (isinstance(t, Struct) and t.functor == "." and len(t.args) == 2):
        return None
    x, t1 = t.args
    if not (isinstance(t1, Struct) and t1.functor == "." and len(t1.args) == 2):
        return None
    y, t2 = t1.args
    return x, y, t2


def _solve(stack, s: Subst, prog: Program, ab: _AbdState, dlogp: float, abduced: tuple, ctx: _Ctx):
    """Yield (subst, program, abd-state, dyadic log prob, abduced) leaves."""
    if not stack:
        yield s, prog, ab, dlogp, abduced
        return
    (goal, anc, depth) = stack[0]
    rest = stack[1:]
    if not ctx.runtime.tick():
        return
    g = s.apply_atom(goal)
    if depth <= 0:
        ctx.runtime.depth_hits += 1
        return
    key = g.key()
    kb = ctx.setting.kb

    bi = kb.builtins.get(key)
    if bi is not None:
        for s2 in bi(g.args, s):
            yield from _solve(rest, s2, prog, ab, dlogp, abduced, ctx)
        return

    clauses = kb.clauses.get(key)
    if clauses is not None:
        size = _arg1_size(g)
        if not _descends(anc, g.pred, size):
            return
        anc2 = anc + ((g.pred, size),) if size is not None else anc
        for c in clauses:
            rc = rename_apart(c)
            s2 = unify_atoms(g, rc.head, s)
            if s2 is None:
                continue
            stack2 = tuple((b, anc2, depth - 1) for b in rc.body) + rest
            yield from _solve(stack2, s2, prog, ab, dlogp, abduced, ctx)
        return

    spec = ctx.setting.abducibles.get(key)
    if spec is not None:
        yield from _abduce(spec, g, rest, s, prog, ab, dlogp, abduced, ctx)
        return

    if g.pred == ctx.setting.target[0] or any(g.pred == n for n, _ in prog.invented):
        yield from _inducible(g, rest, anc, depth, s, prog, ab, dlogp, abduced, ctx)
    # Unknown predicate: finite failure.


def _abduce(spec: Abducible, g: Atom, rest, s, prog, ab, dlogp, abduced, ctx: _Ctx):
    if spec.kind == ABD_FACT:
        split = _first_two(g.args[0])
        if split is None:
            return
        x, y, _ = split
        ka, kb_ = _item_id(x), _item_id(y)
        if ka is None or kb_ is None:
            return
        fact_key = ("pair", ka, kb_)
        if any(a.key == fact_key for a in abduced):
            # Already assumed in this proof; consume it again for free.
            yield from _solve(rest, s, prog, ab, dlogp, abduced, ctx)
            return
        lp = ctx.facts.pair_logprob(ka, kb_)
        if lp == -math.inf:
            return
        nd = dlogp + lp
        if ctx.prune and ctx.incumbent is not None and nd <= ctx.incumbent.best:
            return
        item = Abduced("fact", f"{spec.name}({print_term(x)},{print_term(y)})", fact_key, lp)
        yield from _solve(rest, s, prog, ab, nd, abduced + (item,), ctx)
        return

    term_in, term_out = g.args
    if spec.kind == ABD_EQC:
        if not (isinstance(term_in, Struct) and term_in.functor == "." and len(term_in.args) == 2):
            return
        x, tail = term_in.args
        if proper_list_items(tail) != []:
            return
        if not isinstance(term_out, Int):
            return
        ab2 = ab.cloned()
        vx = _var_for(x, ab2, ctx.facts)
        if vx is None:
            return
        if not ab2.store.post_eq_const(vx, term_out.value):
            return
        item = Abduced("constraint", ab2.store.constraints[-1].text(ab2.store))
        yield from _solve(rest, s, prog, ab2, dlogp, abduced + (item,), ctx)
        return

    split = _first_two(term_in)
    if split is None:
        return
    x, y, t2 = split
    ab2 = ab.cloned()
    vx = _var_for(x, ab2, ctx.facts)
    vy = _var_for(y, ab2, ctx.facts)
    if vx is None or vy is None:
        return
    dx, dy = ab2.store.dom(vx), ab2.store.dom(vy)
    if spec.kind == ABD_ADD:
        lo, hi = dx.lo + dy.lo, dx.hi + dy.hi
    else:
        corners = (dx.lo * dy.lo, dx.lo * dy.hi, dx.hi * dy.lo, dx.hi * dy.hi)
        lo, hi = min(corners), max(corners)
    vz = ab2.store.new_derived_var(lo, hi)
    posted = ab2.store.post_add(vx, vy, vz) if spec.kind == ABD_ADD else ab2.store.post_mul(vx, vy, vz)
    if not posted:
        return
    s2 = unify(term_out, Struct(".", (fdv_term(vz), t2)), s)
    if s2 is None:
        return
    item = Abduced("constraint", ab2.store.constraints[-1].text(ab2.store))
    yield from _solve(rest, s2, prog, ab2, dlogp, abduced + (item,), ctx)


def _inducible(g: Atom, rest, anc, depth, s, prog: Program, ab, dlogp, abduced, ctx: _Ctx):
    size = _arg1_size(g)
    if not _descends(anc, g.pred, size):
        return
    anc2 = anc + ((g.pred, size),) if size is not None else anc
    arity = len(g.args)

    def try_clause(ms: MetaSub, prog2: Program):
        rc = rename_apart(materialize(ms, ctx.setting.library))
        s2 = unify_atoms(g, rc.head, s)
        if s2 is None:
            return
        stack2 = tuple((b, anc2, depth - 1) for b in rc.body) + rest
        yield from _solve(stack2, s2, prog2, ab, dlogp, abduced, ctx)

    # Recorded instantiations first.
    for ms in prog.metasubs:
        mr = ctx.setting.library[ms.rule]
        if ms.symbol(mr.head.pred_var) == g.pred and mr.head.arity == arity:
            yield from try_clause(ms, prog)

    # Then new ones, within the clause budget.
    if not (ctx.allow_new and prog.size < ctx.budget.max_clauses):
        return
    for mr in ctx.setting.metarules:
        if mr.head.arity != arity:
            continue
        for ms, prog2 in _new_metasubs(mr, g.pred, prog, ctx):
            if ms in prog.metasubs:
                continue  # identical clause already recorded; reuse covered it
            yield from try_clause(ms, prog2.extend(ms))


_FRESH = object()


def _new_metasubs(mr: Metarule, head_pred: str, prog: Program, ctx: _Ctx):
    """All bindings of mr's body slots, fresh inventions last."""
    setting = ctx.setting
    head_ev = mr.head.pred_var
    slots = []
    for ev in mr.existentials:
        if ev == head_ev:
            continue
        a = mr.body_slot_arity(ev)
        if a is None:
            return  # existential never used in the body: nothing to bind it by
        slots.append((ev, a))

    def candidates(arity: int, prog2: Program):
        cands = [n for n, ar in setting.body_pool if ar == arity]
        if setting.target[1] == arity and setting.target[0] not in cands:
            cands.append(setting.target[0])
        for n, ar in prog2.invented:
            if ar == arity and n not in cands:
                cands.append(n)
        if (
            len(prog2.invented) < setting.max_invented
            and prog2.size + 2 <= ctx.budget.max_clauses
        ):
            cands.append(_FRESH)
        return cands

    def rec(i: int, bound: dict, prog2: Program):
        if i == len(slots):
            bindings = tuple(
                (ev, head_pred if ev == head_ev else bound[ev]) for ev in mr.existentials
            )
            yield MetaSub(mr.name, bindings), prog2
            return
        ev, arity = slots[i]
        for cand in candidates(arity, prog2):
            if cand is _FRESH:
                taken = setting.taken_names() | {n for n, _ in prog2.invented}
                taken.update(bound.values())
                name = invent_symbol(setting.invent_base or setting.target[0], taken)
                yield from rec(i + 1, {**bound, ev: name}, prog2.with_invented(name, arity))
            else:
                yield from rec(i + 1, {**bound, ev: cand}, prog2)

    yield from rec(0, {}, prog)


# ---------------------------------------------------------------------------
# prove
# ---------------------------------------------------------------------------


def prove(
    goals: Union[Atom, Sequence[Atom]],
    program: Program,
    setting: InductionSetting,
    facts,
    budget: Optional[SearchBudget] = None,
    *,
    runtime: Optional[Budget] = None,
    incumbent: Optional[Incumbent] = None,
    allow_new_clauses: bool = True,
    prune: Optional[bool] = None,
    feasibility_only: bool = False,
) -> Iterator[AbductionResult]:
    """Stream of abductive proofs of the goals, best-effort order.

    Every emitted result is complete: its constraint store (if any) has been
    solved to the most probable feasible assignment, and log_prob is the sum
    of the log probabilities of every assumed fact plus that assignment.
    Pruning (on by default via the budget) abandons partial branches that
    can no longer beat the best completed proof; completed proofs are always
    emitted.  With feasibility_only the solver is replaced by a cheap
    satisfiability check and log_prob covers dyadic facts alone.
    """
    if isinstance(goals, Atom):
        goals = [goals]
    budget = budget or SearchBudget()
    runtime = runtime if runtime is not None else budget.runtime()
    do_prune = budget.pruning if prune is None else prune
    if do_prune and incumbent is None:
        incumbent = Incumbent()
    ctx = _Ctx(setting, facts, budget, runtime, incumbent, do_prune, allow_new_clauses, feasibility_only)
    if sys.getrecursionlimit() < 20000:
        sys.setrecursionlimit(20000)

    stack = tuple((goal, (), budget.depth_limit) for goal in goals)
    for s, prog, ab, dlogp, abduced in _solve(stack, Subst(), program, _AbdState(), 0.0, (), ctx):
        labeling = None
        total = dlogp
        if ab.store is not None and ab.store.vars:
            if feasibility_only:
                if not _completion_exists(ab.store, runtime):
                    continue
            else:
                labeling = solve_best(ab.store, runtime, budget.solver_max_nodes)
                if labeling is None:
                    continue
                total += labeling.log_prob
        if do_prune and incumbent is not None:
            incumbent.update(total)
        yield AbductionResult(
            program=prog,
            abduced=abduced,
            log_prob=total,
            labeling=labeling,
            item_vars=tuple(sorted(ab.item_vars.items())),
        )


# ---------------------------------------------------------------------------
# Per-example scoring under a fixed program
# ---------------------------------------------------------------------------


def _log_not(lp: float) -> float:
    p = math.exp(lp)
    if p >= 1.0:
        return -math.inf
    return math.log1p(-p)


_BLOCK_CAP = 14  # brute-force blocking over at most 2^14 assignments


def _best_blocking(proof_fact_sets: "list[frozenset]", facts) -> Optional[ExampleLabeling]:
    """Most probable truth assignment falsifying every proof, if one exists.

    A proof that assumed no facts cannot be blocked.  Otherwise setting all
    facts false blocks everything, so an optimum always exists.
    """
    if any(not fs for fs in proof_fact_sets):
        return None
    keys = sorted(set().union(*proof_fact_sets)) if proof_fact_sets else []
    if not keys:
        return ExampleLabeling(0.0)
    logs_true = {k: facts.pair_logprob(k[1], k[2]) for k in keys}
    logs_false = {k: _log_not(lp) for k, lp in logs_true.items()}
    if len(keys) > _BLOCK_CAP:
        lp = sum(logs_false.values())
        return ExampleLabeling(lp, pair_facts=tuple((k, False) for k in keys))
    best_lp, best_assign = -math.inf, None
    for mask in range(1 << len(keys)):
        assign = {k: bool(mask >> i & 1) for i, k in enumerate(keys)}
        if any(all(assign[k] for k in fs) for fs in proof_fact_sets):
            continue
        lp = sum(logs_true[k] if v else logs_false[k] for k, v in assign.items())
        if lp > best_lp:
            best_lp, best_assign = lp, assign
    if best_assign is None:
        return None
    return ExampleLabeling(best_lp, pair_facts=tuple((k, best_assign[k]) for k in keys))


def score_example(
    ex: GoalExample,
    program: Program,
    setting: InductionSetting,
    facts,
    budget: SearchBudget,
    runtime: Optional[Budget] = None,
) -> Optional[ExampleLabeling]:
    """Best log P(example | program) with its pseudo-labels, or None.

    Positive examples take the most probable proof.  Negative examples take
    the most probable fact assignment under which no proof survives; a
    fact-free proof makes that impossible.
    """
    runtime = runtime if runtime is not None else budget.runtime()
    if ex.positive:
        best: Optional[AbductionResult] = None
        for r in prove(
            ex.goal,
            program,
            setting,
            facts,
            budget,
            runtime=runtime,
            allow_new_clauses=False,
        ):
            if best is None or r.log_prob > best.log_prob:
                best = r
        if best is None:
            return None
        return ExampleLabeling(
            best.log_prob,
            item_labels=tuple(sorted(best.item_assignment().items())),
            pair_facts=tuple((a.key, True) for a in best.abduced if a.kind == "fact"),
        )
    proof_sets = []
    for r in prove(
        ex.goal,
        program,
        setting,
        facts,
        budget,
        runtime=runtime,
        allow_new_clauses=False,
        prune=False,
        feasibility_only=True,
    ):
        proof_sets.append(frozenset(a.key for a in r.abduced if a.kind == "fact"))
    if not proof_sets:
        return ExampleLabeling(0.0)
    return _best_blocking(proof_sets, facts)


# ---------------------------------------------------------------------------
# induce
# ---------------------------------------------------------------------------


def _candidate_programs(
    positives: "list[GoalExample]",
    setting: InductionSetting,
    budget: SearchBudget,
    facts,
    runtime: Budget,
) -> "list[Program]":
    """Programs that prove every positive example, by sequential extension."""
    seen_prefix: set = set()
    found: dict = {}

    def rec(idx: int, prog: Program):
        if not runtime.ok():
            return
        if idx == len(positives):
            if prog.size > 0:
                found.setdefault(prog.key(), prog)
            return
        state = (prog.key(), idx)
        if state in seen_prefix:
            return
        seen_prefix.add(state)
        local: set = set()
        for r in prove(
            positives[idx].goal,
            prog,
            setting,
            facts,
            budget,
            runtime=runtime,
            prune=False,
            feasibility_only=True,
        ):
            k = r.program.key()
            if k in local:
                continue
            local.add(k)
            rec(idx + 1, r.program)

    rec(0, Program())
    out = list(found.values())
    out.sort(key=lambda p: (p.size, program_text(p, setting.library)))
    return out


def _fold(into: Budget, part: Budget) -> None:
    into.nodes += part.nodes
    into.depth_hits += part.depth_hits
    into.solver_nodes += part.solver_nodes
    into.solver_leaves += part.solver_leaves
    into.exhausted = into.exhausted or part.exhausted


def induce(
    examples: "list[GoalExample]",
    setting: InductionSetting,
    facts,
    budget: Optional[SearchBudget] = None,
    *,
    runtime: Optional[Budget] = None,
) -> InduceOutcome:
    """Highest-scoring program entailing the batch, with its pseudo-labels.

    score = prior(size) * prod over examples of best P(example | program).
    Iterative deepening over program size: once the incumbent's score is at
    least the prior of the next size, no larger program can win and the
    search stops.  Within a size, candidates go in print order and a
    candidate is abandoned mid-batch as soon as its partial product cannot
    reach the incumbent (single-worker mode only; with several workers every
    example is scored independently and the reduction is identical).
    Per-example scoring always runs under a fresh node budget so worker
    count cannot change any outcome; counters fold back into the shared one.
    """
    from dataclasses import replace

    budget = budget or SearchBudget()
    runtime = runtime if runtime is not None else budget.runtime()
    positives = [e for e in examples if e.positive]

    best_log, best_prog, best_labs = -math.inf, None, None
    tried = 0
    executor = None
    if budget.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        executor = ThreadPoolExecutor(max_workers=budget.workers)

    def score_one(prog, ex):
        rt = budget.runtime()
        lab = score_example(ex, prog, setting, facts, budget, rt)
        return lab, rt

    try:
        for size_cap in range(1, budget.max_clauses + 1):
            if not runtime.ok():
                break
            if best_prog is not None and log_prior(size_cap) <= best_log:
                break  # simplicity prior caps every remaining candidate
            round_budget = replace(budget, max_clauses=size_cap)
            candidates = [
                p
                for p in _candidate_programs(positives, setting, round_budget, facts, runtime)
                if p.size == size_cap
            ]
            for prog in candidates:
                if not runtime.ok():
                    break
                tried += 1
                labs: "list[ExampleLabeling]" = []
                acc = log_prior(prog.size)
                if executor is None:
                    ok = True
                    for ex in examples:
                        lab, rt = score_one(prog, ex)
                        _fold(runtime, rt)
                        if lab is None:
                            ok = False
                            break
                        acc += lab.log_prob
                        labs.append(lab)
                        if budget.pruning and acc <= best_log:
                            ok = False
                            break
                    if not ok:
                        continue
                else:
                    results = list(executor.map(lambda ex: score_one(prog, ex), examples))
                    for _, rt in results:
                        _fold(runtime, rt)
                    if any(lab is None for lab, _ in results):
                        continue
                    labs = [lab for lab, _ in results]
                    acc += sum(lab.log_prob for lab in labs)
                if acc > best_log:
                    best_log, best_prog, best_labs = acc, prog, tuple(labs)
    finally:
        if executor is not None:
            executor.shutdown(wait=False)

    exhausted = runtime.exhausted or not runtime.ok()
    if best_prog is None:
        return InduceOutcome(None, budget_exhausted=exhausted, candidates_tried=tried)
    return InduceOutcome(
        Induced(best_prog, best_labs, best_log),
        budget_exhausted=exhausted,
        candidates_tried=tried,
    )


# ---------------------------------------------------------------------------
# entails
# ---------------------------------------------------------------------------


def entails(
    program: Program,
    kb: KnowledgeBase,
    goal: Union[Atom, Sequence[Atom]],
    metarules: "list[Metarule]",
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    budget: Optional[Budget] = None,
) -> bool:
    """Ground entailment of the goal from kb plus the program's clauses.

    The kb must evaluate the abducible predicates deterministically (ground
    arithmetic builtins); nothing is assumed here.
    """
    from .kb import deduce

    library = metarule_library(metarules)
    k2 = kb.copy()
    for c in program_clauses(program, library):
        k2.add_clause(c)
    for _ in deduce(goal, k2, depth_limit=depth_limit, budget=budget):
        return True
    return False
