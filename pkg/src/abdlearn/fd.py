"""Finite-domain constraint store and maximum-probability labeling search.

Constraints are the three shapes the abducibles emit: X+Y#=Z, X*Y#=Z and
X#=c.  Domains are nonnegative.  Variables carrying a per-value
log-probability table are the pseudo-labels of perceived items; derived
intermediates have no table.  solve_best finds the feasible assignment of
weighted variables with the largest summed log-probability by
branch-and-bound; solve_all is the exhaustive oracle it is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .kb import Budget

# Width above which a domain is tracked as a bare interval without holes.
# Digit vars and sum intermediates stay explicit; product intermediates
# (bounded by 9^L) degrade to intervals until a constant pins them down.
EXPLICIT_MAX = 4096

ADD = "add"
MUL = "mul"
EQC = "eqc"


@dataclass(frozen=True, slots=True)
class Dom:
    """Immutable nonnegative integer domain: interval [lo,hi] plus holes.

    bits is a mask relative to lo (bit i set ⇔ lo+i present) when the width
    is at most EXPLICIT_MAX, else None meaning the full interval.
    Empty is represented by lo > hi.
    """

    lo: int
    hi: int
    bits: Optional[int]

    @staticmethod
    def range(lo: int, hi: int) -> "Dom":
        if lo > hi:
            return EMPTY_DOM
        width = hi - lo + 1
        if width <= EXPLICIT_MAX:
            return Dom(lo, hi, (1 << width) - 1)
        return Dom(lo, hi, None)

    @staticmethod
    def of_values(vals: Iterable[int]) -> "Dom":
        vs = sorted(set(vals))
        if not vs:
            return EMPTY_DOM
        lo, hi = vs[0], vs[-1]
        if hi - lo + 1 <= EXPLICIT_MAX:
            bits = 0
            for v in vs:
                bits |= 1 << (v - lo)
            return Dom(lo, hi, bits)
        return Dom(lo, hi, None)

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def is_explicit(self) -> bool:
        return self.bits is not None

    def size(self) -> int:
        if self.is_empty:
            return 0
        if self.bits is not None:
            return self.bits.bit_count()
        return self.hi - self.lo + 1

    def contains(self, v: int) -> bool:
        if self.is_empty or v < self.lo or v > self.hi:
            return False
        if self.bits is None:
            return True
        return bool(self.bits >> (v - self.lo) & 1)

    def values(self) -> Iterator[int]:
        if self.is_empty:
            return
        if self.bits is None:
            yield from range(self.lo, self.hi + 1)
            return
        bits, base = self.bits, self.lo
        while bits:
            low = bits & -bits
            yield base + low.bit_length() - 1
            bits ^= low

    def pinned(self) -> Optional[int]:
        if not self.is_empty and self.lo == self.hi:
            return self.lo
        return None

    def intersect_interval(self, lo: int, hi: int) -> "Dom":
        nlo, nhi = max(self.lo, lo), min(self.hi, hi)
        if nlo > nhi:
            return EMPTY_DOM
        if self.bits is None:
            return Dom.range(nlo, nhi)
        bits = self.bits >> (nlo - self.lo)
        bits &= (1 << (nhi - nlo + 1)) - 1
        return _normalize(nlo, bits)

    def pin(self, v: int) -> "Dom":
        if not self.contains(v):
            return EMPTY_DOM
        return Dom(v, v, 1)

    def restrict_to(self, vals: Iterable[int]) -> "Dom":
        return Dom.of_values(v for v in vals if self.contains(v))


def _normalize(lo: int, bits: int) -> Dom:
    if bits == 0:
        return EMPTY_DOM
    shift = (bits & -bits).bit_length() - 1
    bits >>= shift
    lo += shift
    hi = lo + bits.bit_length() - 1
    return Dom(lo, hi, bits)


EMPTY_DOM = Dom(0, -1, 0)


@dataclass(slots=True)
class FDVar:
    id: int
    dom: Dom
    weights: Optional[tuple] = None  # log-probs aligned with the initial domain
    weight_base: int = 0  # value of the first weight entry

    @property
    def is_weighted(self) -> bool:
        return self.weights is not None

    def weight_of(self, v: int) -> float:
        assert self.weights is not None
        return self.weights[v - self.weight_base]

    def max_weight(self) -> float:
        assert self.weights is not None
        return max(self.weights[v - self.weight_base] for v in self.dom.values())


@dataclass(frozen=True, slots=True)
class FDConstraint:
    kind: str  # ADD | MUL | EQC
    x: int
    y: int  # unused for EQC
    z: int  # the constant for EQC

    def text(self, store: "ConstraintStore") -> str:
        if self.kind == EQC:
            return f"{store.var_name(self.x)}#={self.z}"
        op = "+" if self.kind == ADD else "*"
        return f"{store.var_name(self.x)}{op}{store.var_name(self.y)}#={store.var_name(self.z)}"


@dataclass(frozen=True, slots=True)
class Labeling:
    assignment: dict  # var id → value, weighted vars only
    log_prob: float
    truncated: bool = False


class Infeasible(Exception):
    pass


class ConstraintStore:
    """Single-owner store of FD variables and posted constraints."""

    def __init__(self):
        self.vars: list[FDVar] = []
        self.constraints: list[FDConstraint] = []
        self._watch: dict[int, list[int]] = {}
        self.failed = False

    def clone(self) -> "ConstraintStore":
        out = ConstraintStore()
        out.vars = [FDVar(v.id, v.dom, v.weights, v.weight_base) for v in self.vars]
        out.constraints = list(self.constraints)
        out._watch = {k: list(v) for k, v in self._watch.items()}
        out.failed = self.failed
        return out

    # -- variables ----------------------------------------------------------

    def new_weighted_var(self, log_weights, base: int = 0) -> int:
        ws = tuple(float(w) for w in log_weights)
        total = sum(math.exp(w) for w in ws)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weight table must sum to 1 in probability space, got {total}")
        v = FDVar(len(self.vars), Dom.range(base, base + len(ws) - 1), ws, base)
        self.vars.append(v)
        return v.id

    def new_derived_var(self, lo: int, hi: int) -> int:
        v = FDVar(len(self.vars), Dom.range(lo, hi))
        self.vars.append(v)
        return v.id

    def var_name(self, vid: int) -> str:
        return ("x" if self.vars[vid].is_weighted else "v") + str(vid)

    def dom(self, vid: int) -> Dom:
        return self.vars[vid].dom

    def weighted_ids(self) -> "list[int]":
        return [v.id for v in self.vars if v.is_weighted]

    # -- posting and propagation ---------------------------------------------

    def post(self, kind: str, x: int, y: int = -1, z: int = -1) -> bool:
        """Record a constraint and propagate; False means infeasible."""
        if self.failed:
            return False
        idx = len(self.constraints)
        c = FDConstraint(kind, x, y, z)
        for vid in (c.x, c.y) if kind != EQC else (c.x,):
            if not 0 <= vid < len(self.vars):
                raise ValueError(f"constraint references unknown var {vid}")
        if kind != EQC and not 0 <= c.z < len(self.vars):
            raise ValueError(f"constraint references unknown var {c.z}")
        self.constraints.append(c)
        touched = (c.x,) if kind == EQC else (c.x, c.y, c.z)
        for vid in touched:
            self._watch.setdefault(vid, []).append(idx)
        return self.propagate([idx])

    def post_add(self, x: int, y: int, z: int) -> bool:
        return self.post(ADD, x, y, z)

    def post_mul(self, x: int, y: int, z: int) -> bool:
        return self.post(MUL, x, y, z)

    def post_eq_const(self, x: int, c: int) -> bool:
        return self.post(EQC, x, -1, c)

    def set_dom(self, vid: int, dom: Dom, queue: "list[int]") -> bool:
        old = self.vars[vid].dom
        if dom.lo == old.lo and dom.hi == old.hi and dom.bits == old.bits:
            return True
        if dom.is_empty:
            self.failed = True
            return False
        self.vars[vid].dom = dom
        for ci in self._watch.get(vid, ()):
            if ci not in queue:
                queue.append(ci)
        return True

    def propagate(self, queue: Optional[list] = None) -> bool:
        """Run the propagation queue to a fixed point; False iff infeasible."""
        if self.failed:
            return False
        if queue is None:
            queue = list(range(len(self.constraints)))
        while queue:
            ci = queue.pop(0)
            c = self.constraints[ci]
            if not self._revise(c, queue):
                self.failed = True
                return False
        return True

    def _revise(self, c: FDConstraint, queue: "list[int]") -> bool:
        if c.kind == EQC:
            return self.set_dom(c.x, self.dom(c.x).pin(c.z), queue)
        dx, dy, dz = self.dom(c.x), self.dom(c.y), self.dom(c.z)
        if dx.is_empty or dy.is_empty or dz.is_empty:
            return False
        if c.kind == ADD:
            # bounds-consistency on x+y=z
            if not self.set_dom(c.z, dz.intersect_interval(dx.lo + dy.lo, dx.hi + dy.hi), queue):
                return False
            dz = self.dom(c.z)
            if not self.set_dom(c.x, dx.intersect_interval(dz.lo - dy.hi, dz.hi - dy.lo), queue):
                return False
            dx = self.dom(c.x)
            return self.set_dom(c.y, dy.intersect_interval(dz.lo - dx.hi, dz.hi - dx.lo), queue)
        # MUL: bounds plus exact divisor filtering on explicit domains
        if not self.set_dom(c.z, self._mul_up(dx, dy, dz), queue):
            return False
        dz = self.dom(c.z)
        if not self.set_dom(c.x, self._mul_down(dx, dy, dz), queue):
            return False
        dx = self.dom(c.x)
        return self.set_dom(c.y, self._mul_down(dy, dx, dz), queue)

    def _mul_up(self, dx: Dom, dy: Dom, dz: Dom) -> Dom:
        if dx.is_explicit and dy.is_explicit and dx.size() * dy.size() <= 4096:
            vals = {a * b for a in dx.values() for b in dy.values()}
            return dz.restrict_to(vals)
        return dz.intersect_interval(dx.lo * dy.lo, dx.hi * dy.hi)

    def _mul_down(self, dx: Dom, dy: Dom, dz: Dom) -> Dom:
        """Filter dx against x*y=z given the current dy, dz."""
        if dx.is_explicit and dx.size() <= 64:
            kept = [a for a in dx.values() if self._mul_supported(a, dy, dz)]
            return dx.restrict_to(kept)
        # interval reasoning only
        lo, hi = dx.lo, dx.hi
        if dz.lo > 0:
            if dy.hi <= 0:
                return EMPTY_DOM
            lo = max(lo, -(-dz.lo // dy.hi))  # ceil division
            hi = min(hi, dz.hi // max(dy.lo, 1))
        return dx.intersect_interval(lo, hi)

    def _mul_supported(self, a: int, dy: Dom, dz: Dom) -> bool:
        if a == 0:
            return dz.contains(0)
        if dy.is_explicit and dy.size() <= 64:
            return any(dz.contains(a * b) for b in dy.values())
        if dz.is_explicit and dz.size() <= 4096:
            return any(z % a == 0 and dy.contains(z // a) for z in dz.values())
        lo = max(dz.lo, a * dy.lo)
        hi = min(dz.hi, a * dy.hi)
        return lo <= hi and hi // a >= -(-lo // a)

    def dump(self) -> str:
        return "\n".join(c.text(self) for c in self.constraints)


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


def _pin_and_propagate(store: ConstraintStore, vid: int, value: int) -> Optional[ConstraintStore]:
    s2 = store.clone()
    queue: list[int] = []
    if not s2.set_dom(vid, s2.dom(vid).pin(value), queue):
        return None
    if not s2.propagate(queue):
        return None
    return s2


def _completion_exists(store: ConstraintStore, budget: Optional[Budget]) -> bool:
    """True iff the unpinned (derived) vars admit a consistent completion."""
    open_vars = [v for v in store.vars if v.dom.pinned() is None]
    if not open_vars:
        return True
    open_vars.sort(key=lambda v: (v.dom.size(), v.id))
    v = open_vars[0]
    if not v.dom.is_explicit and v.dom.size() > EXPLICIT_MAX:
        # Interval too wide to enumerate: treat bounds-consistent as feasible.
        # Real task stores always pin derived vars by propagation.
        return True
    for val in v.dom.values():
        if budget is not None:
            budget.solver_nodes += 1
        s2 = _pin_and_propagate(store, v.id, val)
        if s2 is not None and _completion_exists(s2, budget):
            return True
    return False


def _labeling_of(store: ConstraintStore, truncated: bool = False) -> Labeling:
    assignment = {}
    log_prob = 0.0
    for v in store.vars:
        if v.is_weighted:
            val = v.dom.pinned()
            assert val is not None
            assignment[v.id] = val
            log_prob += v.weight_of(val)
    return Labeling(assignment, log_prob, truncated)


def _lex_key(assignment: dict) -> tuple:
    return tuple(assignment[k] for k in sorted(assignment))


def solve_best(
    store: ConstraintStore,
    budget: Optional[Budget] = None,
    max_nodes: Optional[int] = None,
) -> Optional[Labeling]:
    """Max-log-prob feasible assignment of the weighted vars, or None.

    Branch-and-bound: branch on weighted vars in descending max-weight
    order, values in descending weight; bound is the current sum plus each
    remaining var's best remaining weight.  Exact ties go to the
    lexicographically smallest assignment in var-id order.
    """
    if store.failed:
        return None
    root = store.clone()
    if not root.propagate():
        return None
    order = [v.id for v in root.vars if v.is_weighted]
    order.sort(key=lambda vid: (-root.vars[vid].max_weight(), vid))

    best: dict = {"labeling": None, "score": -math.inf, "nodes": 0, "truncated": False}

    def bound_rest(st: ConstraintStore, level: int) -> float:
        total = 0.0
        for vid in order[level:]:
            var = st.vars[vid]
            if var.dom.is_empty:
                return -math.inf
            total += var.max_weight()
        return total

    def descend(st: ConstraintStore, level: int, acc: float) -> None:
        if best["truncated"]:
            return
        if budget is not None and not budget.ok():
            best["truncated"] = True
            return
        if level == len(order):
            if budget is not None:
                budget.solver_leaves += 1
            if not _completion_exists(st, budget):
                return
            cand = _labeling_of(st)
            if cand.log_prob > best["score"] or (
                cand.log_prob == best["score"]
                and best["labeling"] is not None
                and _lex_key(cand.assignment) < _lex_key(best["labeling"].assignment)
            ):
                best["score"] = cand.log_prob
                best["labeling"] = cand
            return
        vid = order[level]
        var = st.vars[vid]
        vals = sorted(var.dom.values(), key=lambda v: (-var.weight_of(v), v))
        for val in vals:
            best["nodes"] += 1
            if budget is not None:
                budget.solver_nodes += 1
            if max_nodes is not None and best["nodes"] > max_nodes:
                best["truncated"] = True
                return
            here = acc + var.weight_of(val)
            s2 = _pin_and_propagate(st, vid, val)
            if s2 is None:
                continue
            if here + bound_rest(s2, level + 1) < best["score"]:
                continue
            descend(s2, level + 1, here)

    descend(root, 0, 0.0)
    lab = best["labeling"]
    if lab is None:
        return None
    if best["truncated"]:
        return Labeling(lab.assignment, lab.log_prob, truncated=True)
    return lab


def solve_all(store: ConstraintStore, cap: int = 100000) -> "tuple[list[Labeling], bool]":
    """All feasible labelings sorted by descending log_prob; (list, truncated).

    Ties in log_prob are ordered by lexicographically smaller assignment, so
    the head always equals solve_best's answer.
    """
    if store.failed:
        return [], False
    root = store.clone()
    if not root.propagate():
        return [], False
    order = sorted(v.id for v in root.vars if v.is_weighted)
    out: list[Labeling] = []
    truncated = False

    def descend(st: ConstraintStore, level: int) -> bool:
        nonlocal truncated
        if level == len(order):
            if _completion_exists(st, None):
                out.append(_labeling_of(st))
                if len(out) >= cap:
                    truncated = True
                    return False
            return True
        vid = order[level]
        for val in st.vars[vid].dom.values():
            s2 = _pin_and_propagate(st, vid, val)
            if s2 is not None and not descend(s2, level + 1):
                return False
        return True

    descend(root, 0)
    out.sort(key=lambda lab: (-lab.log_prob, _lex_key(lab.assignment)))
    return out, truncated
