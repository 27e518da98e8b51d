"""Search-cost benchmarks: labeling search order and metarule count.

Two measurements. The first compares inducing a program and then abducing
labels through the constraint solver (H then z) against enumerating label
tuples by descending probability until one fits the arithmetic (z then H);
both report how many complete assignments they visited.  The second sweeps
metarule subsets of growing size and reports the search cost of inducing
the same program under each.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .em import ModelFacts, _assemble
from .metarules import default_metarules
from .mil import ExactFacts, SearchBudget, induce
from .tasks import SeqExample, Task, _task_y


@dataclass
class AbductionBenchRow:
    batch: int
    h_to_z: int  # complete assignments the constraint search visited
    z_to_h: int  # label tuples enumerated before all examples fit
    solved: bool
    h_to_z_ms: float = 0.0
    z_to_h_ms: float = 0.0


@dataclass
class MetaruleBenchRow:
    n_rules: int
    names: "tuple[str, ...]"
    nodes: int  # resolution steps plus solver branch nodes
    solved: bool
    score: Optional[float]
    wall_ms: float = 0.0


def descending_assignments(logps: "list[np.ndarray]"):
    """Yield index tuples over the given rows in nonincreasing joint log-prob.

    Lazy best-first frontier over the product space; ties break on the
    index tuple so the order is deterministic.
    """
    order = [np.argsort(-row, kind="stable") for row in logps]
    sorted_l = [row[o] for row, o in zip(logps, order)]
    start = (0,) * len(logps)
    heap = [(-sum(row[0] for row in sorted_l), start)]
    seen = {start}
    while heap:
        neg, ranks = heapq.heappop(heap)
        yield tuple(int(order[i][r]) for i, r in enumerate(ranks)), -neg
        for i, r in enumerate(ranks):
            if r + 1 < len(sorted_l[i]):
                nxt = ranks[:i] + (r + 1,) + ranks[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(
                        heap, (neg + sorted_l[i][r] - sorted_l[i][r + 1], nxt)
                    )


def _tuples_until_feasible(task: Task, ex: SeqExample, logp_rows) -> int:
    """z-then-H cost for one example: tuples tried before the label fits."""
    tried = 0
    for classes, _ in descending_assignments(logp_rows):
        tried += 1
        digits = [c + task.value_base for c in classes]
        if _task_y(task, digits) == ex.y:
            return tried
    return tried


def bench_abduction(
    task: Task,
    batches: "Sequence[Sequence[SeqExample]]",
    model,
    budget: Optional[SearchBudget] = None,
) -> "list[AbductionBenchRow]":
    budget = budget or SearchBudget(max_clauses=task.max_clauses)
    setting = task.setting()
    rows = []
    for bi, batch in enumerate(batches):
        goals, features, spans = _assemble(task, batch)
        facts = ModelFacts(features, model=model, value_base=task.value_base)
        runtime = budget.runtime()
        t0 = time.perf_counter()
        out = induce(goals, setting, facts, budget, runtime=runtime)
        t1 = time.perf_counter()
        z_count = 0
        for ex, ids in zip(batch, spans):
            z_count += _tuples_until_feasible(
                task, ex, [np.asarray(facts.item_logweights(i)) for i in ids]
            )
        t2 = time.perf_counter()
        rows.append(
            AbductionBenchRow(
                batch=bi,
                h_to_z=runtime.solver_leaves,
                z_to_h=z_count,
                solved=out.induced is not None,
                h_to_z_ms=(t1 - t0) * 1e3,
                z_to_h_ms=(t2 - t1) * 1e3,
            )
        )
    return rows


DEFAULT_SUBSETS = (
    ("chain", "ident"),
    ("chain", "ident", "postcon"),
    tuple(r.name for r in default_metarules()),
)


def bench_metarules(
    task: Task,
    examples: "Sequence[SeqExample]",
    subsets: "Sequence[Sequence[str]] | None" = None,
    budget: Optional[SearchBudget] = None,
) -> "list[MetaruleBenchRow]":
    """Induce from ground-truth facts under each metarule subset.

    Perception is taken out of the picture (one-hot facts from the digit
    sidecar) so the rows isolate pure search cost.  A subset that cannot
    express the target program comes back unsolved rather than erroring.
    """
    budget = budget or SearchBudget(max_clauses=task.max_clauses)
    goals, _, spans = _assemble(task, examples)
    labels = {}
    for ex, ids in zip(examples, spans):
        if ex.truth is None:
            raise ValueError("metarule bench needs ground-truth digits")
        labels.update({i: d for i, d in zip(ids, ex.truth)})
    facts = ExactFacts(labels, n_values=task.n_classes, value_base=task.value_base)
    rows = []
    for names in subsets or DEFAULT_SUBSETS:
        setting = task.setting(metarule_names=tuple(names))
        runtime = budget.runtime()
        t0 = time.perf_counter()
        out = induce(goals, setting, facts, budget, runtime=runtime)
        wall = (time.perf_counter() - t0) * 1e3
        rows.append(
            MetaruleBenchRow(
                n_rules=len(tuple(names)),
                names=tuple(names),
                nodes=runtime.nodes + runtime.solver_nodes,
                solved=out.induced is not None,
                score=out.induced.log_score if out.induced else None,
                wall_ms=wall,
            )
        )
    return rows


def bench_metarule_sizes(
    task: Task,
    examples: "Sequence[SeqExample]",
    sizes: "Sequence[int]" = (2, 3, 9),
    budget: Optional[SearchBudget] = None,
) -> "list[MetaruleBenchRow]":
    """Worst-case cost per subset size, always keeping the task's own rules.

    For each size we grow the task's minimal rule set with every combination
    of extra rules at that size and keep the most expensive run, so a lucky
    draw of distractors cannot flatter the small subsets.
    """
    core = task.metarule_names
    everything = tuple(r.name for r in default_metarules())
    extras = tuple(n for n in everything if n not in core)
    worst: "list[MetaruleBenchRow]" = []
    for size in sizes:
        if size < len(core) or size > len(everything):
            raise ValueError(f"subset size {size} out of range for {task.id}")
        variants = [
            core + combo for combo in itertools.combinations(extras, size - len(core))
        ]
        rows = bench_metarules(task, examples, subsets=variants, budget=budget)
        worst.append(max(rows, key=lambda r: r.nodes))
    return worst
