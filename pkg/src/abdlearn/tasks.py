"""Task wiring, synthetic data generation, file formats, and evaluation.

Four built-in tasks over digit sequences: cumulative sum, cumulative
product, the sorted-list concept, and permutation sort.  Each task bundles
the background clauses, abducible predicates, metarule subset, and body
pool that the induction engine needs, plus enough metadata (digit range,
class count) to size a perception model.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .kb import Budget, KnowledgeBase, deduce, standard_kb
from .metarules import (
    Metarule,
    Program,
    default_metarules,
    metarule_library,
    program_clauses,
)
from .mil import (
    ABD_ADD,
    ABD_EQC,
    ABD_FACT,
    ABD_MUL,
    Abducible,
    GoalExample,
    InductionSetting,
    item_term,
)
from .terms import Atom, Int, Struct, Term, Var, mk_list, proper_list_items, unify


class TaskError(ValueError):
    pass


TASK_IDS = ("sum", "product", "sorted_concept", "bogosort")

# shared list primitives; permute/3 and geq/2 come in as native builtins
LIST_BK = """\
head([H|_], H).
tail([_|T], T).
empty([]).
"""


@dataclass(frozen=True)
class Task:
    """Static description of one learning task."""

    id: str
    target: "tuple[str, int]"
    bk_text: str
    abducibles: "tuple[Abducible, ...]"
    metarule_names: "tuple[str, ...]"
    body_pool: "tuple[tuple[str, int], ...]"
    max_clauses: int
    max_invented: int = 0
    invent_base: Optional[str] = None
    n_classes: int = 10
    value_base: int = 0  # digit encoded by class 0
    digit_lo: int = 0
    digit_hi: int = 9
    dyadic: bool = False  # perception is a pairwise relation, not a classifier
    distinct_digits: bool = False

    def metarules(self, names: Optional[Sequence[str]] = None) -> "list[Metarule]":
        lib = metarule_library(default_metarules())
        chosen = tuple(names) if names is not None else self.metarule_names
        missing = [n for n in chosen if n not in lib]
        if missing:
            raise TaskError(f"unknown metarules: {', '.join(missing)}")
        return [lib[n] for n in chosen]

    def setting(
        self,
        metarule_names: Optional[Sequence[str]] = None,
        extra_program: Optional[Program] = None,
        library: Optional[dict] = None,
    ) -> InductionSetting:
        """Fresh induction setting; extra_program installs interpreted clauses.

        The curriculum uses extra_program to make an earlier stage's
        definitions callable (and steppable by the meta-interpreter) while
        the new stage only searches over its own metarule instantiations.
        """
        kb = standard_kb(self.bk_text)
        if extra_program is not None:
            lib = library or metarule_library(default_metarules())
            for clause in program_clauses(extra_program, lib):
                kb.add_clause(clause)
        return InductionSetting(
            kb=kb,
            metarules=self.metarules(metarule_names),
            abducibles={(a.name, a.arity): a for a in self.abducibles},
            target=self.target,
            body_pool=list(self.body_pool),
            max_invented=self.max_invented,
            invent_base=self.invent_base,
        )

    def goal(self, item_ids: Sequence[int], y) -> GoalExample:
        items = mk_list([item_term(i) for i in item_ids])
        name, arity = self.target
        if arity == 1:
            return GoalExample(Atom(name, (items,)), positive=bool(y))
        if self.id == "bogosort":
            out: Term = mk_list([Int(int(r)) for r in y])
        else:
            out = Int(int(y))
        return GoalExample(Atom(name, (items, out)), positive=True)


def make_task(task_id: str) -> Task:
    if task_id == "sum":
        return Task(
            id="sum",
            target=("f", 2),
            bk_text=LIST_BK,
            abducibles=(Abducible("add", ABD_ADD), Abducible("eq", ABD_EQC)),
            metarule_names=("chain", "ident"),
            body_pool=(("head", 2), ("tail", 2), ("empty", 1), ("add", 2), ("eq", 2)),
            max_clauses=2,
        )
    if task_id == "product":
        return Task(
            id="product",
            target=("f", 2),
            bk_text=LIST_BK,
            abducibles=(Abducible("mult", ABD_MUL), Abducible("eq", ABD_EQC)),
            metarule_names=("chain", "ident"),
            body_pool=(("head", 2), ("tail", 2), ("empty", 1), ("mult", 2), ("eq", 2)),
            max_clauses=2,
            n_classes=9,
            value_base=1,
            digit_lo=1,
        )
    if task_id == "sorted_concept":
        return Task(
            id="sorted_concept",
            target=("s", 1),
            bk_text=LIST_BK,
            abducibles=(Abducible("nn", ABD_FACT),),
            metarule_names=("mono_rec", "mono_chain", "precon"),
            body_pool=(("tail", 2), ("empty", 1), ("nn", 1)),
            max_clauses=3,
            max_invented=1,
            invent_base="s",
            n_classes=2,
            dyadic=True,
            distinct_digits=True,
        )
    if task_id == "bogosort":
        # nn stays abducible but is deliberately NOT in the body pool: the
        # sort rule must go through the interpreted s/1 definition instead
        # of testing a single pair and calling it sorted.
        return Task(
            id="bogosort",
            target=("f", 2),
            bk_text=LIST_BK,
            abducibles=(Abducible("nn", ABD_FACT),),
            metarule_names=("tri_split",),
            body_pool=(("permute", 3), ("s", 1)),
            max_clauses=1,
            n_classes=2,
            dyadic=True,
            distinct_digits=True,
        )
    raise TaskError(f"unknown task {task_id!r}; expected one of {', '.join(TASK_IDS)}")


# ---------------------------------------------------------------------------
# Synthetic perception data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticDigitGen:
    """Noisy vector renderings of digits with a fixed prototype per class.

    Prototypes are drawn once from the seed; instances add Gaussian noise
    and clip to [0, 1].  Ground-truth digits travel next to the features
    but are only ever used for metrics, never for training.
    """

    n_classes: int = 10
    dim: int = 8
    noise: float = 0.12  # cold supervised ceiling about 0.97 at this level
    seed: int = 0
    prototypes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_classes < 2 or self.dim < 1:
            raise TaskError("need at least two classes and one feature")
        rng = np.random.default_rng(self.seed)
        self.prototypes = rng.uniform(0.1, 0.9, size=(self.n_classes, self.dim))

    def sample(self, digit: int, rng: np.random.Generator) -> np.ndarray:
        if not 0 <= digit < self.n_classes:
            raise TaskError(f"digit {digit} outside 0..{self.n_classes - 1}")
        x = self.prototypes[digit] + rng.normal(0.0, self.noise, size=self.dim)
        return np.clip(x, 0.0, 1.0)


@dataclass
class SeqExample:
    """One sequence: item features, the target value, and hidden truth."""

    x: np.ndarray  # (n_items, dim)
    y: object  # int | bool | tuple[int, ...] depending on task
    truth: "Optional[tuple[int, ...]]" = None  # per-item digits, metrics only

    def __len__(self) -> int:
        return int(self.x.shape[0])


def ranks_descending(digits: Sequence[int]) -> "tuple[int, ...]":
    """1-based rank of each element when sorting from large to small."""
    return tuple(1 + sum(1 for d in digits if d > di) for di in digits)


def _task_y(task: Task, digits: Sequence[int]):
    if task.id == "sum":
        return int(sum(digits))
    if task.id == "product":
        return int(math.prod(digits))
    if task.id == "bogosort":
        return ranks_descending(digits)
    if task.id == "sorted_concept":
        return all(a >= b for a, b in zip(digits, digits[1:]))
    raise TaskError(task.id)


def _draw_digits(task: Task, length: int, rng: np.random.Generator) -> "list[int]":
    span = task.digit_hi - task.digit_lo + 1
    if task.distinct_digits:
        if length > span:
            raise TaskError(
                f"cannot draw {length} distinct digits from {task.digit_lo}..{task.digit_hi}"
            )
        picks = rng.choice(span, size=length, replace=False)
    else:
        picks = rng.integers(0, span, size=length)
    return [int(p) + task.digit_lo for p in picks]


def few_shot_examples(
    examples: "Sequence[SeqExample]", n_classes: int, value_base: int = 0
):
    """One labeled item per class from ground-truth sidecars, for warm starts.

    Takes the first rendering of each class in dataset order so the pick is
    deterministic.  Classes missing from the data are an error: a warm start
    that never sees some digit is worse than none.
    """
    picked: "dict[int, np.ndarray]" = {}
    for ex in examples:
        if ex.truth is None:
            raise TaskError("few-shot seeding needs ground-truth digits")
        for row, digit in zip(np.asarray(ex.x), ex.truth):
            picked.setdefault(digit - value_base, row)
    if len(picked) < n_classes:
        raise TaskError(f"examples cover only {len(picked)}/{n_classes} classes")
    classes = sorted(picked)
    return np.stack([picked[c] for c in classes]), np.array(classes)


def gen_sequences(
    task: Task,
    n: int,
    lengths: "tuple[int, int]" = (2, 5),
    gen: Optional[SyntheticDigitGen] = None,
    seed: int = 0,
) -> "list[SeqExample]":
    """Draw n labelled sequences with lengths uniform over the given range.

    sorted_concept alternates positives (already in descending order) with
    negatives built as near-misses: one adjacent swap of a sorted sequence,
    or a reshuffle verified unsorted.
    """
    lo, hi = lengths
    if lo < 1 or hi < lo:
        raise TaskError(f"bad length range {lengths}")
    if gen is None:
        gen = SyntheticDigitGen(n_classes=task.digit_hi - task.digit_lo + 1, seed=seed)
    rng = np.random.default_rng(seed + 1013904223)  # stream distinct from prototype rng
    out: "list[SeqExample]" = []
    for i in range(n):
        length = int(rng.integers(lo, hi + 1))
        digits = _draw_digits(task, length, rng)
        if task.id == "sorted_concept":
            digits.sort(reverse=True)
            if i % 2 == 1:  # negative: break sortedness but stay close
                length = max(length, 2)
                while len(digits) < length:
                    digits = _draw_digits(task, length, rng)
                    digits.sort(reverse=True)
                if i % 4 == 1:
                    j = int(rng.integers(0, length - 1))
                    digits[j], digits[j + 1] = digits[j + 1], digits[j]
                else:
                    while all(a >= b for a, b in zip(digits, digits[1:])):
                        rng.shuffle(digits)
        y = _task_y(task, digits)
        feats = np.stack([gen.sample(d - task.digit_lo, rng) for d in digits])
        out.append(SeqExample(feats, y, tuple(digits)))
    return out


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def _format_y(y) -> str:
    if isinstance(y, bool):
        return "true" if y else "false"
    if isinstance(y, tuple):
        return ",".join(str(int(r)) for r in y)
    return str(int(y))


def _parse_y(task_id: str, text: str):
    try:
        if task_id == "sorted_concept":
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if task_id == "bogosort":
            return tuple(int(t) for t in text.split(","))
        return int(text)
    except ValueError as e:
        raise TaskError(f"bad label field {text!r} for task {task_id}") from e


def labels_path_for(path: "str | Path") -> Path:
    return Path(str(path) + ".labels")


def save_dataset(examples: Sequence[SeqExample], task_id: str, path: "str | Path") -> None:
    """Write the TSV dataset plus the ground-truth digit sidecar.

    Line format: task, item count, per-item feature CSVs joined by ';',
    then the label.  The sidecar keeps one digit CSV per line and exists
    only so metrics can be computed later; nothing in training reads it.
    """
    path = Path(path)
    lines = []
    truths = []
    for ex in examples:
        feats = ";".join(",".join(f"{v:.8g}" for v in row) for row in ex.x)
        lines.append(f"{task_id}\t{len(ex)}\t{feats}\t{_format_y(ex.y)}")
        truths.append(",".join(str(d) for d in ex.truth) if ex.truth else "")
    path.write_text("\n".join(lines) + "\n")
    labels_path_for(path).write_text("\n".join(truths) + "\n")


def load_dataset(path: "str | Path", expect_task: Optional[str] = None):
    """Read a dataset file back; returns (task_id, examples).

    Ground-truth digits are attached when the sidecar file is present.
    """
    path = Path(path)
    if not path.exists():
        raise TaskError(f"dataset file not found: {path}")
    truth_lines: "list[str] | None" = None
    sidecar = labels_path_for(path)
    if sidecar.exists():
        truth_lines = sidecar.read_text().splitlines()
    task_id: Optional[str] = None
    examples: "list[SeqExample]" = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise TaskError(f"{path}:{lineno}: expected 4 tab-separated fields")
        tid, n_str, feats_str, y_str = parts
        if task_id is None:
            task_id = tid
        elif tid != task_id:
            raise TaskError(f"{path}:{lineno}: mixed task ids {task_id!r} and {tid!r}")
        try:
            n_items = int(n_str)
            rows = [
                np.array([float(v) for v in item.split(",")], dtype=np.float64)
                for item in feats_str.split(";")
            ]
        except ValueError as e:
            raise TaskError(f"{path}:{lineno}: bad feature field") from e
        if len(rows) != n_items:
            raise TaskError(f"{path}:{lineno}: length field says {n_items}, got {len(rows)} items")
        if len({r.shape[0] for r in rows}) != 1:
            raise TaskError(f"{path}:{lineno}: items have mixed feature widths")
        y = _parse_y(tid, y_str)
        truth = None
        if truth_lines is not None and lineno - 1 < len(truth_lines) and truth_lines[lineno - 1]:
            truth = tuple(int(t) for t in truth_lines[lineno - 1].split(","))
        examples.append(SeqExample(np.stack(rows), y, truth))
    if task_id is None:
        raise TaskError(f"{path}: empty dataset")
    if expect_task is not None and task_id != expect_task:
        raise TaskError(f"{path}: holds task {task_id!r}, expected {expect_task!r}")
    return task_id, examples


# ---------------------------------------------------------------------------
# IDX image files
# ---------------------------------------------------------------------------

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def _read_exact(data: bytes, offset: int, n: int, what: str, path) -> bytes:
    if offset + n > len(data):
        raise TaskError(f"{path}: truncated {what}")
    return data[offset : offset + n]


def load_idx(images_path: "str | Path", labels_path: "str | Path"):
    """Load an IDX image/label pair as (features in [0,1], labels).

    Features come back row-major as (n, rows*cols) float64; labels must
    stay within 0..9.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    img = images_path.read_bytes()
    (magic, n, rows, cols) = struct.unpack(">IIII", _read_exact(img, 0, 16, "header", images_path))
    if magic != _IDX_IMAGES:
        raise TaskError(f"{images_path}: bad image magic 0x{magic:08x}")
    payload = _read_exact(img, 16, n * rows * cols, "pixel data", images_path)
    if len(img) != 16 + n * rows * cols:
        raise TaskError(f"{images_path}: trailing bytes after pixel data")
    X = np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols) / 255.0

    lab = labels_path.read_bytes()
    (lmagic, ln) = struct.unpack(">II", _read_exact(lab, 0, 8, "header", labels_path))
    if lmagic != _IDX_LABELS:
        raise TaskError(f"{labels_path}: bad label magic 0x{lmagic:08x}")
    if ln != n:
        raise TaskError(f"{labels_path}: {ln} labels for {n} images")
    body = _read_exact(lab, 8, ln, "label data", labels_path)
    if len(lab) != 8 + ln:
        raise TaskError(f"{labels_path}: trailing bytes after label data")
    y = np.frombuffer(body, dtype=np.uint8).astype(np.int64)
    if y.size and (y.min() < 0 or y.max() > 9):
        raise TaskError(f"{labels_path}: label outside 0..9")
    return X, y


# ---------------------------------------------------------------------------
# Ground execution and metrics
# ---------------------------------------------------------------------------


def _ground_arith(op: Callable[[int, int], int]):
    def fn(args, s):
        items = proper_list_items(s.apply(args[0]))
        if items is None or len(items) < 2:
            return
        a, b = items[0], items[1]
        if not (isinstance(a, Int) and isinstance(b, Int)):
            return
        out = mk_list([Int(op(a.value, b.value))] + list(items[2:]))
        s2 = unify(args[1], out, s)
        if s2 is not None:
            yield s2

    return fn


def _ground_eq(args, s):
    items = proper_list_items(s.apply(args[0]))
    if items is None or len(items) != 1:
        return
    s2 = unify(args[1], items[0], s)
    if s2 is not None:
        yield s2


def _ground_nn(rel: Callable[[Term, Term], bool]):
    def fn(args, s):
        items = proper_list_items(s.apply(args[0]))
        if items is None or len(items) < 2:
            return
        if rel(items[0], items[1]):
            yield s

    return fn


def ground_kb(
    task: Task,
    program: Program,
    library: Optional[dict] = None,
    nn_rel: Optional[Callable[[Term, Term], bool]] = None,
) -> KnowledgeBase:
    """Executable kb: background + induced clauses + ground abducibles.

    Numeric abducibles become real arithmetic; the dyadic one is backed by
    the given relation (model thresholded at 0.5, or true digit order).
    """
    kb = standard_kb(task.bk_text)
    lib = library or metarule_library(default_metarules())
    for clause in program_clauses(program, lib):
        kb.add_clause(clause)
    for a in task.abducibles:
        if a.kind == ABD_ADD:
            kb.add_builtin(a.name, 2, _ground_arith(lambda x, y: x + y))
        elif a.kind == ABD_MUL:
            kb.add_builtin(a.name, 2, _ground_arith(lambda x, y: x * y))
        elif a.kind == ABD_EQC:
            kb.add_builtin(a.name, 2, _ground_eq)
        elif a.kind == ABD_FACT:
            if nn_rel is None:
                raise TaskError(f"task {task.id} needs a pairwise relation to execute")
            kb.add_builtin(a.name, 1, _ground_nn(nn_rel))
    return kb


@dataclass
class Metrics:
    n: int
    failures: int = 0
    acc: Optional[float] = None  # exact-match accuracy on y
    mae: Optional[float] = None
    log_mae: Optional[float] = None  # mean |ln(1+pred) - ln(1+true)|
    perm_acc: Optional[float] = None
    elem_acc: Optional[float] = None
    cls_acc: Optional[float] = None  # raw per-item classifier accuracy

    def row(self) -> str:
        parts = [f"n={self.n}", f"failures={self.failures}"]
        for name in ("acc", "mae", "log_mae", "perm_acc", "elem_acc", "cls_acc"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v:.4f}")
        return " ".join(parts)


def _numeric_max(task: Task, length: int) -> int:
    if task.id == "product":
        return task.digit_hi**length
    return task.digit_hi * length


def _first_solution(goal: Atom, kb: KnowledgeBase, depth_limit: int, max_nodes: int):
    budget = Budget(max_nodes=max_nodes)
    for sol in deduce(goal, kb, depth_limit=depth_limit, budget=budget):
        return sol
    return None


def _predicted_digits(task: Task, ex: SeqExample, model, use_truth: bool) -> "list[int]":
    if use_truth or model is None:
        if ex.truth is None:
            raise TaskError("no ground-truth digits available for this example")
        return list(ex.truth)
    return [int(model.predict_label(row)) + task.value_base for row in ex.x]


def evaluate(
    program: Program,
    task: Task,
    examples: Sequence[SeqExample],
    model=None,
    use_truth: bool = False,
    library: Optional[dict] = None,
    depth_limit: int = 512,
    max_nodes: int = 500_000,
) -> Metrics:
    """Run the program on perception output and score against labels.

    Numeric tasks execute on the argmax digit of each item; an example the
    program cannot solve counts as the worst possible error for its length.
    Ranking uses the pairwise model directly (permutations are tried in
    order until the ordered check passes); a failed ranking scores zero on
    both whole-permutation and per-position accuracy.
    """
    if not examples:
        raise TaskError("evaluate needs at least one example")
    m = Metrics(n=len(examples))
    name, _ = task.target

    cls_hits = cls_total = 0
    if model is not None and not task.dyadic and not use_truth:
        for ex in examples:
            if ex.truth is None:
                continue
            for row, d in zip(ex.x, ex.truth):
                cls_hits += int(int(model.predict_label(row)) + task.value_base == d)
                cls_total += 1
        if cls_total:
            m.cls_acc = cls_hits / cls_total

    if task.id in ("sum", "product"):
        kb = ground_kb(task, program, library)
        abs_err: "list[float]" = []
        log_err: "list[float]" = []
        hits = 0
        for ex in examples:
            digits = _predicted_digits(task, ex, model, use_truth)
            goal = Atom(name, (mk_list([Int(d) for d in digits]), Var("Y")))
            sol = _first_solution(goal, kb, depth_limit, max_nodes)
            yv = sol.apply(Var("Y")) if sol is not None else None
            y_true = int(ex.y)
            if isinstance(yv, Int):
                pred = yv.value
                abs_err.append(abs(pred - y_true))
                log_err.append(abs(math.log1p(pred) - math.log1p(y_true)))
                hits += int(pred == y_true)
            else:
                m.failures += 1
                top = _numeric_max(task, len(ex))
                abs_err.append(float(max(y_true, top - y_true)))
                log_err.append(
                    max(math.log1p(y_true), math.log1p(top) - math.log1p(y_true))
                )
        m.acc = hits / m.n
        m.mae = float(np.mean(abs_err))
        m.log_mae = float(np.mean(log_err))
        return m

    rel = _pair_relation(task, examples, model, use_truth)

    if task.id == "sorted_concept":
        hits = 0
        for idx, ex in enumerate(examples):
            kb = ground_kb(task, program, library, nn_rel=rel(idx, ex))
            goal = Atom(name, (mk_list([item_term(i) for i in range(len(ex))]),))
            pred = _first_solution(goal, kb, depth_limit, max_nodes) is not None
            hits += int(pred == bool(ex.y))
        m.acc = hits / m.n
        return m

    if task.id == "bogosort":
        perm_hits = 0
        elem_sum = 0.0
        for idx, ex in enumerate(examples):
            kb = ground_kb(task, program, library, nn_rel=rel(idx, ex))
            goal = Atom(name, (mk_list([item_term(i) for i in range(len(ex))]), Var("R")))
            sol = _first_solution(goal, kb, depth_limit, max_nodes)
            ranks = None
            if sol is not None:
                items = proper_list_items(sol.apply(Var("R")))
                if items is not None and all(isinstance(t, Int) for t in items):
                    ranks = tuple(t.value for t in items)
            want = tuple(int(r) for r in ex.y)
            if ranks is None:
                m.failures += 1
                continue
            perm_hits += int(ranks == want)
            elem_sum += sum(int(a == b) for a, b in zip(ranks, want)) / len(want)
        m.perm_acc = perm_hits / m.n
        m.elem_acc = elem_sum / m.n
        m.acc = m.perm_acc
        return m

    raise TaskError(f"no evaluator for task {task.id}")


def _pair_relation(task: Task, examples, model, use_truth: bool):
    """Per-example factory mapping item terms to the dyadic relation."""

    def for_example(idx: int, ex: SeqExample):
        def item_id(t: Term) -> int:
            if isinstance(t, Struct) and t.functor == "item" and len(t.args) == 1:
                a = t.args[0]
                if isinstance(a, Int):
                    return a.value
            raise TaskError("ordered check reached a non-item term")

        if use_truth or model is None:
            if ex.truth is None:
                raise TaskError("no ground-truth digits available for this example")

            def rel(a: Term, b: Term) -> bool:
                return ex.truth[item_id(a)] >= ex.truth[item_id(b)]

        else:

            def rel(a: Term, b: Term) -> bool:
                return model.predict_pair(ex.x[item_id(a)], ex.x[item_id(b)]) >= 0.5

        return rel

    return for_example
