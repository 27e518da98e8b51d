"""Joint training loop: abduce pseudo-labels, refit perception, repeat.

Hard-EM over batches.  The E-step induces one program per batch together
with the most probable consistent labelling of every item under the
current perception model; the M-step treats those labels as supervised
targets and takes a few gradient passes, warm-starting from the current
weights.  The best-scoring program seen so far is retained across batches
and epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metarules import (
    Program,
    default_metarules,
    metarule_library,
    program_text,
)
from .mil import InduceOutcome, Induced, InductionSetting, SearchBudget, induce
from .perception import pretrain_few_shot
from .tasks import SeqExample, Task

_LOG_FLOOR = 1e-9  # pairwise probabilities are clipped away from {0,1}

METRIC_COLUMNS = (
    "epoch",
    "batch",
    "score",
    "pseudo_label_acc",
    "perception_acc",
    "loss",
    "nodes_explored",
)


class EMError(RuntimeError):
    pass


class ModelFacts:
    """Fact oracle reading probabilities off the current perception model.

    Item ids index rows of the batch feature matrix.  Monadic tasks use the
    classifier's log-softmax directly; dyadic tasks score an ordered pair
    through the pairwise net.
    """

    def __init__(
        self,
        features: np.ndarray,
        model=None,
        pair_model=None,
        value_base: int = 0,
    ):
        self.features = features
        self.value_base = value_base
        self._pair = pair_model
        self._logp = None
        if model is not None and len(features):
            self._logp = model.log_probs(features)

    def item_logweights(self, item: int) -> Sequence[float]:
        if self._logp is None:
            raise EMError("no per-item classifier attached")
        return [float(v) for v in self._logp[item]]

    def pair_logprob(self, a: int, b: int) -> float:
        if self._pair is None:
            raise EMError("no pairwise model attached")
        p = float(self._pair.predict_pair(self.features[a], self.features[b]))
        return math.log(min(max(p, _LOG_FLOOR), 1.0 - _LOG_FLOOR))


@dataclass
class EMConfig:
    epochs: int = 10
    batch_size: int = 32
    m_epochs: int = 8
    m_batch: int = 32
    lr_decay: float = 1.0  # perception lr multiplier applied each epoch
    seed: int = 0
    budget: SearchBudget = field(default_factory=SearchBudget)
    pretrain: bool = False  # few-shot warm start before the first epoch
    metrics_path: Optional[Path] = None
    artifacts_dir: Optional[Path] = None


@dataclass
class EMState:
    """What training accumulated: the model plus the best program so far."""

    model: object
    best_program: Optional[Program] = None
    best_score: float = -math.inf
    rows: "list[dict]" = field(default_factory=list)

    def best_text(self, library=None) -> str:
        if self.best_program is None:
            return ""
        lib = library or metarule_library(default_metarules())
        return program_text(self.best_program, lib)


def _assemble(task: Task, batch: Sequence[SeqExample]):
    """Item-id bookkeeping for one batch: goals, features, spans."""
    goals = []
    rows = []
    spans = []
    next_id = 0
    for ex in batch:
        ids = list(range(next_id, next_id + len(ex)))
        next_id += len(ex)
        rows.append(ex.x)
        spans.append(ids)
        goals.append(task.goal(ids, ex.y))
    features = np.concatenate(rows, axis=0) if rows else np.zeros((0, 1))
    return goals, features, spans


def e_step(
    task: Task,
    batch: Sequence[SeqExample],
    setting: InductionSetting,
    facts: ModelFacts,
    budget: SearchBudget,
    runtime=None,
) -> InduceOutcome:
    """Best (program, labelling) pair for the batch, or absent."""
    goals, _, _ = _assemble(task, batch)
    return induce(goals, setting, facts, budget, runtime=runtime)


def _pseudo_label_acc(task: Task, batch, spans, induced: Induced) -> Optional[float]:
    hits = total = 0
    for ex, ids, lab in zip(batch, spans, induced.labelings):
        if ex.truth is None:
            continue
        truth = {i: d for i, d in zip(ids, ex.truth)}
        if task.dyadic:
            for (_, a, b), val in lab.pair_facts:
                hits += int(val == (truth[a] >= truth[b]))
                total += 1
        else:
            for i, v in lab.item_labels:
                hits += int(v == truth[i])
                total += 1
    return hits / total if total else None


def _perception_acc(task: Task, batch, model, pair_model) -> Optional[float]:
    hits = total = 0
    for ex in batch:
        if ex.truth is None:
            continue
        if task.dyadic:
            if pair_model is None:
                continue
            n = len(ex)
            for i in range(n):
                for j in range(i + 1, n):
                    pred = pair_model.predict_pair(ex.x[i], ex.x[j]) >= 0.5
                    hits += int(pred == (ex.truth[i] >= ex.truth[j]))
                    total += 1
        else:
            if model is None:
                continue
            labels = model.predict_label(ex.x)
            for lab, d in zip(np.atleast_1d(labels), ex.truth):
                hits += int(int(lab) + task.value_base == d)
                total += 1
    return hits / total if total else None


def m_step(
    task: Task,
    batch,
    spans,
    induced: Induced,
    model,
    pair_model,
    m_epochs: int,
    m_batch: int,
) -> Optional[float]:
    """Refit perception on the abduced labels; returns the final loss.

    Warm start: the model keeps its current weights and momentum, so each
    M-step is a few more passes, not training from scratch.
    """
    features = np.concatenate([ex.x for ex in batch], axis=0)
    if task.dyadic:
        triples = []
        for ids, lab in zip(spans, induced.labelings):
            for (_, a, b), val in lab.pair_facts:
                triples.append((features[a], features[b], bool(val)))
        if not triples:
            return None
        return pair_model.fit_pairs(triples, epochs=m_epochs, batch_size=m_batch)
    X, y = [], []
    for lab in induced.labelings:
        for i, v in lab.item_labels:
            X.append(features[i])
            y.append(v - task.value_base)
    if not X:
        return None
    return model.fit(np.stack(X), np.array(y, dtype=int), epochs=m_epochs, batch_size=m_batch)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def train(
    task: Task,
    examples: Sequence[SeqExample],
    config: EMConfig,
    model=None,
    pair_model=None,
    setting: Optional[InductionSetting] = None,
    state: Optional[EMState] = None,
    pretrain_data=None,
) -> EMState:
    """Run hard-EM epochs over shuffled batches.

    Every batch appends one metrics row.  A batch whose E-step finds no
    program is skipped (no M-step); an epoch in which every batch fails
    aborts training, since nothing can improve.  With config.pretrain the
    classifier is first fit on pretrain_data, one labeled item per class,
    which breaks the cold-start label symmetry.
    """
    if not examples:
        raise EMError("no training examples")
    if task.dyadic and pair_model is None:
        raise EMError(f"task {task.id} trains a pairwise model; none given")
    if not task.dyadic and model is None:
        raise EMError(f"task {task.id} trains a classifier; none given")
    if config.pretrain:
        if task.dyadic or pretrain_data is None:
            raise EMError("pretraining needs a classifier and (X, y) seed data")
        pretrain_few_shot(model, pretrain_data[0], pretrain_data[1])
    setting = setting or task.setting()
    state = state or EMState(model=pair_model if task.dyadic else model)
    lib = metarule_library(default_metarules())
    rng = np.random.default_rng(config.seed)

    writer = None
    fh = None
    if config.metrics_path is not None:
        path = Path(config.metrics_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fh = path.open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
    if config.artifacts_dir is not None:
        Path(config.artifacts_dir).mkdir(parents=True, exist_ok=True)

    try:
        for epoch in range(config.epochs):
            if epoch and config.lr_decay != 1.0:
                if model is not None:
                    model.lr *= config.lr_decay
                if pair_model is not None:
                    pair_model.net.lr *= config.lr_decay
            order = rng.permutation(len(examples))
            batches = [
                [examples[i] for i in order[o : o + config.batch_size]]
                for o in range(0, len(order), config.batch_size)
            ]
            solved = 0
            for bi, batch in enumerate(batches):
                goals, features, spans = _assemble(task, batch)
                facts = ModelFacts(
                    features,
                    model=None if task.dyadic else model,
                    pair_model=pair_model if task.dyadic else None,
                    value_base=task.value_base,
                )
                runtime = config.budget.runtime()
                out = induce(goals, setting, facts, config.budget, runtime=runtime)
                nodes = runtime.nodes + runtime.solver_nodes
                pacc = _perception_acc(task, batch, model, pair_model)
                row = {
                    "epoch": epoch,
                    "batch": bi,
                    "score": None,
                    "pseudo_label_acc": None,
                    "perception_acc": pacc,
                    "loss": None,
                    "nodes_explored": nodes,
                }
                if out.induced is not None:
                    solved += 1
                    row["score"] = out.induced.log_score
                    row["pseudo_label_acc"] = _pseudo_label_acc(task, batch, spans, out.induced)
                    row["loss"] = m_step(
                        task,
                        batch,
                        spans,
                        out.induced,
                        model,
                        pair_model,
                        config.m_epochs,
                        config.m_batch,
                    )
                    if out.induced.log_score > state.best_score:
                        state.best_score = out.induced.log_score
                        state.best_program = out.induced.program
                        if config.artifacts_dir is not None:
                            text = program_text(out.induced.program, lib)
                            best = Path(config.artifacts_dir) / "program_best.pl"
                            best.write_text(text + "\n")
                state.rows.append(row)
                if writer is not None:
                    writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                    fh.flush()
            if solved == 0:
                raise EMError(f"epoch {epoch}: every batch failed abduction")
    finally:
        if fh is not None:
            fh.close()
    return state


def run_curriculum(
    stage1: "tuple[Task, Sequence[SeqExample], EMConfig]",
    stage2: "tuple[Task, Sequence[SeqExample], EMConfig]",
    pair_model,
) -> "tuple[EMState, EMState, Program]":
    """Two-stage schedule sharing one pairwise model.

    Stage one learns the ordered-list concept; its program is then
    installed as interpreted background clauses so stage two can call (and
    step through) it while inducing the permutation-sort rule.  A stage
    that produces no program halts the schedule.
    """
    from .metarules import merge_programs

    task1, ex1, cfg1 = stage1
    task2, ex2, cfg2 = stage2
    s1 = train(task1, ex1, cfg1, pair_model=pair_model)
    if s1.best_program is None:
        raise EMError(f"stage {task1.id} produced no program")
    setting2 = task2.setting(extra_program=s1.best_program)
    s2 = train(task2, ex2, cfg2, pair_model=pair_model, setting=setting2)
    if s2.best_program is None:
        raise EMError(f"stage {task2.id} produced no program")
    return s1, s2, merge_programs(s2.best_program, s1.best_program)
