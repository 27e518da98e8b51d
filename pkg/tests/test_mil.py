"""Meta-interpretive induction engine tests.

Expected programs and scores are hand-derived: proof probabilities multiply
the individual fact probabilities, and program scores add the log prior
6/(pi*size)^2.
"""

import math

import pytest

from abdlearn.kb import Budget, deduce, standard_kb
from abdlearn.metarules import (
    MetaruleError,
    MetaSub,
    Program,
    default_metarules,
    metarule_library,
    metarules_from_text,
    program_text,
)
from abdlearn.mil import (
    ABD_ADD,
    ABD_EQC,
    ABD_FACT,
    Abducible,
    ExactFacts,
    GoalExample,
    InductionSetting,
    SearchBudget,
    TableFacts,
    entails,
    induce,
    invent_symbol,
    item_term,
    log_prior,
    prior,
    prove,
    score_example,
)
from abdlearn.terms import Atom, Int, mk_list, proper_list_items, unify
from abdlearn.parser import parse_atom

BK = """
head([H|_], H).
tail([_|T], T).
empty([]).
"""

SUM_PROG = Program(
    (
        MetaSub("chain", (("P", "f"), ("Q", "add"), ("R", "f"))),
        MetaSub("ident", (("P", "f"), ("Q", "eq"))),
    )
)


def sum_setting(mrs=("chain", "ident")):
    kb = standard_kb(BK)
    rules = [r for r in default_metarules() if r.name in mrs]
    abd = {
        ("add", 2): Abducible("add", ABD_ADD),
        ("eq", 2): Abducible("eq", ABD_EQC),
    }
    return InductionSetting(kb, rules, abd, ("f", 2), [("add", 2), ("eq", 2)])


def sorted_setting():
    kb = standard_kb(BK)
    names = ("mono_rec", "mono_chain", "precon")
    rules = [r for r in default_metarules() if r.name in names]
    abd = {("nn", 1): Abducible("nn", ABD_FACT)}
    return InductionSetting(
        kb, rules, abd, ("s", 1), [("tail", 2), ("empty", 1), ("nn", 1)], max_invented=1
    )


def int_goal(xs, y):
    return Atom("f", (mk_list([Int(x) for x in xs]), Int(y)))


def item_goal(ids, y):
    return Atom("f", (mk_list([item_term(i) for i in ids]), Int(y)))


def digit_table(true, peak=0.9, n=10):
    rest = (1.0 - peak) / (n - 1)
    return [peak if v == true else rest for v in range(n)]


def clause_texts(prog, setting):
    return set(program_text(prog, setting.library).splitlines())


SUM_TEXTS = {"f(A,B) :- add(A,C), f(C,B).", "f(A,B) :- eq(A,B)."}


# ---------------------------------------------------------------------------
# prior / invent_symbol
# ---------------------------------------------------------------------------


def test_prior_exact_values():
    assert prior(1) == 6.0 / math.pi**2
    assert prior(2) == 6.0 / (2 * math.pi) ** 2
    assert abs(prior(1) / prior(3) - 9.0) < 1e-12


def test_prior_rejects_nonpositive():
    with pytest.raises(ValueError):
        prior(0)
    with pytest.raises(ValueError):
        prior(-3)


def test_prior_normalizes():
    total = sum(prior(c) for c in range(1, 100001))
    assert abs(total - 1.0) < 1e-4


def test_prior_strictly_decreasing():
    assert all(prior(c) > prior(c + 1) for c in range(1, 50))


def test_invent_symbol():
    assert invent_symbol("s") == "s_1"
    assert invent_symbol("s", {"s_1"}) == "s_2"
    taken = {"f_1", "f_2", "f_3"}
    assert invent_symbol("f", taken) == "f_4"


# ---------------------------------------------------------------------------
# metarule library
# ---------------------------------------------------------------------------


def test_default_metarules_shape():
    rules = default_metarules()
    assert len(rules) == 9
    lib = metarule_library(rules)
    chain = lib["chain"]
    assert chain.head.arity == 2
    assert [b.arity for b in chain.body] == [2, 2]
    assert chain.head.arg_vars == ("A", "B")
    assert chain.body[0].arg_vars == ("A", "C")
    assert chain.body[1].arg_vars == ("C", "B")
    rec = lib["mono_rec"]
    assert rec.body[1].pred_var == rec.head.pred_var  # self-recursive template


def test_metarule_file_forms():
    rules = metarules_from_text("metarule(my, [P,Q], [P,A,B], [[Q,B,A]]).")
    assert rules[0].name == "my" and rules[0].body[0].arg_vars == ("B", "A")
    unnamed = metarules_from_text("metarule([P,Q], [P,A], [[Q,A]]).")
    assert unnamed[0].name == "mr1"
    with pytest.raises(MetaruleError):
        metarules_from_text("metarule(x, [P], [P,A], [[Q,A]]).")
    with pytest.raises(MetaruleError):
        metarule_library(default_metarules() + [default_metarules()[0]])


def test_program_key_ignores_order_and_invented_names():
    a = MetaSub("ident", (("P", "f"), ("Q", "f_1")))
    b = MetaSub("chain", (("P", "f_1"), ("Q", "add"), ("R", "f_1")))
    p1 = Program((a, b), (("f_1", 2),))
    p2 = Program((b, a), (("f_1", 2),))
    assert p1.key() == p2.key()
    c = MetaSub("ident", (("P", "f"), ("Q", "f_2")))
    d = MetaSub("chain", (("P", "f_2"), ("Q", "add"), ("R", "f_2")))
    p3 = Program((c, d), (("f_2", 2),))
    assert p1.key() == p3.key()


# ---------------------------------------------------------------------------
# prove
# ---------------------------------------------------------------------------


def test_prove_empty_goal_list_succeeds_once():
    setting = sum_setting()
    results = list(prove([], SUM_PROG, setting, ExactFacts(), SearchBudget()))
    assert len(results) == 1
    assert results[0].program is SUM_PROG
    assert results[0].log_prob == 0.0
    assert results[0].abduced == ()


def test_prove_induces_sum_program_from_ground_goal():
    setting = sum_setting()
    stream = prove(
        int_goal([1, 2, 3], 6), Program(), setting, ExactFacts(), SearchBudget(max_clauses=2)
    )
    hits = [r for r in stream if clause_texts(r.program, setting) == SUM_TEXTS]
    assert hits, "expected the two-clause cumulative sum program in the stream"
    assert any(abs(r.log_prob) < 1e-12 for r in hits)


def test_prove_ground_goal_infeasible_output():
    setting = sum_setting()
    stream = prove(
        int_goal([1, 2, 3], 7), SUM_PROG, setting, ExactFacts(), SearchBudget(),
        allow_new_clauses=False,
    )
    assert list(stream) == []


def test_prove_accumulates_item_probabilities():
    # Three items, each with probability 0.9 on its true digit; the most
    # probable feasible assignment is the truth, so the best proof carries
    # log(0.9^3).
    facts = TableFacts({0: digit_table(1), 1: digit_table(2), 2: digit_table(3)})
    setting = sum_setting()
    best = None
    for r in prove(
        item_goal([0, 1, 2], 6), SUM_PROG, setting, facts, SearchBudget(),
        allow_new_clauses=False,
    ):
        if best is None or r.log_prob > best.log_prob:
            best = r
    assert best is not None
    assert abs(best.log_prob - 3 * math.log(0.9)) < 1e-9
    assert best.item_assignment() == {0: 1, 1: 2, 2: 3}


def test_prove_log_prob_matches_consumed_facts():
    facts = TableFacts({0: digit_table(4), 1: digit_table(2)})
    setting = sum_setting()
    for r in prove(
        item_goal([0, 1], 6), SUM_PROG, setting, facts, SearchBudget(),
        allow_new_clauses=False,
    ):
        manual = sum(a.log_prob for a in r.abduced)
        if r.labeling is not None:
            for item, vid in r.item_vars:
                if vid in r.labeling.assignment:
                    value = r.labeling.assignment[vid]
                    manual += facts.item_logweights(item)[value - facts.value_base]
        assert abs(r.log_prob - manual) <= 1e-12


def test_prove_records_constraint_texts():
    setting = sum_setting()
    best = None
    for r in prove(
        item_goal([0, 1], 6),
        SUM_PROG,
        setting,
        TableFacts({0: digit_table(4), 1: digit_table(2)}),
        SearchBudget(),
        allow_new_clauses=False,
    ):
        if best is None or r.log_prob > best.log_prob:
            best = r
    kinds = [a.kind for a in best.abduced]
    assert kinds == ["constraint"] * len(kinds)
    assert any("+" in a.text for a in best.abduced)
    assert any("#=6" in a.text for a in best.abduced)


def test_prove_left_recursion_terminates():
    # ident can bind the target to itself; the descent guard on the first
    # argument must cut that branch.
    setting = sum_setting(mrs=("ident",))
    runtime = Budget(max_nodes=50000)
    results = list(
        prove(int_goal([5], 5), Program(), setting, ExactFacts(), SearchBudget(max_clauses=2),
              runtime=runtime)
    )
    assert not runtime.exhausted
    assert any(clause_texts(r.program, setting) == {"f(A,B) :- eq(A,B)."} for r in results)


def test_prove_pruning_keeps_best_result():
    facts = TableFacts({0: digit_table(2, peak=0.6), 1: digit_table(3, peak=0.6)})
    setting = sum_setting()
    goal = item_goal([0, 1], 5)
    kw = dict(allow_new_clauses=False)
    best_on = max(
        r.log_prob
        for r in prove(goal, SUM_PROG, setting, facts, SearchBudget(pruning=True), **kw)
    )
    best_off = max(
        r.log_prob
        for r in prove(goal, SUM_PROG, setting, facts, SearchBudget(pruning=False), **kw)
    )
    assert best_on == best_off


def test_prove_dyadic_fact_probability():
    setting = sorted_setting()
    prog = Program(
        (
            MetaSub("mono_rec", (("P", "s"), ("Q", "s_1"))),
            MetaSub("mono_chain", (("P", "s"), ("Q", "tail"), ("R", "empty"))),
            MetaSub("precon", (("P", "s_1"), ("Q", "nn"), ("R", "tail"))),
        ),
        (("s_1", 2),),
    )
    facts = TableFacts({}, pairs={(0, 1): 0.8, (1, 2): 0.7})
    goal = Atom("s", (mk_list([item_term(i) for i in (0, 1, 2)]),))
    results = list(
        prove(goal, prog, setting, facts, SearchBudget(), allow_new_clauses=False)
    )
    assert results
    best = max(results, key=lambda r: r.log_prob)
    assert abs(best.log_prob - (math.log(0.8) + math.log(0.7))) < 1e-12
    assert {a.key for a in best.abduced} == {("pair", 0, 1), ("pair", 1, 2)}


# ---------------------------------------------------------------------------
# score_example (positives and negatives)
# ---------------------------------------------------------------------------


def test_score_example_negative_blocks_cheapest_fact():
    setting = sorted_setting()
    prog = Program(
        (
            MetaSub("mono_rec", (("P", "s"), ("Q", "s_1"))),
            MetaSub("mono_chain", (("P", "s"), ("Q", "tail"), ("R", "empty"))),
            MetaSub("precon", (("P", "s_1"), ("Q", "nn"), ("R", "tail"))),
        ),
        (("s_1", 2),),
    )
    facts = TableFacts({}, pairs={(0, 1): 0.9, (1, 2): 0.2})
    goal = Atom("s", (mk_list([item_term(i) for i in (0, 1, 2)]),))
    lab = score_example(GoalExample(goal, positive=False), prog, setting, facts, SearchBudget())
    # Blocking the proof means falsifying (0,1) or (1,2); the latter is
    # nearly false already, and (0,1) is best kept true.
    assert lab is not None
    want = math.log(0.9) + math.log(0.8)
    assert abs(lab.log_prob - want) < 1e-12
    assert lab.pairs_dict() == {("pair", 0, 1): True, ("pair", 1, 2): False}


def test_score_example_negative_unblockable_when_proof_is_fact_free():
    kb = standard_kb(BK)
    rules = [r for r in default_metarules() if r.name == "mono_chain"]
    setting = InductionSetting(kb, rules, {}, ("s", 1), [("tail", 2), ("empty", 1)])
    prog = Program((MetaSub("mono_chain", (("P", "s"), ("Q", "tail"), ("R", "empty"))),))
    goal = Atom("s", (mk_list([item_term(0)]),))
    assert score_example(GoalExample(goal, positive=False), prog, setting, ExactFacts(), SearchBudget()) is None
    # Unprovable negatives cost nothing.
    goal2 = Atom("s", (mk_list([item_term(0), item_term(1)]),))
    lab = score_example(GoalExample(goal2, positive=False), prog, setting, ExactFacts(), SearchBudget())
    assert lab is not None and lab.log_prob == 0.0


# ---------------------------------------------------------------------------
# induce
# ---------------------------------------------------------------------------


def test_induce_sum_program_from_ground_examples():
    setting = sum_setting()
    examples = [
        GoalExample(int_goal([1, 2, 3], 6)),
        GoalExample(int_goal([2, 2], 4)),
        GoalExample(int_goal([5], 5)),
    ]
    out = induce(examples, setting, ExactFacts(), SearchBudget(max_clauses=2))
    assert out.induced is not None
    assert clause_texts(out.induced.program, setting) == SUM_TEXTS
    assert abs(out.induced.log_score - log_prior(2)) < 1e-12
    assert all(lab.log_prob == 0.0 for lab in out.induced.labelings)


def test_induce_prefers_fewer_clauses():
    # A single example provable by one clause: the prior must pick the
    # one-clause program even though the two-clause one also proves it.
    setting = sum_setting()
    out = induce([GoalExample(int_goal([5], 5))], setting, ExactFacts(), SearchBudget(max_clauses=2))
    assert out.induced is not None
    assert out.induced.program.size == 1
    assert clause_texts(out.induced.program, setting) == {"f(A,B) :- eq(A,B)."}
    assert abs(out.induced.log_score - log_prior(1)) < 1e-12


def test_induce_noisy_items_scores_products():
    # Varied lengths matter: a singleton rules out programs whose every
    # clause consumes two items, and a three-item sequence rules out the
    # non-recursive add-then-eq chain.
    tables = {
        0: digit_table(3),
        1: digit_table(4),
        2: digit_table(1),
        3: digit_table(5),
        4: digit_table(1),
        5: digit_table(2),
        6: digit_table(3),
        7: digit_table(4),
    }
    facts = TableFacts(tables)
    setting = sum_setting()
    examples = [
        GoalExample(item_goal([0, 1], 7)),
        GoalExample(item_goal([2, 3], 6)),
        GoalExample(item_goal([4, 5, 6], 6)),
        GoalExample(item_goal([7], 4)),
    ]
    out = induce(examples, setting, facts, SearchBudget(max_clauses=2))
    assert out.induced is not None
    assert clause_texts(out.induced.program, setting) == SUM_TEXTS
    want = log_prior(2) + 8 * math.log(0.9)
    assert abs(out.induced.log_score - want) < 1e-9
    assert out.induced.labelings[0].items_dict() == {0: 3, 1: 4}
    assert out.induced.labelings[1].items_dict() == {2: 1, 3: 5}
    assert out.induced.labelings[2].items_dict() == {4: 1, 5: 2, 6: 3}
    assert out.induced.labelings[3].items_dict() == {7: 4}


def test_induce_pruning_toggle_identical_outcome():
    tables = {i: digit_table((i % 9) + 1, peak=0.7) for i in range(6)}
    facts = TableFacts(tables)
    setting = sum_setting()
    examples = [
        GoalExample(item_goal([0, 1, 2], 6)),
        GoalExample(item_goal([3, 4, 5], 15)),
    ]
    on = induce(examples, setting, facts, SearchBudget(max_clauses=2, pruning=True))
    off = induce(examples, setting, facts, SearchBudget(max_clauses=2, pruning=False))
    assert on.induced is not None and off.induced is not None
    assert on.induced.program.key() == off.induced.program.key()
    assert on.induced.program.size == off.induced.program.size
    assert on.induced.log_score == off.induced.log_score


def test_induce_worker_count_does_not_change_result():
    tables = {i: digit_table(i + 1, peak=0.8) for i in range(4)}
    facts = TableFacts(tables)
    setting = sum_setting()
    examples = [
        GoalExample(item_goal([0, 1], 5)),
        GoalExample(item_goal([2, 3], 7)),
    ]
    one = induce(examples, setting, facts, SearchBudget(max_clauses=2, workers=1))
    two = induce(examples, setting, facts, SearchBudget(max_clauses=2, workers=2))
    assert one.induced.program.key() == two.induced.program.key()
    assert one.induced.log_score == two.induced.log_score
    assert one.induced.labelings == two.induced.labelings


def test_induce_budget_exhaustion_is_reported():
    setting = sum_setting()
    out = induce(
        [GoalExample(int_goal([1, 2, 3], 6))],
        setting,
        ExactFacts(),
        SearchBudget(max_clauses=2, max_nodes=5),
    )
    assert out.induced is None
    assert out.budget_exhausted


def test_induce_sorted_concept_with_invention():
    setting = sorted_setting()
    labels = {0: 1, 1: 3, 2: 5, 10: 2, 11: 4, 20: 7, 30: 2, 31: 1, 40: 1, 41: 6, 42: 2}
    facts = ExactFacts(labels, pairs=lambda a, b: labels[a] <= labels[b])

    def s_goal(ids):
        return Atom("s", (mk_list([item_term(i) for i in ids]),))

    examples = [
        GoalExample(s_goal([0, 1, 2])),
        GoalExample(s_goal([10, 11])),
        GoalExample(s_goal([20])),
        GoalExample(s_goal([30, 31]), positive=False),
        GoalExample(s_goal([40, 41, 42]), positive=False),
    ]
    out = induce(examples, setting, facts, SearchBudget(max_clauses=3))
    assert out.induced is not None
    texts = clause_texts(out.induced.program, setting)
    assert "s(A) :- tail(A,B), empty(B)." in texts
    assert any(t in texts for t in ("s(A) :- s_1(A,B), s(B).",))
    assert "s_1(A,B) :- nn(A), tail(A,B)." in texts
    assert out.induced.program.size == 3
    assert abs(out.induced.log_score - log_prior(3)) < 1e-12


# ---------------------------------------------------------------------------
# entails (ground abducibles as arithmetic)
# ---------------------------------------------------------------------------


def ground_kb():
    kb = standard_kb(BK)

    def ground_add(args, s):
        items = proper_list_items(s.apply(args[0]))
        if items and len(items) >= 2 and all(isinstance(t, Int) for t in items[:2]):
            out = mk_list([Int(items[0].value + items[1].value)] + items[2:])
            s2 = unify(args[1], out, s)
            if s2 is not None:
                yield s2

    def ground_eq(args, s):
        items = proper_list_items(s.apply(args[0]))
        if items is not None and len(items) == 1:
            s2 = unify(args[1], items[0], s)
            if s2 is not None:
                yield s2

    def ground_nn(args, s):
        items = proper_list_items(s.apply(args[0]))
        if (
            items
            and len(items) >= 2
            and isinstance(items[0], Int)
            and isinstance(items[1], Int)
            and items[0].value <= items[1].value
        ):
            yield s

    kb.add_builtin("add", 2, ground_add)
    kb.add_builtin("eq", 2, ground_eq)
    kb.add_builtin("nn", 1, ground_nn)
    return kb


def test_entails_ground_sum():
    kb = ground_kb()
    rules = default_metarules()
    assert entails(SUM_PROG, kb, parse_atom("f([1,2,3], 6)"), rules)
    assert not entails(SUM_PROG, kb, parse_atom("f([1,2,3], 7)"), rules)
    assert entails(SUM_PROG, kb, parse_atom("f([5], 5)"), rules)
    assert not entails(SUM_PROG, kb, parse_atom("f([], 0)"), rules)


def test_entails_ground_sorted_with_invented_symbol():
    prog = Program(
        (
            MetaSub("mono_rec", (("P", "s"), ("Q", "s_1"))),
            MetaSub("mono_chain", (("P", "s"), ("Q", "tail"), ("R", "empty"))),
            MetaSub("precon", (("P", "s_1"), ("Q", "nn"), ("R", "tail"))),
        ),
        (("s_1", 2),),
    )
    kb = ground_kb()
    rules = default_metarules()
    assert entails(prog, kb, parse_atom("s([1,2,3])"), rules)
    assert entails(prog, kb, parse_atom("s([4])"), rules)
    assert not entails(prog, kb, parse_atom("s([2,1,3])"), rules)


def test_abduction_entails_round_trip():
    # Pin the abduced pseudo-labels into a ground goal; the same program
    # must then entail it deductively.
    tables = {0: digit_table(2), 1: digit_table(5)}
    facts = TableFacts(tables)
    setting = sum_setting()
    out = induce([GoalExample(item_goal([0, 1], 7))], setting, facts, SearchBudget(max_clauses=2))
    assert out.induced is not None
    lab = out.induced.labelings[0].items_dict()
    ground_goal = Atom("f", (mk_list([Int(lab[0]), Int(lab[1])]), Int(7)))
    assert entails(out.induced.program, ground_kb(), ground_goal, default_metarules())
