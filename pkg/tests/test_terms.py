import pytest
from hypothesis import given, settings, strategies as st

from abdlearn.parser import parse_clause, parse_term
from abdlearn.terms import (
    NIL,
    Atom,
    Clause,
    Int,
    Struct,
    Subst,
    Sym,
    Var,
    fresh_name,
    mk_list,
    pretty_clause,
    print_clause,
    print_term,
    proper_list_items,
    rename_apart,
    unify,
)


def t(src):
    return parse_term(src)


class TestUnify:
    def test_var_binds_constant(self):
        s = unify(Var("X"), Int(3))
        assert s is not None
        assert s.apply(Var("X")) == Int(3)

    def test_mismatched_constants(self):
        assert unify(Int(3), Int(4)) is None
        assert unify(Sym("a"), Sym("b")) is None
        assert unify(Int(3), Sym("a")) is None

    def test_structural(self):
        # checked by applying the unifier back to both sides
        a = t("f(X,g(Y))")
        b = t("f(g(Z),g(2))")
        s = unify(a, b)
        assert s is not None
        assert s.apply(a) == s.apply(b)
        assert s.apply(Var("Y")) == Int(2)
        assert s.apply(Var("X")) == s.apply(t("g(Z)"))

    def test_occurs_check_rejects(self):
        assert unify(Var("X"), t("f(X)")) is None

    def test_occurs_check_can_be_disabled(self):
        assert unify(Var("X"), t("f(X)"), occurs_check=False) is not None

    def test_lists(self):
        s = unify(t("[1,2|T]"), t("[1,2,3]"))
        assert s is not None
        assert s.apply(Var("T")) == t("[3]")

    def test_apply_is_idempotent(self):
        a = t("f(X,g(Y),Z)")
        b = t("f(h(Y),g(k(W)),W)")
        s = unify(a, b)
        assert s is not None
        once = s.apply(a)
        assert s.apply(once) == once


# random term generator for the symmetry property
_names = st.sampled_from(["a", "b", "c", "f", "g"])
_vars = st.sampled_from(["X", "Y", "Z"])


def _terms(depth):
    if depth == 0:
        return st.one_of(
            st.integers(-5, 5).map(Int),
            _names.map(Sym),
            _vars.map(Var),
        )
    sub = _terms(depth - 1)
    return st.one_of(
        st.integers(-5, 5).map(Int),
        _names.map(Sym),
        _vars.map(Var),
        st.tuples(_names, st.lists(sub, min_size=1, max_size=3)).map(
            lambda p: Struct(p[0], tuple(p[1]))
        ),
    )


def _variants(a, b, mapping):
    """Structural equality up to a bijective variable renaming."""
    if isinstance(a, Var) and isinstance(b, Var):
        fwd = mapping.setdefault(("f", a.name), b.name)
        bwd = mapping.setdefault(("b", b.name), a.name)
        return fwd == b.name and bwd == a.name
    if type(a) is not type(b):
        return False
    if isinstance(a, Struct):
        return (
            a.functor == b.functor
            and len(a.args) == len(b.args)
            and all(_variants(x, y, mapping) for x, y in zip(a.args, b.args))
        )
    return a == b


@given(_terms(2), _terms(2))
@settings(max_examples=200, deadline=None)
def test_unify_symmetric(a, b):
    s1 = unify(a, b)
    s2 = unify(b, a)
    assert (s1 is None) == (s2 is None)
    if s1 is not None:
        # each unifier equalizes both inputs, and the results coincide
        # up to variable renaming
        assert s1.apply(a) == s1.apply(b)
        assert s2.apply(a) == s2.apply(b)
        assert _variants(s1.apply(a), s2.apply(a), {})


@given(_terms(2))
@settings(max_examples=200, deadline=None)
def test_print_parse_roundtrip(term):
    assert parse_term(print_term(term)) == term


class TestRenameApart:
    def test_fresh_names_never_collide(self):
        c = parse_clause("p(X,Y) :- q(X,Z), r(Z,Y).")
        r1 = rename_apart(c)
        r2 = rename_apart(c)
        v1 = {v.name for a in (r1.head, *r1.body) for t_ in a.args for v in [t_] if isinstance(v, Var)}
        v2 = {v.name for a in (r2.head, *r2.body) for t_ in a.args for v in [t_] if isinstance(v, Var)}
        assert v1.isdisjoint(v2)

    def test_shared_vars_stay_shared(self):
        c = parse_clause("p(X) :- q(X,X).")
        r = rename_apart(c)
        hx = r.head.args[0]
        assert r.body[0].args == (hx, hx)

    def test_counter_monotone(self):
        a = fresh_name()
        b = fresh_name()
        assert a != b


class TestListsAndPrinting:
    def test_mk_list_roundtrip(self):
        lst = mk_list([Int(1), Int(2), Int(3)])
        assert print_term(lst) == "[1,2,3]"
        assert proper_list_items(lst) == [Int(1), Int(2), Int(3)]

    def test_open_tail_prints_bar(self):
        lst = mk_list([Int(1)], tail=Var("T"))
        assert print_term(lst) == "[1|T]"
        assert proper_list_items(lst) is None

    def test_nil(self):
        assert print_term(NIL) == "[]"

    def test_clause_print(self):
        c = Clause(Atom("f", (Var("A"), Var("B"))), (Atom("eq", (Var("A"), Var("B"))),))
        assert print_clause(c) == "f(A,B) :- eq(A,B)."

    def test_pretty_normalizes_vars(self):
        c = parse_clause("f(Foo,Bar) :- add(Foo,Baz), f(Baz,Bar).")
        assert pretty_clause(c) == "f(A,B) :- add(A,C), f(C,B)."


class TestSubst:
    def test_walk_chases_chains(self):
        s = Subst().bind("X", Var("Y")).bind("Y", Int(2))
        assert s.walk(Var("X")) == Int(2)

    def test_apply_resolves_fixed_point(self):
        s = Subst().bind("X", Struct("g", (Var("Y"),))).bind("Y", Int(2))
        out = s.apply(Var("X"))
        assert out == t("g(2)")
        assert s.apply(out) == out
