import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdpnet.rate_expr import (BinOp, Binding, BindError, Call, DomainError, Num, RateSyntaxError,
                              Var, compile_numpy, compile_program, eval_rate, identifiers,
                              lipschitz_probe, parse_rate_expr, to_text)


def ev(text, **values):
    return eval_rate(parse_rate_expr(text), Binding(values, {}))


def test_structural_parse():
    assert parse_rate_expr("k_p * G") == BinOp("*", Var("k_p"), Var("G"))


def test_whitespace_insensitive():
    assert parse_rate_expr("k_p*G") == parse_rate_expr("  k_p   *\tG ")


def test_scaled_literal():
    assert ev("2*P", P=1.5) == 3.0


def test_unbalanced_paren_position():
    with pytest.raises(RateSyntaxError) as info:
        parse_rate_expr("k_p * (")
    assert info.value.position == 8


@pytest.mark.parametrize("text", ["", "1 +", "2 3", "(1", "1)", "a $ b", "hill(1,2)"])
def test_syntax_errors(text):
    with pytest.raises(RateSyntaxError):
        parse_rate_expr(text)


def test_unknown_function():
    with pytest.raises(RateSyntaxError, match="unknown function"):
        parse_rate_expr("sin(P)")


@pytest.mark.parametrize("text, expected", [
    ("2+3*4", 14.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("8/4/2", 1.0),
    ("10-4-3", 3.0),
    ("2*-3", -6.0),
    ("exp(0)+1", 2.0),
    ("1e-1*10", 1.0),
])
def test_precedence(text, expected):
    assert ev(text) == pytest.approx(expected, abs=0, rel=1e-15)


def test_eval_examples():
    assert eval_rate(parse_rate_expr("gamma*P"), Binding({"P": 0.5}, {"gamma": 1.0})) == 0.5
    assert ev("hill(P,1,2)", P=1.0) == 0.5


@pytest.mark.parametrize("text, values", [
    ("1/P", {"P": 0.0}),
    ("P^-1", {"P": 0.0}),
    ("hill(P,0,1)", {"P": 0.0}),
])
def test_domain_errors(text, values):
    with pytest.raises(DomainError):
        ev(text, **values)


def test_negative_value_is_not_an_eval_error():
    assert ev("-1") == -1.0


def test_unbound_identifier():
    with pytest.raises(BindError):
        eval_rate(parse_rate_expr("k*P"), Binding({"P": 1.0}, {}))


def test_identifiers():
    assert identifiers(parse_rate_expr("k*hill(P,K,n)+exp(-x)")) == {"k", "P", "K", "n", "x"}


def test_lipschitz_probe_examples():
    assert lipschitz_probe(parse_rate_expr("2*P"), {"P": (0, 1)}, 11) == pytest.approx(2.0)
    assert lipschitz_probe(parse_rate_expr("3.0"), {"P": (0, 1)}, 5) == 0.0
    # finite differences of x^2 on 101 points: the last slope is 2 - 1/100
    v = lipschitz_probe(parse_rate_expr("P^2"), {"P": (0, 1)}, 101)
    assert 1.98 <= v <= 2.0
    assert v == pytest.approx(1.99, abs=1e-12)


def test_lipschitz_probe_validates():
    with pytest.raises(ValueError):
        lipschitz_probe(parse_rate_expr("P"), {"P": (0, 1)}, 1)
    with pytest.raises(ValueError):
        lipschitz_probe(parse_rate_expr("P"), {"P": (1, 1)}, 3)
    with pytest.raises(DomainError):
        lipschitz_probe(parse_rate_expr("1/P"), {"P": (0, 1)}, 3)


def test_compile_numpy_matches_eval():
    expr = parse_rate_expr("k*hill(P,K,2) + exp(-P)/(1+G)")
    params = {"k": 2.0, "K": 0.7}
    fn = compile_numpy(expr, params)
    P = np.linspace(0, 3, 7)
    G = np.arange(7.0)
    np.testing.assert_allclose(fn({"P": P, "G": G}),
                               eval_rate(expr, Binding({"P": P, "G": G}, params)), rtol=1e-15)
    with pytest.raises(DomainError):
        compile_numpy(parse_rate_expr("1/P"), {})({"P": np.zeros(2)})


def test_compile_program_shape():
    ops, args, depth = compile_program(parse_rate_expr("a*P+1"), {"P": 0}, {"a": 2.0})
    assert len(ops) == len(args) == 5
    assert depth == 2


# --- generated expressions --------------------------------------------------------

names = st.sampled_from(["P", "G", "k_on", "x1"])
numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False).map(lambda v: Num(float(v)))
leaves = st.one_of(numbers, names.map(Var))


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda t: BinOp(*t)),
        children.map(lambda c: Call("exp", (c,))),
        st.tuples(children, children, children).map(lambda t: Call("hill", t)),
        children.map(lambda c: BinOp("-", Num(0.0), c)),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_round_trip(tree):
    text = to_text(tree)
    once = parse_rate_expr(text)
    assert parse_rate_expr(to_text(once)) == once


@settings(max_examples=200, deadline=None)
@given(trees, st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_printed_text_evaluates_like_tree(tree, p, g):
    binding = Binding({"P": p, "G": g, "k_on": 1.5, "x1": 0.25}, {})
    try:
        direct = eval_rate(tree, binding)
    except (DomainError, OverflowError):
        return
    again = eval_rate(parse_rate_expr(to_text(tree)), binding)
    assert math.isclose(direct, again, rel_tol=1e-12, abs_tol=1e-300) or direct == again


@settings(max_examples=100, deadline=None)
@given(trees, st.floats(0.1, 3.0))
def test_eval_is_deterministic(tree, p):
    binding = Binding({"P": p, "G": 1.0, "k_on": 2.0, "x1": 0.5}, {})
    try:
        a = eval_rate(tree, binding)
    except DomainError:
        with pytest.raises(DomainError):
            eval_rate(tree, binding)
        return
    assert eval_rate(tree, binding) == a
