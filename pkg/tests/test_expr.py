"""Parser, evaluator and printer for coefficient expressions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinspec import expr
from thinspec.expr import (
    BinOp,
    Call,
    EvalError,
    ExprSyntaxError,
    Name,
    Neg,
    Num,
    evaluate,
    free_names,
    parse,
    to_source,
)


def ev(src, x1=0.0, y1=0.0, y2=0.0):
    return evaluate(parse(src), x1=x1, y1=y1, y2=y2)


# hand-computed values; transcendentals via math.* as the independent reference
GOLDEN = [
    ("2 + 3", {}, 5.0),
    ("2 - 3 - 4", {}, -5.0),
    ("2 * 3 + 4", {}, 10.0),
    ("2 + 3 * 4", {}, 14.0),
    ("24 / 4 / 3", {}, 2.0),
    ("2 ^ 3", {}, 8.0),
    ("2 ^ 3 ^ 2", {}, 512.0),  # right-associative
    ("2 ^ -3", {}, 0.125),
    ("-2 ^ 2", {}, -4.0),  # unary minus binds looser than ^
    ("(-2) ^ 2", {}, 4.0),
    ("--3", {}, 3.0),
    ("1 / 8", {}, 0.125),
    ("0.5 + .25", {}, 0.75),
    ("1e2 + 1.5e-2", {}, 100.015),
    ("pi", {}, math.pi),
    ("2*pi", {}, 2.0 * math.pi),
    ("x1 ^ 2 - y1 * y2", {"x1": 3.0, "y1": 2.0, "y2": 5.0}, -1.0),
    ("sqrt(16) + abs(-3)", {}, 7.0),
    ("sin(pi / 6)", {}, math.sin(math.pi / 6)),
    ("cos(2*pi*y1)", {"y1": 0.25}, math.cos(math.pi / 2)),
    ("exp(1)", {}, math.e),
    ("2 + cos(2*pi*y1) * exp(-x1^2)", {"x1": 1.0, "y1": 0.125},
     2.0 + math.cos(math.pi / 4) * math.exp(-1.0)),
]


@pytest.mark.parametrize("src,point,expected", GOLDEN)
def test_golden_values(src, point, expected):
    got = ev(src, **point)
    assert got == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_vectorized_evaluation_broadcasts():
    y1 = np.linspace(0.0, 1.0, 7)
    got = ev("2 + cos(2*pi*y1)", y1=y1)
    assert got.shape == (7,)
    np.testing.assert_allclose(got, 2.0 + np.cos(2 * np.pi * y1), rtol=1e-15)


def test_mixed_scalar_array_broadcast():
    y1 = np.array([[0.0, 0.5], [0.25, 0.75]])
    got = ev("x1 + y1", x1=2.0, y1=y1)
    np.testing.assert_allclose(got, 2.0 + y1)


@pytest.mark.parametrize("src", [
    "2 +", "(2", "2)", "* 3", "2 ** 3", "sin 3", "sin(", "f(3)", "x3",
    "2..5", "", "2 3", "x1 y1", "cos()",
])
def test_syntax_errors(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_syntax_error_reports_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse("1 + $")
    assert err.value.offset == 4


@pytest.mark.parametrize("src,point", [
    ("1 / y1", {"y1": 0.0}),
    ("sqrt(-1 + x1)", {"x1": 0.0}),
    ("(-2) ^ 0.5", {}),
])
def test_domain_errors(src, point):
    with pytest.raises(EvalError):
        ev(src, **point)


def test_free_names_excludes_constants():
    assert free_names(parse("pi * 2")) == frozenset()
    assert free_names(parse("x1 * y2 + sin(y1)")) == frozenset({"x1", "y1", "y2"})
    assert free_names(parse("cos(2*pi*y1)")) == frozenset({"y1"})


def test_printed_form_reparses_identically():
    ast = parse("2 + 3*cos(2*pi*y1) - x1^-2")
    assert parse(to_source(ast)) == ast


_leaf = st.one_of(
    st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(Num),
    st.sampled_from(["x1", "y1", "y2", "pi"]).map(Name),
)


def _compound(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(
            lambda t: BinOp(op=t[0], left=t[1], right=t[2])
        ),
        st.tuples(st.sampled_from(expr.FUNCTIONS), children).map(
            lambda t: Call(func=t[0], arg=t[1])
        ),
    )


ast_strategy = st.recursive(_leaf, _compound, max_leaves=25)


@given(ast_strategy)
@settings(max_examples=100, deadline=None)
def test_parse_print_roundtrip(ast):
    assert parse(to_source(ast)) == ast
