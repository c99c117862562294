import math

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import edsym.symexpr as sx
from strategies import COORDS, SYMS, expressions

a, b, c, e = SYMS
POINT = {"a": 0.7, "b": -0.4, "c": 1.3, "e": 0.2}


def central_difference(expr, name, point, h=1e-5):
    up, down = dict(point), dict(point)
    up[name] += h
    down[name] -= h
    return (sx.eval_numeric(expr, up) - sx.eval_numeric(expr, down)) / (2 * h)


# ---------------------------------------------------------------- parsing

def test_print_is_canonical_for_a_quotient_invariant():
    assert sx.to_str(sx.parse("w_yy/w_y - w_y/(v + w)")) == "-w_y/(v + w) + w_yy/w_y"


def test_parse_respects_declared_coordinates():
    with pytest.raises(sx.UnknownCoordinate):
        sx.parse("x + q", coordinates=["x"])


@pytest.mark.parametrize("text", ["x +", "(x", "x ** ", "3 $ 4", ""])
def test_malformed_input_raises_parse_error(text):
    with pytest.raises(sx.ParseError):
        sx.parse(text)


def test_functions_and_constants_parse():
    got = sx.parse("exp(x)*sin(y) + log(2) + sqrt(x^2) + arcsin(y) + cot(x)")
    x, y = sx.symbol("x"), sx.symbol("y")
    want = sp.exp(x) * sp.sin(y) + sp.log(2) + sp.sqrt(x**2) + sp.asin(y) + sp.cot(x)
    assert sp.simplify(got - want) == 0


# ---------------------------------------------------------------- calculus

def test_derivative_of_quotient_invariant():
    f = sx.parse("w_yy/w_y - w_y/(v + w)")
    got = sx.diff(f, "w_y")
    assert sx.to_str(got) == "(-v*w_yy - w*w_yy - w_y^2)/(v*w_y^2 + w*w_y^2)"
    pt = {"v": 0.8, "w": 0.5, "w_y": 1.1, "w_yy": -0.3}
    assert sx.eval_numeric(got, pt) == pytest.approx(central_difference(f, "w_y", pt), rel=1e-7)


@pytest.mark.parametrize("text", ["exp(a*b)*sin(c)", "log(1 + a^2)/(b + 3)", "sqrt(2 + a*c)*cos(b)"])
def test_derivative_matches_finite_differences(text):
    f = sx.parse(text)
    for name in ("a", "b", "c"):
        assert sx.eval_numeric(sx.diff(f, name), POINT) == pytest.approx(
            central_difference(f, name, POINT), rel=1e-6, abs=1e-8)


def test_derivative_along_unknown_coordinate_raises():
    with pytest.raises(sx.UnknownCoordinate):
        sx.diff(sx.parse("x*y"), "z", coordinates=["x", "y"])


def test_substitution_is_simultaneous():
    got = sx.substitute(sx.parse("x + 2*y"), {"x": sx.parse("y"), "y": sx.parse("x")})
    assert got == sx.parse("y + 2*x")


def test_substitution_into_a_quotient_map():
    V = sx.parse("log(v_x/(v + w))")
    sub = sx.substitute(V, {"w": 0, "v": 1, "v_x": sx.parse("exp(V)")})
    assert sx.simplify(sp.expand_log(sub, force=True)) == sx.symbol("V")


# ---------------------------------------------------------------- evaluation

def test_evaluation_at_a_point():
    assert sx.eval_numeric(sx.parse("v_x/(v + w)"), {"v_x": 3, "v": 1, "w": 1}) == 1.5


@pytest.mark.parametrize("text,point", [
    ("log(v + w)", {"v": 0, "w": 0}),
    ("1/(v + w)", {"v": 1, "w": -1}),
    ("sqrt(x)", {"x": -1}),
    ("arcsin(x)", {"x": 2}),
])
def test_singular_points_raise_domain_violation(text, point):
    with pytest.raises(sx.DomainViolation):
        sx.eval_numeric(sx.parse(text), point)


def test_zero_test_accepts_identities_and_rejects_perturbations():
    ident = sx.parse("sin(a)^2 + cos(a)^2 - 1")
    assert sx.is_zero(ident).verdict
    cert = sx.is_zero(ident + sp.Rational(1, 10**6))
    assert not cert.verdict
    assert len(cert.points) == sx.SamplePlan().sample_count


def test_zero_test_is_reproducible_under_a_seed():
    f = sx.parse("a*b - exp(c)")
    p1 = sx.is_zero(f, sx.SamplePlan(seed=5))
    p2 = sx.is_zero(f, sx.SamplePlan(seed=5))
    p3 = sx.is_zero(f, sx.SamplePlan(seed=6))
    assert p1.points == p2.points and p1.residuals == p2.residuals
    assert p1.points != p3.points


def test_zero_test_samples_inside_constraints_and_box():
    f = sx.parse("log(v + w)")
    cert = sx.is_zero(f - f, coords=["v", "w"])
    assert cert.verdict
    cert = sx.is_zero(sx.parse("log(v + w) - 1"), coords=["v", "w"], constraints=[sx.parse("v + w")],
                      chart_box={"v": (0.5, 1.0)})
    for pt in cert.points:
        assert pt["v"] + pt["w"] > 0 and 0.5 <= pt["v"] <= 1.0


def test_zero_test_reports_missing_coordinates():
    with pytest.raises(sx.UnknownCoordinate):
        sx.is_zero(sx.parse("a + q"), coords=["a"])


def test_trigonometric_simplification():
    assert sx.simplify(sx.parse("1/(sin(u)^2 + cos(u)^2)")) == 1


# ---------------------------------------------------------------- properties

@given(expressions())
def test_mixed_partials_commute(f):
    d = sx.diff(sx.diff(f, "a"), "b") - sx.diff(sx.diff(f, "b"), "a")
    assert sx.is_zero(d, coords=COORDS).verdict


@given(expressions(max_leaves=4), expressions(max_leaves=4), st.sampled_from(COORDS))
def test_leibniz_rule(f, g, x):
    lhs = sx.diff(f * g, x)
    rhs = f * sx.diff(g, x) + g * sx.diff(f, x)
    assert sx.is_zero(lhs - rhs, coords=COORDS).verdict


@settings(max_examples=100)
@given(expressions(), expressions(max_leaves=3))
def test_substitute_then_evaluate_equals_evaluate_at_image(f, g):
    composed = sx.substitute(f, {"a": g})
    inner = sx.eval_numeric(g, POINT)
    assert sx.eval_numeric(composed, POINT) == pytest.approx(
        sx.eval_numeric(f, {**POINT, "a": inner}), rel=1e-9, abs=1e-9)


@settings(max_examples=100)
@given(expressions())
def test_normalize_is_idempotent(f):
    once = sx.normalize(f)
    assert sx.normalize(once) == once


@settings(max_examples=100)
@given(expressions())
def test_print_parse_round_trip(f):
    back = sx.parse(sx.to_str(f))
    assert sx.normalize(back - f) == 0


def test_numeric_agreement_with_math_module():
    f = sx.parse("exp(a)*sin(b) + sqrt(c)")
    assert sx.eval_numeric(f, POINT) == pytest.approx(math.exp(0.7) * math.sin(-0.4) + math.sqrt(1.3))
