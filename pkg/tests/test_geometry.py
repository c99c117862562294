import itertools

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import edsym.symexpr as sx
from edsym.geometry import (Chart, ChartMismatch, DiffForm, GeometryError, NotProjectable, SmoothMap, VectorField,
                            df, exterior_derivative, hook, lie_bracket, lie_derivative, pullback,
                            pushforward_projectable, shuffle_sign, wedge)
from strategies import SMALL, SYMS, fields, forms, maps

P = sx.parse

# a quotient chart carrying two forms, and two Monge-Ampere targets
N = Chart("N", ("x", "y", "V", "W", "V_x", "W_y"))
N1 = Chart("N1", ("x", "y", "u1", "u1x", "u1y"))
N2 = Chart("N2", ("x", "y", "u2", "u2x", "u2y"))
BETA1 = N.d("V") - P("V_x") * N.d("x") + P("exp(W)") * N.d("y")
BETA2 = N.d("W") + P("exp(V)") * N.d("x") - P("W_y") * N.d("y")


def contact(chart, u, ux, uy):
    return chart.d(u) - P(ux) * chart.d("x") - P(uy) * chart.d("y")


def same(a: DiffForm, b: DiffForm) -> bool:
    return (a - b).is_zero()


# ---------------------------------------------------------------- algebra

def test_shuffle_sign():
    assert shuffle_sign([0, 1, 2]) == (1, (0, 1, 2))
    assert shuffle_sign([1, 0, 2]) == (-1, (0, 1, 2))
    assert shuffle_sign([2, 0, 1]) == (1, (0, 1, 2))
    assert shuffle_sign([1, 1])[0] == 0


def test_wedge_is_graded_commutative():
    dx, dy = N.d("x"), N.d("y")
    assert same(wedge(dx, dy), -wedge(dy, dx))
    assert wedge(BETA1, BETA1).is_structurally_zero()
    w2 = wedge(BETA1, BETA2)
    assert w2.degree == 2
    assert same(wedge(w2, dx), wedge(dx, w2))


def test_form_terms_are_validated():
    with pytest.raises(GeometryError):
        DiffForm(N, 2, {(1, 0): 1})
    with pytest.raises(GeometryError):
        DiffForm(N, 1, {(0, 1): 1})


def test_exterior_derivative_of_the_quotient_forms():
    got = exterior_derivative(BETA1)
    want = -wedge(N.d("V_x"), N.d("x")) + P("exp(W)") * wedge(N.d("W"), N.d("y"))
    assert same(got, want)
    assert exterior_derivative(exterior_derivative(BETA2)).is_structurally_zero()


def test_hook_contracts_first_slot():
    X = N.partial("x")
    assert hook(X, wedge(N.d("x"), N.d("y"))) == N.d("y")
    assert hook(X, wedge(N.d("y"), N.d("x"))) == -N.d("y")
    assert hook(X, DiffForm.function(N, P("V"))).is_structurally_zero()


def test_lie_derivative_of_a_function_is_the_directional_derivative():
    X = VectorField.from_mapping(N, {"V": 1, "x": P("y")})
    f = P("V*x")
    assert lie_derivative(X, DiffForm.function(N, f)).as_function() == sx.normalize(X(f))
    assert sx.normalize(X(f) - P("x + V*y")) == 0


def test_bracket_of_translation_and_scaling():
    M = Chart("M", ("w", "v", "w_y", "v_x"))
    X1 = VectorField.from_mapping(M, {"w": 1, "v": -1})
    X2 = VectorField.from_mapping(M, {"w": P("w"), "v": P("v"), "w_y": P("w_y"), "v_x": P("v_x")})
    assert (lie_bracket(X1, X2) - X1).is_zero()
    assert (lie_bracket(X2, X1) + X1).is_zero()


def test_chart_mismatch_is_reported():
    with pytest.raises(ChartMismatch):
        wedge(N.d("x"), N1.d("x"))


# ---------------------------------------------------------------- maps

def test_pullbacks_of_the_contact_forms():
    p1 = SmoothMap.from_mapping(N, N1, {"x": P("x"), "y": P("y"), "u1": P("V - W"), "u1x": P("V_x + exp(V)"),
                                        "u1y": P("-W_y - exp(W)")}, "p1")
    p2 = SmoothMap.from_mapping(N, N2, {"x": P("x"), "y": P("y"), "u2": P("V + W + log(2)"),
                                        "u2x": P("V_x - exp(V)"), "u2y": P("W_y - exp(W)")}, "p2")
    assert same(pullback(p1, contact(N1, "u1", "u1x", "u1y")), BETA1 - BETA2)
    assert same(pullback(p2, contact(N2, "u2", "u2x", "u2y")), BETA1 + BETA2)
    assert p1.is_submersion(sx.SamplePlan())


def test_pullback_requires_the_target_chart():
    with pytest.raises(ChartMismatch):
        pullback(SmoothMap.identity(N1), BETA1)


def test_pushforward_of_a_vertical_field_vanishes():
    K = Chart("K", ("y", "w", "w_y", "w_yy"))
    R = Chart("R", ("y", "tw", "tw_y"))
    q = SmoothMap.from_mapping(K, R, {"y": P("y"), "tw": P("w - y*w_y"), "tw_y": P("w_yy")}, "q")
    s = SmoothMap.from_mapping(R, K, {"y": P("y"), "w": P("tw"), "w_y": 0, "w_yy": P("tw_y")}, "s")
    Z = VectorField.from_mapping(K, {"w": P("y"), "w_y": 1})
    assert pushforward_projectable(q, Z, s).is_zero()
    Y = VectorField.from_mapping(K, {"y": 1, "w": P("w_y"), "w_y": P("w_yy")})
    pushed = pushforward_projectable(q, Y, s)
    assert (pushed - VectorField.from_mapping(R, {"y": 1, "tw": P("-y*tw_y")})).is_zero()
    with pytest.raises(NotProjectable):
        pushforward_projectable(q, VectorField.from_mapping(K, {"w": P("w")}), s)


def test_map_composition():
    f = SmoothMap.from_mapping(N1, N2, {"x": P("x"), "y": P("y"), "u2": P("2*u1"), "u2x": P("u1x"),
                                        "u2y": P("u1y")})
    g = SmoothMap.identity(N1)
    comp = f.compose(g)
    assert comp.components == f.components


# ---------------------------------------------------------------- properties

@given(forms())
def test_d_squared_vanishes(a):
    assert exterior_derivative(exterior_derivative(a)).is_zero()


@given(forms(), forms())
def test_d_is_a_graded_derivation(a, b):
    lhs = exterior_derivative(wedge(a, b))
    rhs = wedge(exterior_derivative(a), b) + (-1) ** a.degree * wedge(a, exterior_derivative(b))
    assert same(lhs, rhs)


def coordinate_lie_derivative(X: VectorField, a: DiffForm) -> DiffForm:
    """Lie derivative by the Leibniz rule on f dx^I, with L_X dx^i = d(X^i)."""
    chart = a.chart
    out = DiffForm.zero(chart, a.degree)
    for idx, f in a.terms.items():
        basis = [chart.d(chart.coords[i]) for i in idx]
        out = out + (X(f) * wedge(*basis) if basis else DiffForm.function(chart, X(f)))
        for k in range(len(idx)):
            factors = list(basis)
            factors[k] = df(chart, X.coeffs[idx[k]])
            out = out + f * wedge(*factors)
    return out


@given(fields(), forms())
def test_cartan_formula_matches_coordinate_lie_derivative(X, a):
    assert same(lie_derivative(X, a), coordinate_lie_derivative(X, a))


@given(maps(), forms())
def test_pullback_commutes_with_d(phi, a):
    assert same(pullback(phi, exterior_derivative(a)), exterior_derivative(pullback(phi, a)))


@settings(max_examples=100)
@given(fields(), forms(degree=1), st.integers(1, 2).flatmap(lambda p: forms(degree=p)))
def test_hook_is_an_antiderivation(X, a, b):
    lhs = hook(X, wedge(a, b))
    rhs = wedge(hook(X, a), b) - wedge(a, hook(X, b))
    assert same(lhs, rhs)


SMALL_FIELDS = fields(SMALL, SYMS[:3], kernels=False, terms=2)


@given(SMALL_FIELDS, SMALL_FIELDS, SMALL_FIELDS)
def test_jacobi_identity(X, Y, Z):
    total = lie_bracket(X, lie_bracket(Y, Z)) + lie_bracket(Y, lie_bracket(Z, X)) + lie_bracket(Z, lie_bracket(X, Y))
    assert total.is_zero()


@settings(max_examples=50)
@given(st.permutations(range(4)))
def test_shuffle_sign_matches_permutation_parity(perm):
    sign, ordered = shuffle_sign(perm)
    inversions = sum(1 for i, j in itertools.combinations(range(4), 2) if perm[i] > perm[j])
    assert ordered == (0, 1, 2, 3) and sign == (-1) ** inversions


@settings(max_examples=50)
@given(forms(), forms())
def test_wedge_sign_rule(a, b):
    assert same(wedge(a, b), (-1) ** (a.degree * b.degree) * wedge(b, a))
