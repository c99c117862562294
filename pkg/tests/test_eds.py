import pytest

import edsym.symexpr as sx
from edsym.eds import (Coframe, CoframeDegenerate, EDSPresentation, RankInconsistent, UnsupportedDegree,
                       derived_system, ideals_equal, membership, membership_many, rank_at_samples, span_equal,
                       structure_equations)
from edsym.geometry import Chart, df, exterior_derivative, wedge
from edsym.jets import JetChart, contact_system

P = sx.parse

J2 = JetChart.standard("J2", ["x"], ["u"], 2)
K = contact_system(J2)
th0, th1 = K.oneforms
dx = J2.chart.d("x")

M = JetChart.from_relations("M", ["x", "y"], ["y", "w", "w_y", "w_yy", "x", "v", "v_x", "v_xx"], [
    ("w", P("w_y"), "y"), ("w_y", P("w_yy"), "y"), ("v", P("v_x"), "x"), ("v_x", P("v_xx"), "x")])
I = contact_system(M)

N = Chart("N", ("x", "y", "V", "W", "V_x", "W_y"))
BETA1 = N.d("V") - P("V_x") * N.d("x") + P("exp(W)") * N.d("y")
BETA2 = N.d("W") + P("exp(V)") * N.d("x") - P("W_y") * N.d("y")
PIH = N.d("V_x") - P("exp(V + W)") * N.d("y")
PIC = N.d("W_y") - P("exp(V + W)") * N.d("x")


# ---------------------------------------------------------------- membership

def test_contact_two_forms_belong_to_the_ideal(plan):
    assert membership(K, exterior_derivative(th0), plan).verdict
    assert membership(K, wedge(th1, dx), plan).verdict
    assert membership(K, th0 + P("x^2") * th1, plan).verdict


def test_forms_outside_the_ideal_are_rejected(plan):
    res = membership(I, wedge(M.chart.d("v_xx"), M.chart.d("w_yy")), plan)
    assert not res.verdict
    assert max(res.residuals) > plan.tolerance
    assert not membership(K, dx, plan).verdict


def test_membership_of_many_forms_keeps_order(plan):
    out = membership_many(K, [dx, th0, wedge(dx, th1), wedge(dx, J2.chart.d("u"))], plan)
    assert [r.verdict for r in out] == [False, True, True, True]


def test_membership_rejects_three_forms(plan):
    with pytest.raises(UnsupportedDegree):
        membership(K, wedge(th0, th1, dx), plan)


def test_non_closed_presentation_omits_derivatives(plan):
    alg = EDSPresentation(J2.chart, (th0,), (), closed=False)
    assert not membership(alg, exterior_derivative(th0), plan).verdict
    assert membership(EDSPresentation(J2.chart, (th0,)), exterior_derivative(th0), plan).verdict


# ---------------------------------------------------------------- spans and ranks

def test_ranks(plan):
    assert rank_at_samples(I, plan) == 4
    assert rank_at_samples(EDSPresentation(N), plan) == 0
    assert rank_at_samples(EDSPresentation(N, (BETA1, BETA2, BETA1 + BETA2)), plan) == 2


def test_rank_that_jumps_across_samples_is_reported():
    C = Chart("C", ("x", "y"))
    jumpy = EDSPresentation(C, (P("x + sqrt(x^2)") * C.d("y"),))
    with pytest.raises(RankInconsistent):
        rank_at_samples(jumpy, sx.SamplePlan(sample_count=16))


def test_span_equality_is_pointwise(plan):
    assert span_equal([BETA1, BETA2], [BETA1 - BETA2, P("exp(V)") * (BETA1 + BETA2)], plan)
    assert not span_equal([BETA1, BETA2], [BETA1, PIH], plan)
    assert span_equal([], [], plan)


def test_ideal_equality_of_two_presentations(plan):
    B = EDSPresentation(N, (BETA1, BETA2))
    other = EDSPresentation(N, (BETA1 + BETA2, P("exp(W)") * BETA2))
    assert ideals_equal(B, other, plan)
    assert not ideals_equal(B, EDSPresentation(N, (BETA1,)), plan)


# ---------------------------------------------------------------- derived systems

def test_derived_system_of_second_order_jets(plan):
    D = derived_system(K, plan)
    assert span_equal(list(D.oneforms), [th0], plan)


def test_derived_system_of_the_product_keeps_the_lowest_contact_forms(plan):
    D = derived_system(I, plan)
    ch = M.chart
    want = [ch.d("w") - P("w_y") * ch.d("y"), ch.d("v") - P("v_x") * ch.d("x")]
    assert span_equal(list(D.oneforms), want, plan)
    assert rank_at_samples(D, plan) == 2


def test_derived_system_of_an_integrable_system_is_itself(plan):
    C = Chart("C", ("x", "y", "z"))
    S = EDSPresentation(C, (df(C, P("x*y + z")),))
    assert span_equal(list(derived_system(S, plan).oneforms), list(S.oneforms), plan)


# ---------------------------------------------------------------- structure equations

def test_structure_equations_of_the_quotient_coframe(plan):
    C = Coframe(N, (BETA1, BETA2, PIH, N.d("x"), PIC, N.d("y")), ("b1", "b2", "ph", "om", "pc", "oc"))
    se = structure_equations(C, plan)
    assert se.residual_ok
    assert se.coefficient("b1", "ph", "om") == -1
    assert se.coefficient("om", "ph", "b1") == 0
    assert se.coefficient("b1", "om", "ph") == 1
    assert sx.normalize(se.coefficient("b1", "b2", "oc") - P("exp(W)")) == 0
    assert se.coefficient("b2", "pc", "oc") == -1
    assert sx.normalize(se.coefficient("b2", "b1", "om") - P("exp(V)")) == 0
    # reassembled by hand
    want = -wedge(PIH, N.d("x")) + P("exp(W)") * wedge(BETA2, N.d("y"))
    assert (exterior_derivative(BETA1) - want).is_zero()
    assert se.lines()[3] == "d(om) = 0"


def test_flat_coframe_has_no_structure(plan):
    C = Chart("C", ("x", "y", "z"))
    se = structure_equations(Coframe(C, (C.d("x"), C.d("y"), C.d("z"))), plan)
    assert all(not cs for cs in se.coefficients)


def test_maurer_cartan_forms_of_rotations(plan):
    # left-invariant forms on SO(3) in Euler angles
    C = Chart("E", ("p", "q", "r"), box=(("q", (0.3, 2.8)),))
    w1 = P("sin(q)*sin(r)") * C.d("p") + P("cos(r)") * C.d("q")
    w2 = P("sin(q)*cos(r)") * C.d("p") - P("sin(r)") * C.d("q")
    w3 = P("cos(q)") * C.d("p") + C.d("r")
    se = structure_equations(Coframe(C, (w1, w2, w3), ("w1", "w2", "w3")), plan)
    assert se.residual_ok
    consts = {(i, j, k): se.coefficient(i, j, k) for i in range(3) for j in range(3) for k in range(3)}
    assert all(c.is_number for c in consts.values())
    assert abs(consts[0, 1, 2]) == 1 and abs(consts[1, 2, 0]) == 1 and abs(consts[2, 0, 1]) == 1


def test_degenerate_coframes_are_refused(plan):
    C = Chart("C", ("x", "y"))
    with pytest.raises(CoframeDegenerate):
        Coframe(C, (C.d("x"),))
    with pytest.raises(CoframeDegenerate):
        structure_equations(Coframe(C, (C.d("x"), 2 * C.d("x"))), plan)


def test_generators_are_validated():
    from edsym.geometry import GeometryError
    with pytest.raises(GeometryError):
        EDSPresentation(N, (wedge(BETA1, BETA2),))
    with pytest.raises(GeometryError):
        EDSPresentation(N, (th0,))


def test_derived_system_rejects_two_form_generators(plan):
    from edsym.eds import EDSError
    with pytest.raises(EDSError):
        derived_system(EDSPresentation(N, (BETA1,), (wedge(PIH, N.d("x")),)), plan)
