from fractions import Fraction

import pytest
import sympy as sp
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import edsym.symexpr as sx
from edsym.darboux import (CrossTermPresent, DarbouxError, Decomposition, InconsistentRanks, LieAlgebra, Poly,
                           check_darboux, check_decomposition, check_max_compatible, count_real_roots,
                           diagonal_reduction, extension_singular_systems, has_2dim_subalgebra, is_subalgebra,
                           maurer_cartan_algebra, projected_algebras, rational_rank, row_reduce, sturm_sequence,
                           sylvester_resultant, vessiot_dimension)
from edsym.eds import Coframe, structure_equations
from edsym.geometry import Chart, wedge

from conftest import corpus_model

P = sx.parse
K1 = Chart("K1", ("y", "w", "w_y", "w_yy"))
K2 = Chart("K2", ("x", "v", "v_x", "v_xx"))

HEISENBERG = LieAlgebra.from_dict(3, {(0, 1): [0, 0, 1]})
BOREL_PLUS = LieAlgebra.from_dict(3, {(0, 1): [0, 1, 0], (0, 2): [0, 0, 1]})


@pytest.fixture(scope="module")
def m():
    return corpus_model("ex31")


# ---------------------------------------------------------------- Lie algebras

def test_classification_of_small_algebras():
    assert LieAlgebra.abelian(3).classify() == "abelian R^3"
    assert LieAlgebra.from_dict(2, {(0, 1): [1, 0]}).classify() == "2-dim non-abelian"
    assert LieAlgebra.so3().classify() == "so(3)"
    assert LieAlgebra.sl2().classify() == "sl(2,R)"
    gl2 = LieAlgebra.from_dict(4, {(1, 2): [0, 0, 2, 0], (1, 3): [0, 0, 0, -2], (2, 3): [0, 1, 0, 0]})
    assert gl2.classify() == "R+sl(2,R)"
    u2 = LieAlgebra.from_dict(4, {(1, 2): [0, 0, 0, 1], (2, 3): [0, 1, 0, 0], (3, 1): [0, 0, 1, 0]})
    assert u2.classify() == "R+so(3)"


def test_jacobi_identity_is_checked():
    assert LieAlgebra.so3().jacobi_ok() and HEISENBERG.jacobi_ok()
    # J(e1, e2, e3) = [e2, [e3, e1]] = e3
    bad = LieAlgebra.from_dict(3, {(0, 1): [0, 0, 1], (0, 2): [1, 0, 0]})
    assert not bad.jacobi_ok()


def test_antisymmetric_entries_must_agree():
    with pytest.raises(DarbouxError):
        LieAlgebra.from_dict(2, {(0, 1): [1, 0], (1, 0): [1, 0]})


def test_rotations_have_no_plane_subalgebra():
    res = has_2dim_subalgebra(LieAlgebra.so3())
    assert not res.exists and res.witness is None
    assert len(res.certificate) == 3


@pytest.mark.parametrize("L", [LieAlgebra.sl2(), LieAlgebra.abelian(3), HEISENBERG, BOREL_PLUS])
def test_other_three_dimensional_algebras_have_one(L):
    res = has_2dim_subalgebra(L)
    assert res.exists
    w = res.witness
    if w.get("exact") and "a" in w and "b" in w:
        i, j, k = res.certificate[-1]["chart"]
        u = [Fraction(0)] * 3
        v = [Fraction(0)] * 3
        u[i], u[k] = Fraction(1), Fraction(w["a"])
        v[j], v[k] = Fraction(1), Fraction(w["b"])
        assert is_subalgebra(L, [u, v])


def test_borel_subalgebra_of_sl2():
    assert is_subalgebra(LieAlgebra.sl2(), [[1, 0, 0], [0, 1, 0]])
    assert not is_subalgebra(LieAlgebra.sl2(), [[0, 1, 0], [0, 0, 1]])


def invertible_matrices():
    return st.lists(st.lists(st.integers(-3, 3), min_size=3, max_size=3), min_size=3, max_size=3).filter(
        lambda rows: sp.Matrix(rows).det() != 0)


@settings(max_examples=60)
@given(st.sampled_from(["so3", "sl2", "heis", "borel"]), invertible_matrices())
def test_plane_search_and_classification_are_basis_independent(which, rows):
    L = {"so3": LieAlgebra.so3(), "sl2": LieAlgebra.sl2(), "heis": HEISENBERG, "borel": BOREL_PLUS}[which]
    L2 = L.change_basis(rows)
    assert L2.jacobi_ok()
    assert L2.classify() == L.classify()
    assert has_2dim_subalgebra(L2).exists == has_2dim_subalgebra(L).exists


def test_algebra_from_structure_equations(plan):
    C = Chart("E", ("p", "q", "r"), box=(("q", (0.3, 2.8)),))
    w1 = P("sin(q)*sin(r)") * C.d("p") + P("cos(r)") * C.d("q")
    w2 = P("sin(q)*cos(r)") * C.d("p") - P("sin(r)") * C.d("q")
    w3 = P("cos(q)") * C.d("p") + C.d("r")
    se = structure_equations(Coframe(C, (w1, w2, w3)), plan)
    L = maurer_cartan_algebra(se, [0, 1, 2])
    assert L.classify() == "so(3)"
    assert not has_2dim_subalgebra(L).exists


# ---------------------------------------------------------------- exact algebra

def polys():
    return st.lists(st.integers(-6, 6), min_size=1, max_size=6).filter(lambda c: any(c))


@settings(max_examples=100)
@given(polys())
def test_real_root_count_matches_an_independent_count(coeffs):
    t = sp.Symbol("t")
    p = sp.Poly(list(reversed(coeffs)), t)
    assume(p.degree() > 0)
    assert count_real_roots(Poly(tuple(coeffs))) == len(set(sp.real_roots(p)))


def test_sturm_sequence_of_a_cubic():
    p = Poly((Fraction(-2), Fraction(0), Fraction(0), Fraction(1)))   # t^3 - 2
    seq = sturm_sequence(p)
    assert seq[0] == p and seq[1] == p.derivative()
    assert count_real_roots(p) == 1
    assert count_real_roots(p, Fraction(0), Fraction(1)) == 0
    assert count_real_roots(Poly((Fraction(-1), Fraction(0), Fraction(1)))) == 2


@settings(max_examples=60)
@given(st.lists(polys(), min_size=2, max_size=3), st.lists(polys(), min_size=2, max_size=3))
def test_resultant_matches_an_independent_resultant(f, g):
    a, b = sp.symbols("a b")
    assume(any(f[-1]) and any(g[-1]))
    F = [Poly(tuple(c)) for c in f]
    G = [Poly(tuple(c)) for c in g]
    fs = sum(sum(int(x) * b**k for k, x in enumerate(c)) * a**i for i, c in enumerate(f))
    gs = sum(sum(int(x) * b**k for k, x in enumerate(c)) * a**i for i, c in enumerate(g))
    want = sp.expand(sp.resultant(fs, gs, a))
    got = sylvester_resultant(F, G)
    got_expr = sum(sp.Rational(x.numerator, x.denominator) * b**k for k, x in enumerate(got.c))
    assert sp.expand(got_expr - want) == 0


@settings(max_examples=100)
@given(st.lists(st.lists(st.integers(-3, 3), min_size=4, max_size=4), min_size=1, max_size=4))
def test_rational_rank_matches_an_independent_rank(rows):
    fr = [[Fraction(x) for x in r] for r in rows]
    assert rational_rank(fr) == sp.Matrix(rows).rank()
    red, pivots = row_reduce(fr)
    assert len(red) == len(pivots) == rational_rank(fr)


# ---------------------------------------------------------------- decompositions

def test_decompositions_of_the_corpus_systems(m, plan):
    for name in ("DB", "DI1", "DI2"):
        rep = check_decomposition(m.decompositions[name], plan)
        assert rep.type == (2, 2) and rep.ideal_ok


def test_mixed_two_forms_are_reported(m, plan):
    D = m.decompositions["DB"]
    N = D.system.chart
    mixed = Decomposition(D.system, D.theta, D.hat, D.check, (wedge(m.forms["pih"], N.d("y")),), D.check2)
    with pytest.raises(CrossTermPresent):
        check_decomposition(mixed, plan)


def test_darboux_integrability(m, plan):
    rep = check_darboux(m.decompositions["DB"].singular_pair(), *m.integrals["FB"], plan)
    assert rep.darboux and rep.ranks == (2, 2) and rep.vessiot_dimension == 2
    assert rep.singular_ranks == (4, 4)
    rep = check_darboux(m.decompositions["DI1"].singular_pair(), *m.integrals["FI1"], plan)
    assert rep.darboux and rep.vessiot_dimension == 1
    rep = check_darboux(m.decompositions["DI2"].singular_pair(), *m.integrals["FI2"], plan)
    assert not rep.darboux


def test_vessiot_dimension():
    assert vessiot_dimension(6, 2, 2) == 2
    assert vessiot_dimension(5, 2, 2) == 1
    with pytest.raises(InconsistentRanks):
        vessiot_dimension(3, 2, 2)


# ---------------------------------------------------------------- product actions

def test_projected_algebras(m, plan):
    a1, a2 = projected_algebras(m.actions["G1"], (K1, K2), plan)
    assert a1.dim == 2 and a2.dim == 2
    assert a1.structure_constants(plan) == {(0, 1): [1, 0]}


def test_diagonal_reduction_of_the_nested_algebras(m, plan):
    red = diagonal_reduction(m.actions["G1"], (K1, K2), plan)
    assert (red.A1.dim, red.A2.dim, len(red.ideal_basis)) == (1, 1, 2)
    assert red.vessiot.algebra.classify() == "abelian R^1"
    red = diagonal_reduction(m.actions["H"], (K1, K2), plan)
    assert (red.A1.dim, red.A2.dim) == (0, 0)
    assert red.vessiot.algebra.classify() == "2-dim non-abelian"


def test_maximal_compatibility(m, plan):
    B = m.decompositions["DB"].singular_pair()
    beta2 = m.forms["beta2"]
    rec = extension_singular_systems(m.smooth_map("p2", plan), [beta2], B, m.decompositions["DI2"].singular_pair(),
                                     m.integrals["FI2"], m.integrals["FB"], plan)
    rep = check_max_compatible(rec, plan)
    assert rep.verdict and rep.kernel_dimension == 1
    assert rep.ranks_up == (2, 2) and rep.ranks_down_pulled == (1, 1)
    assert all(rep.sandwich)
    rec = extension_singular_systems(m.smooth_map("p1", plan), [beta2], B, m.decompositions["DI1"].singular_pair(),
                                     m.integrals["FI1"], m.integrals["FB"], plan)
    rep = check_max_compatible(rec, plan)
    assert not rep.verdict and rep.failed == ["i", "ii"]
