"""Hypothesis strategies for small smooth expressions, forms and fields."""

import itertools
from functools import lru_cache

import sympy as sp
from hypothesis import strategies as st

import edsym.symexpr as sx
from edsym.geometry import Chart, DiffForm, SmoothMap, VectorField

COORDS = ("a", "b", "c", "e")
SYMS = tuple(sx.symbol(n) for n in COORDS)
CHART = Chart("P", COORDS)
SOURCE = Chart("S", ("s", "t", "r"))
SOURCE_SYMS = tuple(sx.symbol(n) for n in SOURCE.coords)
SMALL = Chart("Q", COORDS[:3])


@lru_cache(maxsize=None)
def expressions(syms=SYMS, max_leaves=6):
    """Polynomials decorated with bounded exp, sin and rational kernels; smooth everywhere."""
    atoms = st.one_of(st.sampled_from(syms), st.integers(-3, 3).map(sp.Integer))
    return st.recursive(
        atoms,
        lambda inner: st.one_of(
            st.tuples(inner, inner).map(lambda p: p[0] + p[1]),
            st.tuples(inner, inner).map(lambda p: p[0] * p[1]),
            inner.map(lambda u: sp.exp(sp.sin(u))),
            inner.map(sp.sin),
            inner.map(lambda u: 1 / (2 + u**2)),
        ),
        max_leaves=max_leaves,
    )


@lru_cache(maxsize=None)
def monomial_sums(syms=SYMS, kernels=True, terms=3):
    """Sums of a few short products of coordinates and, optionally, exp and sin kernels."""
    factor = st.sampled_from(syms)
    if kernels:
        factor = st.one_of(factor, st.sampled_from(syms).map(sp.exp), st.sampled_from(syms).map(sp.sin))
    term = st.tuples(st.integers(-3, 3), st.lists(factor, max_size=2)).map(lambda t: sp.Mul(t[0], *t[1]))
    return st.lists(term, min_size=1, max_size=terms).map(lambda ts: sp.Add(*ts))


@st.composite
def forms(draw, degree=None, chart=CHART, syms=SYMS):
    p = draw(st.integers(0, 2)) if degree is None else degree
    idx = list(itertools.combinations(range(chart.dim), p))
    chosen = draw(st.lists(st.sampled_from(idx), min_size=1, max_size=3, unique=True))
    return DiffForm(chart, p, {i: draw(expressions(syms, 3)) for i in chosen})


@st.composite
def fields(draw, chart=CHART, syms=SYMS, kernels=True, terms=3):
    return VectorField(chart, tuple(draw(monomial_sums(syms, kernels, terms)) for _ in chart.coords))


@st.composite
def maps(draw):
    comps = {n: draw(expressions(SOURCE_SYMS, 2)) for n in COORDS}
    return SmoothMap.from_mapping(SOURCE, CHART, comps, "phi")
