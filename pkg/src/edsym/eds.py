"""Exterior differential systems generated by 1-forms and 2-forms.

Membership and rank are decided pointwise at seeded sample points.  Anything
that must come back as a formula (derived systems, structure equations,
reduction modulo a Pfaffian system) goes through ``SymbolicEliminator``:
Gauss-Jordan elimination on expressions where every "is this entry zero?"
question is answered by evaluating the entry at the sample points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import sympy as sp

from . import symexpr as sx
from .geometry import (
    Chart,
    DiffForm,
    GeometryError,
    VectorField,
    exterior_derivative,
    form_exprs,
    frame_values,
    two_form_values,
    wedge,
)
from .symexpr import Expr, SamplePlan

RANK_RTOL = 1e-8


class EDSError(Exception):
    """Base class for errors in this module."""


class RankInconsistent(EDSError):
    pass


class CoframeDegenerate(EDSError):
    pass


class UnsupportedDegree(EDSError):
    pass


# --------------------------------------------------------------------------
# numeric helpers
# --------------------------------------------------------------------------

def numeric_rank(mat: np.ndarray, mag: float = 0.0) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0:
        return 0
    thresh = RANK_RTOL * max(s[0], mag, 1e-300)
    if s[0] <= 1e-12 * (1.0 + mag):
        return 0
    return int(np.sum(s > thresh))


def null_basis(mat: np.ndarray, rank: int) -> np.ndarray:
    """Orthonormal basis (columns) of the right kernel of ``mat``."""
    n = mat.shape[1]
    if mat.shape[0] == 0:
        return np.eye(n)
    _, _, vt = np.linalg.svd(mat)
    return vt[rank:].T


def sample_for(chart: Chart, plan: SamplePlan, forms: Sequence[DiffForm] = (),
               fields: Sequence[VectorField] = (), exprs: Sequence[Expr] = ()) -> sx.SampleSet:
    """Points where every coefficient involved is regular."""
    es = list(form_exprs(forms)) + [c for X in fields for c in X.coeffs if c != 0] + list(exprs)
    return chart.samples(plan, es)


def ranks_at(forms: Sequence[DiffForm], ss: sx.SampleSet, n: int) -> list[int]:
    if not forms:
        return [0] * ss.n
    vals, mags = frame_values(forms, ss.evaluator, n)
    return [numeric_rank(vals[k], float(mags[k].max())) for k in range(ss.n)]


# --------------------------------------------------------------------------
# symbolic elimination with an evaluation oracle
# --------------------------------------------------------------------------

class SymbolicEliminator:
    """Gauss-Jordan elimination over expressions.

    Each entry carries its values at the sample points.  An entry is treated
    as zero exactly when it passes the zero test there; such entries are
    replaced by an exact 0, so no division by a function vanishing on the
    domain can happen.  Pivots prefer nonzero constants, then entries that
    are nonzero at every point, then the largest magnitude at the first
    sample point.
    """

    def __init__(self, rows: Sequence[Sequence[Expr]], ev: sx.Evaluator, tol: float, simplify: bool = True):
        self.ev = ev
        self.tol = tol
        self.simplify = simplify
        self.rows = [[sp.sympify(e) for e in r] for r in rows]
        self.nrows = len(self.rows)
        self.ncols = len(self.rows[0]) if self.rows else 0
        self.val = np.zeros((self.nrows, self.ncols, ev.n))
        self.zero = np.ones((self.nrows, self.ncols), bool)
        for i, r in enumerate(self.rows):
            for j, e in enumerate(r):
                self._set(i, j, e)
        self.pivots: list[tuple[int, int]] = []

    def _set(self, i: int, j: int, e: Expr, raw: Expr | None = None):
        if e == 0:
            self.rows[i][j] = sp.Integer(0)
            self.val[i, j] = 0.0
            self.zero[i, j] = True
            return
        v, m, bad = self.ev(raw if raw is not None else e)
        if sx.numeric_is_zero(np.where(bad, 0.0, v), m, self.tol):
            self.rows[i][j] = sp.Integer(0)
            self.val[i, j] = 0.0
            self.zero[i, j] = True
            return
        if raw is not None and self.simplify:
            e = sx.normalize(e)
            v, _, _ = self.ev(e)
        self.rows[i][j] = e
        self.val[i, j] = v
        self.zero[i, j] = False

    def _score(self, i: int, j: int):
        e = self.rows[i][j]
        v = self.val[i, j]
        is_const = 1 if e.is_number else 0
        all_nonzero = 1 if np.all(np.abs(v) > 1e-8 * (1 + np.abs(v).max())) else 0
        return (is_const, all_nonzero, abs(v[0]), -j, -i)

    def run(self, pivot_cols: Sequence[int] | None = None) -> list[tuple[int, int]]:
        cols = list(range(self.ncols)) if pivot_cols is None else list(pivot_cols)
        free_rows = set(range(self.nrows))
        used_cols: set[int] = set()
        while True:
            best = None
            for i in free_rows:
                for j in cols:
                    if j in used_cols or self.zero[i, j]:
                        continue
                    sc = self._score(i, j)
                    if best is None or sc > best[0]:
                        best = (sc, i, j)
            if best is None:
                break
            _, p, c = best
            self._pivot(p, c)
            self.pivots.append((p, c))
            free_rows.discard(p)
            used_cols.add(c)
        return self.pivots

    def _pivot(self, p: int, c: int):
        piv = self.rows[p][c]
        inv = 1 / piv
        for j in range(self.ncols):
            if j == c:
                continue
            if not self.zero[p, j]:
                raw = self.rows[p][j] * inv
                self._set(p, j, raw, raw)
        self.rows[p][c] = sp.Integer(1)
        self.val[p, c] = 1.0
        for i in range(self.nrows):
            if i == p or self.zero[i, c]:
                continue
            f = self.rows[i][c]
            for j in range(self.ncols):
                if j == c or self.zero[p, j]:
                    continue
                raw = self.rows[i][j] - f * self.rows[p][j]
                self._set(i, j, raw, raw)
            self._set(i, c, sp.Integer(0))

    def pivot_row_of(self) -> dict[int, int]:
        return {c: r for r, c in self.pivots}


# --------------------------------------------------------------------------
# Pfaffian spans and reduction modulo 1-forms
# --------------------------------------------------------------------------

@dataclass
class EchelonSpan:
    """A span of 1-forms in reduced echelon form.

    ``rows[k]`` is dx^{pivots[k]} + sum over free columns, so modulo the span
    dx^{pivots[k]} is congruent to minus the free part.
    """

    chart: Chart
    pivots: list[int]
    rows: list[DiffForm]

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def free(self) -> list[int]:
        s = set(self.pivots)
        return [i for i in range(self.chart.dim) if i not in s]

    def substitution(self) -> dict[int, DiffForm]:
        out = {}
        for p, row in zip(self.pivots, self.rows):
            out[p] = self.chart_d(p) - row
        return out

    def chart_d(self, i: int) -> DiffForm:
        return DiffForm(self.chart, 1, {(i,): sp.Integer(1)})


def echelon_span(forms: Sequence[DiffForm], plan: SamplePlan, ss: sx.SampleSet | None = None,
                 check_rank: bool = True) -> EchelonSpan:
    if not forms:
        raise EDSError("empty span")
    chart = forms[0].chart
    n = chart.dim
    ss = ss or sample_for(chart, plan, forms)
    rows = [[f.terms.get((i,), sp.Integer(0)) for i in range(n)] for f in forms]
    el = SymbolicEliminator(rows, ss.evaluator, plan.tolerance)
    piv = el.run()
    if check_rank:
        rk = ranks_at(forms, ss, n)
        if any(r != len(piv) for r in rk):
            raise RankInconsistent(f"pointwise ranks {rk} versus symbolic rank {len(piv)}")
    out_rows = []
    pivots = []
    for r, c in sorted(piv, key=lambda rc: rc[1]):
        out_rows.append(DiffForm(chart, 1, {(j,): el.rows[r][j] for j in range(n)}))
        pivots.append(c)
    return EchelonSpan(chart, pivots, out_rows)


def reduce_modulo(a: DiffForm, span: EchelonSpan) -> DiffForm:
    """Rewrite a form using only the free differentials of an echelon span."""
    sub = span.substitution()
    chart = a.chart
    out = DiffForm.zero(chart, a.degree)
    for idx, c in a.terms.items():
        if not any(i in sub for i in idx):
            out = out + DiffForm(chart, a.degree, {idx: c})
            continue
        pieces = [sub[i] if i in sub else span.chart_d(i) for i in idx]
        out = out + c * wedge(*pieces)
    return out


# --------------------------------------------------------------------------
# Presentations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EDSPresentation:
    """Generators of an ideal: 1-forms, 2-forms, and whether d of the 1-forms is included."""

    chart: Chart
    oneforms: tuple[DiffForm, ...] = ()
    twoforms: tuple[DiffForm, ...] = ()
    closed: bool = True
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "oneforms", tuple(self.oneforms))
        object.__setattr__(self, "twoforms", tuple(self.twoforms))
        for f in self.oneforms:
            if f.chart != self.chart or f.degree != 1:
                raise GeometryError(f"{self.name}: 1-form generator on wrong chart or degree")
        for f in self.twoforms:
            if f.chart != self.chart or f.degree != 2:
                raise GeometryError(f"{self.name}: 2-form generator on wrong chart or degree")

    @property
    def is_pfaffian(self) -> bool:
        return not self.twoforms and self.closed

    def algebraic_twoforms(self) -> list[DiffForm]:
        out = list(self.twoforms)
        if self.closed:
            out.extend(exterior_derivative(t) for t in self.oneforms)
        return out

    def all_forms(self) -> list[DiffForm]:
        return list(self.oneforms) + self.algebraic_twoforms()


@dataclass(frozen=True)
class MembershipResult:
    verdict: bool
    degree: int
    coefficients: tuple[tuple[float, ...], ...]
    residuals: tuple[float, ...]
    scales: tuple[float, ...]
    points: tuple[dict, ...] = ()

    def __bool__(self) -> bool:
        return self.verdict

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "degree": self.degree,
                "coefficients": [list(c) for c in self.coefficients],
                "residuals": list(self.residuals), "scales": list(self.scales),
                "points": [dict(p) for p in self.points]}


def _membership_numeric(ones, twos, targets, ss, n, tol) -> list[MembershipResult]:
    """Pointwise membership of several targets of one degree in the algebraic ideal."""
    ev = ss.evaluator
    deg = targets[0].degree
    pts = ss.n
    results = {k: ([], [], []) for k in range(len(targets))}
    if ones:
        g_val, g_mag = frame_values(ones, ev, n)
    if deg == 1:
        t_val, t_mag = frame_values(targets, ev, n)
        for p in range(pts):
            gmat = g_val[p].T if ones else np.zeros((n, 0))
            gnorm = float(g_mag[p].max()) if ones else 0.0
            for k in range(len(targets)):
                b = t_val[p, k]
                if gmat.shape[1]:
                    c, *_ = np.linalg.lstsq(gmat, b, rcond=None)
                else:
                    c = np.zeros(0)
                r = float(np.abs(gmat @ c - b).max())
                scale = float(t_mag[p, k].max()) + float(np.abs(c).sum()) * gnorm
                results[k][0].append(tuple(map(float, c)))
                results[k][1].append(r)
                results[k][2].append(scale)
    else:
        t_val, t_mag = two_form_values(targets, ev, n)
        w_val, w_mag = two_form_values(twos, ev, n) if twos else (None, None)
        for p in range(pts):
            if ones:
                gmat = g_val[p]
                rk = numeric_rank(gmat, float(g_mag[p].max()))
                K = null_basis(gmat, rk)
            else:
                K = np.eye(n)
            m = K.shape[1]
            iu = np.triu_indices(m, 1)
            if twos:
                cols = np.array([(K.T @ w_val[p, j] @ K)[iu] for j in range(len(twos))]).T
                wnorm = float(w_mag[p].max())
            else:
                cols = np.zeros((len(iu[0]), 0))
                wnorm = 0.0
            for k in range(len(targets)):
                b = (K.T @ t_val[p, k] @ K)[iu]
                if cols.shape[1] and b.size:
                    c, *_ = np.linalg.lstsq(cols, b, rcond=None)
                else:
                    c = np.zeros(cols.shape[1])
                r = float(np.abs(cols @ c - b).max()) if b.size else 0.0
                scale = float(t_mag[p, k].max()) + float(np.abs(c).sum()) * wnorm
                results[k][0].append(tuple(map(float, c)))
                results[k][1].append(r)
                results[k][2].append(scale)
    points = tuple(ss.points())
    out = []
    for k in range(len(targets)):
        coeffs, res, scales = results[k]
        ok = all(r <= tol * (1.0 + s) for r, s in zip(res, scales))
        out.append(MembershipResult(ok, deg, tuple(coeffs), tuple(res), tuple(scales), points))
    return out


def membership_many(I: EDSPresentation, forms: Sequence[DiffForm], plan: SamplePlan) -> list[MembershipResult]:
    """Membership of several forms (degree 1 or 2) in the algebraic ideal of I."""
    forms = list(forms)
    if not forms:
        return []
    for a in forms:
        if a.chart != I.chart:
            raise GeometryError("form and system live on different charts")
        if a.degree not in (1, 2):
            raise UnsupportedDegree(f"degree {a.degree} membership is not supported")
    twos = I.algebraic_twoforms()
    ones = list(I.oneforms)
    ss = sample_for(I.chart, plan, ones + twos + forms)
    out: list[MembershipResult | None] = [None] * len(forms)
    for deg in (1, 2):
        idx = [k for k, a in enumerate(forms) if a.degree == deg]
        if not idx:
            continue
        res = _membership_numeric(ones, twos, [forms[k] for k in idx], ss, I.chart.dim, plan.tolerance)
        for k, r in zip(idx, res):
            out[k] = r
    return out  # type: ignore[return-value]


def membership(I: EDSPresentation, a: DiffForm, plan: SamplePlan | None = None) -> MembershipResult:
    """Pointwise membership of a 1- or 2-form in the ideal generated algebraically by I."""
    plan = plan or SamplePlan()
    if a.degree not in (1, 2):
        raise UnsupportedDegree(f"degree {a.degree} membership is not supported")
    return membership_many(I, [a], plan)[0]


def algebraic_ideal(chart: Chart, oneforms: Sequence[DiffForm], twoforms: Sequence[DiffForm] = (),
                    name: str = "") -> EDSPresentation:
    """Ideal generated algebraically (no exterior derivatives added)."""
    return EDSPresentation(chart, tuple(oneforms), tuple(twoforms), closed=False, name=name)


def contains_all(I: EDSPresentation, forms: Sequence[DiffForm], plan: SamplePlan) -> tuple[bool, list[MembershipResult]]:
    res = membership_many(I, forms, plan)
    return all(r.verdict for r in res), res


def ideals_equal(I: EDSPresentation, J: EDSPresentation, plan: SamplePlan) -> bool:
    """Two-sided containment of all algebraic generators of degree 1 and 2."""
    a, _ = contains_all(I, J.all_forms(), plan)
    b, _ = contains_all(J, I.all_forms(), plan)
    return a and b


def span_equal(a: Sequence[DiffForm], b: Sequence[DiffForm], plan: SamplePlan) -> bool:
    """Pointwise equality of the spans of two lists of 1-forms."""
    if not a and not b:
        return True
    if not a or not b:
        forms = list(a) + list(b)
        chart = forms[0].chart
        ss = sample_for(chart, plan, forms)
        return all(r == 0 for r in ranks_at(forms, ss, chart.dim))
    chart = a[0].chart
    ss = sample_for(chart, plan, list(a) + list(b))
    ra = ranks_at(a, ss, chart.dim)
    rb = ranks_at(b, ss, chart.dim)
    rab = ranks_at(list(a) + list(b), ss, chart.dim)
    return ra == rb == rab


def rank_at_samples(P: EDSPresentation, plan: SamplePlan | None = None) -> int:
    """Common pointwise rank of the 1-form generators."""
    plan = plan or SamplePlan()
    if not P.oneforms:
        return 0
    ss = sample_for(P.chart, plan, P.oneforms)
    rk = ranks_at(P.oneforms, ss, P.chart.dim)
    if len(set(rk)) != 1:
        raise RankInconsistent(f"ranks {rk} vary across sample points")
    return rk[0]


def check_closed(I: EDSPresentation, plan: SamplePlan) -> bool:
    """d of every 1-form generator lies in the ideal."""
    if not I.oneforms:
        return True
    ok, _ = contains_all(algebraic_ideal(I.chart, I.oneforms, I.twoforms), [exterior_derivative(t) for t in I.oneforms], plan)
    return ok


# --------------------------------------------------------------------------
# derived system
# --------------------------------------------------------------------------

def derived_system(P: EDSPresentation, plan: SamplePlan | None = None) -> EDSPresentation:
    """{θ in span : dθ ≡ 0 mod span} for a Pfaffian system."""
    plan = plan or SamplePlan()
    if P.twoforms:
        raise EDSError("derived system is defined here for Pfaffian presentations only")
    chart = P.chart
    if not P.oneforms:
        return P
    ds = [exterior_derivative(t) for t in P.oneforms]
    ss = sample_for(chart, plan, list(P.oneforms) + ds)
    span = echelon_span(P.oneforms, plan, ss)
    free = span.free
    pairs = list(combinations(free, 2))
    reduced = [reduce_modulo(dt, span) for dt in ds]
    # columns: generators; rows: free-pair coefficients
    rows = [[r.terms.get(pq, sp.Integer(0)) for r in reduced] for pq in pairs]
    r = len(P.oneforms)
    if not rows:
        return EDSPresentation(chart, P.oneforms, (), True, P.name + "'")
    el = SymbolicEliminator(rows, ss.evaluator, plan.tolerance)
    piv = el.run()
    # consistency of the kernel dimension across points
    orig = np.array([[ss.evaluator(e)[0] if e != 0 else np.zeros(ss.n) for e in row] for row in rows])
    for k in range(ss.n):
        if numeric_rank(orig[:, :, k], float(np.abs(orig[:, :, k]).max())) != len(piv):
            raise RankInconsistent("rank of the torsion matrix varies across sample points")
    pivcols = {c: rr for rr, c in piv}
    kernel = []
    for f in range(r):
        if f in pivcols:
            continue
        vec = [sp.Integer(0)] * r
        vec[f] = sp.Integer(1)
        for c, rr in pivcols.items():
            vec[c] = -el.rows[rr][f]
        kernel.append(vec)
    gens = []
    for vec in kernel:
        form = DiffForm.zero(chart, 1)
        for a, t in zip(vec, P.oneforms):
            if a != 0:
                form = form + a * t
        gens.append(form.normalized())
    return EDSPresentation(chart, tuple(gens), (), True, P.name + "'")


# --------------------------------------------------------------------------
# coframes and structure equations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Coframe:
    chart: Chart
    forms: tuple[DiffForm, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "forms", tuple(self.forms))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"theta{i + 1}" for i in range(len(self.forms))))
        if len(self.forms) != self.chart.dim:
            raise CoframeDegenerate(f"{len(self.forms)} forms on a {self.chart.dim}-dimensional chart")

    def check(self, plan: SamplePlan) -> bool:
        ss = sample_for(self.chart, plan, self.forms)
        return all(r == self.chart.dim for r in ranks_at(self.forms, ss, self.chart.dim))

    def inverse(self, plan: SamplePlan, ss: sx.SampleSet | None = None) -> list[list[Expr]]:
        """Matrix Inv with dx^a = sum_i Inv[a][i] theta^i."""
        n = self.chart.dim
        ss = ss or sample_for(self.chart, plan, self.forms)
        rows = []
        for i, f in enumerate(self.forms):
            rows.append([f.terms.get((a,), sp.Integer(0)) for a in range(n)]
                        + [sp.Integer(1 if j == i else 0) for j in range(n)])
        el = SymbolicEliminator(rows, ss.evaluator, plan.tolerance)
        piv = el.run(pivot_cols=range(n))
        if len(piv) != n:
            raise CoframeDegenerate("coframe is not pointwise independent")
        prow = el.pivot_row_of()
        return [[el.rows[prow[a]][n + i] for i in range(n)] for a in range(n)]

    def expand(self, a: DiffForm, inv: list[list[Expr]]) -> dict[tuple[int, ...], Expr]:
        """Coefficients of a 1- or 2-form in the wedge basis of the coframe (unnormalized)."""
        n = self.chart.dim
        out: dict[tuple[int, ...], Expr] = {}
        if a.degree == 1:
            for (x,), c in a.terms.items():
                for i in range(n):
                    if inv[x][i] != 0:
                        out[(i,)] = out.get((i,), sp.Integer(0)) + c * inv[x][i]
            return out
        if a.degree == 2:
            for (x, y), c in a.terms.items():
                for j in range(n):
                    if inv[x][j] == 0 and inv[y][j] == 0:
                        continue
                    for k in range(j + 1, n):
                        term = inv[x][j] * inv[y][k] - inv[x][k] * inv[y][j]
                        if term != 0:
                            out[(j, k)] = out.get((j, k), sp.Integer(0)) + c * term
            return out
        raise UnsupportedDegree("expansion supports degrees 1 and 2")

    def assemble(self, coeffs: dict[tuple[int, ...], Expr], degree: int) -> DiffForm:
        out = DiffForm.zero(self.chart, degree)
        for idx, c in coeffs.items():
            out = out + c * wedge(*[self.forms[i] for i in idx])
        return out


@dataclass
class StructureEquations:
    coframe: Coframe
    coefficients: list[dict[tuple[int, int], Expr]]
    residual_ok: bool
    max_residual: float = 0.0

    def coefficient(self, i: str | int, j: str | int, k: str | int) -> Expr:
        names = self.coframe.names
        i, j, k = (names.index(x) if isinstance(x, str) else x for x in (i, j, k))
        sign = 1
        if j > k:
            j, k, sign = k, j, -1
        if j == k:
            return sp.Integer(0)
        return sign * self.coefficients[i].get((j, k), sp.Integer(0))

    def dtheta(self, i: int) -> DiffForm:
        return self.coframe.assemble(self.coefficients[i], 2)

    def lines(self) -> list[str]:
        names = self.coframe.names
        out = []
        for i, cs in enumerate(self.coefficients):
            terms = [f"({sx.to_str(c)})*{names[j]}&{names[k]}" for (j, k), c in sorted(cs.items())]
            out.append(f"d({names[i]}) = " + (" + ".join(terms) if terms else "0"))
        return out


def structure_equations(C: Coframe, plan: SamplePlan | None = None) -> StructureEquations:
    """dθ^i = sum_{j<k} c^i_jk θ^j∧θ^k with exact coefficients."""
    plan = plan or SamplePlan()
    ds = [exterior_derivative(t) for t in C.forms]
    ss = sample_for(C.chart, plan, list(C.forms) + ds)
    try:
        inv = C.inverse(plan, ss)
    except sx.AllSamplesSingular as exc:
        raise CoframeDegenerate(str(exc)) from exc
    ev = ss.evaluator
    coeffs = []
    for dt in ds:
        raw = C.expand(dt, inv)
        clean = {}
        for key, c in raw.items():
            v, m, bad = ev(c)
            if sx.numeric_is_zero(np.where(bad, 0.0, v), m, plan.tolerance):
                continue
            clean[key] = sx.simplify(c)
        coeffs.append(clean)
    se = StructureEquations(C, coeffs, True)
    # residual: reassemble and compare with d theta at fresh points
    worst = 0.0
    ok = True
    check_plan = plan.with_seed(plan.seed + 1)
    for i, dt in enumerate(ds):
        resid = se.dtheta(i) - dt
        for c in resid.terms.values():
            cert = C.chart.is_zero(c, check_plan)
            worst = max(worst, max(cert.residuals) if cert.residuals else 0.0)
            ok = ok and cert.verdict
    se.residual_ok = ok
    se.max_residual = worst
    return se
