"""Symmetry reduction of differential systems.

Given a free, transverse symmetry algebra Γ of a system I, an adapted
coframe splits the 1-forms of I into a block dual to Γ and a semi-basic
block; the 2-form generators are rewritten modulo I in semi-basic
differentials, and the quotient system is the pullback of the semi-basic
generators along a user-supplied cross-section.  Invariants, quotient
charts and sections are always inputs that get verified, never discovered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import sympy as sp

from . import symexpr as sx
from .eds import (
    EDSPresentation,
    MembershipResult,
    SymbolicEliminator,
    algebraic_ideal,
    echelon_span,
    membership_many,
    null_basis,
    numeric_rank,
    ranks_at,
    reduce_modulo,
    sample_for,
)
from .geometry import (
    Chart,
    ChartMismatch,
    DiffForm,
    SmoothMap,
    VectorField,
    evaluate_one_form,
    exterior_derivative,
    field_values,
    frame_values,
    lie_bracket,
    lie_derivative,
    pullback,
    wedge,
)
from .symexpr import Expr, SamplePlan


class ReductionError(Exception):
    pass


class NotFree(ReductionError):
    pass


class NotTransverse(ReductionError):
    pass


class NotInvariant(ReductionError):
    pass


class SectionNotValid(ReductionError):
    pass


class NotASubalgebra(ReductionError):
    pass


class NotSubmersion(ReductionError):
    pass


class FiberTangency(ReductionError):
    pass


# --------------------------------------------------------------------------
# Lie algebras of vector fields
# --------------------------------------------------------------------------

def real_span_coefficients(target: VectorField, basis: Sequence[VectorField], plan: SamplePlan,
                           max_den: int = 10**4) -> list[sp.Rational] | None:
    """Constant rational c with target = Σ c_k basis_k, or None.

    Values at all sample points are stacked into one linear system so that
    fields which are pointwise dependent but independent over the reals are
    handled; the rationalized answer is re-checked with the zero test.
    """
    chart = target.chart
    if not basis:
        return [] if target.is_zero(plan) else None
    ss = sample_for(chart, plan, fields=list(basis) + [target])
    bv, _ = field_values(basis, ss.evaluator, chart.dim)
    tv, tm = field_values([target], ss.evaluator, chart.dim)
    A = np.concatenate([bv[p].T for p in range(ss.n)], axis=0)
    b = np.concatenate([tv[p, 0] for p in range(ss.n)])
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.abs(A @ c - b).max() > 1e-7 * (1 + np.abs(b).max() + np.abs(A).max() * np.abs(c).sum()):
        return None
    rat = [sp.Rational(sx.rationalize(float(x), max_den).numerator, sx.rationalize(float(x), max_den).denominator)
           for x in c]
    diff = target
    for r, X in zip(rat, basis):
        if r != 0:
            diff = diff - r * X
    if not diff.is_zero(plan):
        return None
    return rat


@dataclass
class LieAction:
    """A finite-dimensional Lie algebra of vector fields given by a basis."""

    chart: Chart
    fields: tuple[VectorField, ...]
    name: str = ""
    _constants: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.fields = tuple(self.fields)
        for X in self.fields:
            if X.chart != self.chart:
                raise ChartMismatch(f"action {self.name}: field on {X.chart.name}")

    @property
    def dim(self) -> int:
        return len(self.fields)

    def structure_constants(self, plan: SamplePlan | None = None) -> dict[tuple[int, int], list[sp.Rational]]:
        """[X_i, X_j] = Σ_k c[i,j][k] X_k for i < j; raises if not closed."""
        plan = plan or SamplePlan()
        if self._constants is None:
            out = {}
            for i, j in combinations(range(self.dim), 2):
                br = lie_bracket(self.fields[i], self.fields[j])
                c = real_span_coefficients(br, self.fields, plan)
                if c is None:
                    raise NotASubalgebra(f"[{i + 1},{j + 1}] leaves the span of {self.name or 'the action'}")
                out[(i, j)] = c
            self._constants = out
        return self._constants

    def is_closed(self, plan: SamplePlan | None = None) -> bool:
        try:
            self.structure_constants(plan)
            return True
        except NotASubalgebra:
            return False

    def pointwise_ranks(self, plan: SamplePlan) -> list[int]:
        if not self.fields:
            return []
        ss = sample_for(self.chart, plan, fields=self.fields)
        vals, mags = field_values(self.fields, ss.evaluator, self.chart.dim)
        return [numeric_rank(vals[p], float(mags[p].max())) for p in range(ss.n)]

    def is_free(self, plan: SamplePlan) -> bool:
        return all(r == self.dim for r in self.pointwise_ranks(plan))


# --------------------------------------------------------------------------
# symmetry and transversality
# --------------------------------------------------------------------------

@dataclass
class CheckReport:
    verdict: bool
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.verdict


def is_symmetry(I: EDSPresentation, G: LieAction, plan: SamplePlan | None = None) -> CheckReport:
    """Lie derivative of every generator along every basis field lies in I."""
    plan = plan or SamplePlan()
    if G.chart != I.chart:
        raise ChartMismatch("action and system live on different charts")
    targets, labels = [], []
    for a, X in enumerate(G.fields):
        for b, g in enumerate(list(I.oneforms) + list(I.twoforms)):
            targets.append(lie_derivative(X, g))
            labels.append((a, b))
    res = membership_many(I, targets, plan)
    failures = [labels[k] for k, r in enumerate(res) if not r.verdict]
    return CheckReport(not failures, {"failures": failures, "checked": len(res),
                                      "max_residual": max((max(r.residuals) for r in res), default=0.0)})


def pairing_matrix(forms: Sequence[DiffForm], fields: Sequence[VectorField]) -> list[list[Expr]]:
    return [[evaluate_one_form(f, X) for X in fields] for f in forms]


def is_transverse(I: EDSPresentation, G: LieAction, plan: SamplePlan | None = None) -> CheckReport:
    """ann(I¹) ∩ span Γ = 0 pointwise."""
    plan = plan or SamplePlan()
    if G.chart != I.chart:
        raise ChartMismatch("action and system live on different charts")
    if not G.fields:
        return CheckReport(True, {"ranks": []})
    ss = sample_for(I.chart, plan, I.oneforms, G.fields)
    n = I.chart.dim
    if I.oneforms:
        fv, fm = frame_values(I.oneforms, ss.evaluator, n)
    gv, gm = field_values(G.fields, ss.evaluator, n)
    ranks = []
    for p in range(ss.n):
        if I.oneforms:
            pair = fv[p] @ gv[p].T
            ranks.append(numeric_rank(pair, float(fm[p].max() * gm[p].max() * n)))
        else:
            ranks.append(0)
    return CheckReport(all(r == G.dim for r in ranks), {"ranks": ranks, "dim": G.dim})


# --------------------------------------------------------------------------
# adapted coframe and semi-basic generators
# --------------------------------------------------------------------------

@dataclass
class AdaptedCoframe:
    dual: list[DiffForm]
    semibasic: list[DiffForm]
    omega: list[DiffForm]
    omega_coords: list[str]

    def all_forms(self) -> list[DiffForm]:
        return self.dual + self.semibasic + self.omega


def adapted_coframe(I: EDSPresentation, G: LieAction, plan: SamplePlan | None = None,
                    check: bool = True) -> AdaptedCoframe:
    """Coframe θ^i dual to Γ, semi-basic θ^a spanning the rest of I¹, semi-basic ω^u."""
    plan = plan or SamplePlan()
    chart = I.chart
    theta = list(I.oneforms)
    if check and G.fields:
        if not G.is_free(plan):
            raise NotFree(f"{G.name or 'action'} is not free at the sample points")
        if not is_transverse(I, G, plan):
            raise NotTransverse(f"{G.name or 'action'} is not transverse to {I.name or 'the system'}")
    span = echelon_span(theta, plan) if theta else None
    free = span.free if span else list(range(chart.dim))
    omega_coords = [chart.coords[i] for i in free]
    if not G.fields:
        return AdaptedCoframe([], theta, [chart.d(c) for c in omega_coords], omega_coords)
    k = G.dim
    r = len(theta)
    A = pairing_matrix(theta, G.fields)
    rows = [A[a] + [sp.Integer(1 if b == a else 0) for b in range(r)] for a in range(r)]
    ss = sample_for(chart, plan, theta, G.fields)
    el = SymbolicEliminator(rows, ss.evaluator, plan.tolerance)
    piv = el.run(pivot_cols=range(k))
    if len(piv) != k:
        raise NotTransverse("pairing matrix has deficient rank")
    prow = el.pivot_row_of()

    def combo(row: int) -> DiffForm:
        out = DiffForm.zero(chart, 1)
        for b in range(r):
            c = el.rows[row][k + b]
            if c != 0:
                out = out + c * theta[b]
        return out.normalized()

    dual = [combo(prow[i]) for i in range(k)]
    pivot_rows = set(prow.values())
    semibasic = []
    sb_rows = [a for a in range(r) if a not in pivot_rows]
    for a in sb_rows:
        f = combo(a)
        if not f.is_structurally_zero():
            semibasic.append(f)
    omega = []
    for c in omega_coords:
        w = chart.d(c)
        for i, X in enumerate(G.fields):
            coef = X.coeff(c)
            if coef != 0:
                w = w - coef * dual[i]
        omega.append(w.normalized())
    return AdaptedCoframe(dual, semibasic, omega, omega_coords)


def semibasic_two_forms(I: EDSPresentation, G: LieAction, coframe: AdaptedCoframe,
                        plan: SamplePlan | None = None) -> list[DiffForm]:
    """2-form generators rewritten as T_uv ω^u∧ω^v modulo I¹, independent ones only."""
    plan = plan or SamplePlan()
    chart = I.chart
    twos = I.algebraic_twoforms()
    if not twos:
        return []
    if I.oneforms:
        span = echelon_span(list(I.oneforms), plan)
        reduced = [reduce_modulo(t, span) for t in twos]
        free = span.free
    else:
        reduced = list(twos)
        free = list(range(chart.dim))
    pairs = list(combinations(free, 2))
    vecs = [[t.terms.get(pq, sp.Integer(0)) for pq in pairs] for t in reduced]
    if not pairs:
        return []
    ss = sample_for(chart, plan, reduced)
    el = SymbolicEliminator(vecs, ss.evaluator, plan.tolerance, simplify=False)
    piv = el.run()
    keep = sorted(r for r, _ in piv)
    omega_of = {chart.index(c): w for c, w in zip(coframe.omega_coords, coframe.omega)}
    out = []
    for r in keep:
        tau = DiffForm.zero(chart, 2)
        for (u, v), c in zip(pairs, vecs[r]):
            if c != 0:
                tau = tau + sx.normalize(c) * wedge(omega_of[u], omega_of[v])
        out.append(tau.normalized())
    return out


# --------------------------------------------------------------------------
# quotients
# --------------------------------------------------------------------------

@dataclass
class QuotientSpec:
    """Action, quotient chart, invariant map q and cross-section σ."""

    action: LieAction
    chart: Chart
    q: SmoothMap
    section: SmoothMap
    name: str = ""

    def __post_init__(self):
        if self.q.source != self.action.chart or self.q.target != self.chart:
            raise ChartMismatch(f"quotient {self.name}: invariant map must go from the action chart to the quotient chart")
        if self.section.source != self.chart or self.section.target != self.action.chart:
            raise ChartMismatch(f"quotient {self.name}: section must go from the quotient chart back")

    def validate(self, plan: SamplePlan | None = None) -> CheckReport:
        plan = plan or SamplePlan()
        M = self.action.chart
        details: dict = {}
        inv_fail = []
        for a, X in enumerate(self.action.fields):
            for name, h in zip(self.chart.coords, self.q.components):
                val = X(h)
                if val != 0 and not M.is_zero(val, plan).verdict:
                    inv_fail.append((a, name))
        details["invariance_failures"] = inv_fail
        details["submersion"] = self.q.is_submersion(plan)
        roundtrip = []
        for name, comp in zip(self.chart.coords, self.q.components):
            back = self.section.apply(comp)
            if not self.chart.is_zero(back - sx.symbol(name), plan).verdict:
                roundtrip.append(name)
        details["section_failures"] = roundtrip
        # the section must land inside the domain of the action chart
        ss = self.chart.samples(plan, list(self.section.components))
        inside = True
        for g in M.constraints:
            v, _, bad = ss.evaluator(self.section.apply(g))
            inside = inside and bool(np.all(~bad & (v > 0)))
        details["section_in_domain"] = inside
        ok = not inv_fail and details["submersion"] and not roundtrip and inside
        return CheckReport(ok, details)


@dataclass
class QuotientResult:
    system: EDSPresentation
    coframe: AdaptedCoframe
    twoforms_upstairs: list[DiffForm]
    roundtrip: list[MembershipResult]

    @property
    def roundtrip_ok(self) -> bool:
        return all(r.verdict for r in self.roundtrip)


def quotient(I: EDSPresentation, spec: QuotientSpec, plan: SamplePlan | None = None,
             name: str = "") -> QuotientResult:
    """Reduced system on the quotient chart with a round-trip certificate q*(out) ⊂ I."""
    plan = plan or SamplePlan()
    G = spec.action
    if G.chart != I.chart:
        raise ChartMismatch("action and system live on different charts")
    rep = spec.validate(plan)
    if not rep.verdict:
        raise SectionNotValid(f"quotient spec {spec.name} failed validation: {rep.details}")
    sym = is_symmetry(I, G, plan)
    if not sym.verdict:
        raise NotInvariant(f"{I.name} is not invariant under {G.name}: {sym.details['failures']}")
    cf = adapted_coframe(I, G, plan)
    taus = semibasic_two_forms(I, G, cf, plan)
    ones = [pullback(spec.section, t).normalized() for t in cf.semibasic]
    twos = [pullback(spec.section, t).normalized() for t in taus]
    ones = [f for f in ones if not f.is_structurally_zero()]
    twos = [f for f in twos if not f.is_structurally_zero()]
    out = EDSPresentation(spec.chart, tuple(ones), tuple(twos), True, name or f"{I.name}/{G.name}")
    back = [pullback(spec.q, f) for f in ones + twos]
    cert = membership_many(I, back, plan) if back else []
    return QuotientResult(out, cf, taus, cert)


def induced_projection(specH: QuotientSpec, specG: QuotientSpec, plan: SamplePlan | None = None,
                       name: str = "") -> SmoothMap:
    """p: N_H → N_G with p∘q_H = q_G, built as q_G∘σ_H."""
    plan = plan or SamplePlan()
    M = specH.action.chart
    if specG.action.chart != M:
        raise ChartMismatch("both quotients must start from the same chart")
    for X in specH.action.fields:
        for h in specG.q.components:
            val = X(h)
            if val != 0 and not M.is_zero(val, plan).verdict:
                raise NotASubalgebra("an invariant of the larger algebra is not invariant under the smaller one")
    p = specG.q.compose(specH.section).normalized()
    p = SmoothMap(p.source, p.target, p.components, name or f"p_{specG.name}")
    composed = p.compose(specH.q)
    for name_, a, b in zip(specG.chart.coords, composed.components, specG.q.components):
        if not M.is_zero(a - b, plan).verdict:
            raise NotASubalgebra(f"p∘q_H differs from q_G in {name_}")
    return p


# --------------------------------------------------------------------------
# integrable extensions
# --------------------------------------------------------------------------

def kernel_basis_values(p: SmoothMap, ss: sx.SampleSet) -> list[np.ndarray]:
    """Numeric bases (columns) of ker dp at the sample points."""
    jac = p.jacobian()
    vals = np.array([[ss.evaluator(e)[0] if e != 0 else np.zeros(ss.n) for e in row] for row in jac])
    out = []
    for k in range(ss.n):
        m = vals[:, :, k]
        rk = numeric_rank(m, float(np.abs(m).max()))
        out.append(null_basis(m, rk))
    return out


def is_integrable_extension(p: SmoothMap, E: EDSPresentation, I: EDSPresentation,
                            J: Sequence[DiffForm], plan: SamplePlan | None = None) -> CheckReport:
    """E = ⟨J ∪ p*I⟩_alg and dξ ≡ 0 mod {p*I, ξ}.

    When both systems are Pfaffian the admissible forms must also lie in the
    derived system E′; with 2-form generators downstairs that condition does
    not apply.
    """
    plan = plan or SamplePlan()
    if p.source != E.chart or p.target != I.chart:
        raise ChartMismatch("map must go from E's chart to I's chart")
    J = list(J)
    details: dict = {}
    if not p.is_submersion(plan):
        raise NotSubmersion(f"{p.name} is not a submersion at the sample points")
    ss = sample_for(E.chart, plan, J, exprs=list(p.components))
    kers = kernel_basis_values(p, ss)
    fiber = E.chart.dim - I.chart.dim
    if J:
        jv, jm = frame_values(J, ss.evaluator, E.chart.dim)
        ranks = [numeric_rank(jv[k] @ kers[k], float(jm[k].max())) for k in range(ss.n)]
    else:
        ranks = [0] * ss.n
    details["fiber_dimension"] = fiber
    details["admissible_ranks"] = ranks
    if any(r != fiber for r in ranks) or len(J) != fiber:
        raise FiberTangency(f"admissible forms do not complement the fibres (ranks {ranks}, fibre {fiber})")
    pull1 = [pullback(p, t) for t in I.oneforms]
    pull2 = [pullback(p, t) for t in I.algebraic_twoforms()]
    K = algebraic_ideal(E.chart, J + pull1, pull2, "J+p*I")
    r1 = membership_many(K, E.all_forms(), plan)
    r2 = membership_many(E, J + pull1 + pull2, plan)
    dJ = [exterior_derivative(x) for x in J]
    r3 = membership_many(K, dJ, plan)
    details["E_in_generated"] = all(r.verdict for r in r1)
    details["generated_in_E"] = all(r.verdict for r in r2)
    details["dJ_closed"] = all(r.verdict for r in r3)
    ok = details["E_in_generated"] and details["generated_in_E"] and details["dJ_closed"]
    if E.is_pfaffian and I.is_pfaffian and J:
        r4 = membership_many(algebraic_ideal(E.chart, E.oneforms), dJ, plan)
        details["J_in_derived"] = all(r.verdict for r in r4)
        ok = ok and details["J_in_derived"]
    worst = [max(r.residuals) for r in r1 + r2 + r3 if r.residuals]
    details["max_residual"] = max(worst) if worst else 0.0
    return CheckReport(ok, details)
