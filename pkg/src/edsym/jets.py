"""Jet charts, contact systems, total derivatives and prolongation.

A jet chart is a chart together with contact relations

    d(target) = Σ rate · d(base)

where each base is an independent variable or a coordinate whose own
relations come earlier.  Standard jets ``u, u_x, u_xy, ...`` are one
instance; ordered chains such as ``dz = z1 dw`` (non-standard fibrations),
products of jet spaces and Monge relations ``du = F(v_ss) ds`` are others.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import sympy as sp

from . import symexpr as sx
from .eds import EDSPresentation, membership_many
from .geometry import Chart, DiffForm, VectorField, lie_derivative
from .symexpr import Expr, SamplePlan


class JetError(Exception):
    pass


class TruncationError(JetError):
    """A total derivative would need a coordinate beyond the chart's order."""


class NotAContactSymmetry(JetError):
    pass


@dataclass(frozen=True)
class ContactRelation:
    """One term of d(target) = Σ rate·d(base)."""

    target: str
    rate: Expr
    base: str

    def __post_init__(self):
        object.__setattr__(self, "rate", sp.sympify(self.rate))


@dataclass(frozen=True)
class JetChart:
    """Jet coordinates with their contact relations."""

    chart: Chart
    indep: tuple[str, ...]
    relations: tuple[ContactRelation, ...]

    def __post_init__(self):
        object.__setattr__(self, "indep", tuple(self.indep))
        object.__setattr__(self, "relations", tuple(self.relations))
        for x in self.indep:
            self.chart.index(x)
        seen = set(self.indep)
        for r in self.relations:
            self.chart.index(r.target)
            if r.base not in seen:
                raise JetError(f"relation for {r.target} uses {r.base} before its own relation")
            extra = sx.free_names(r.rate) - set(self.chart.coords)
            if extra:
                raise JetError(f"relation for {r.target} uses unknown names {sorted(extra)}")
            seen.add(r.target)

    # ---- constructors ----------------------------------------------------
    @classmethod
    def standard(cls, name: str, indep: Sequence[str], dep: Sequence[str], order: int,
                 constraints: Sequence[Expr] = (), box=()) -> "JetChart":
        """J^order with coordinates u, u_x, u_xy, ... (single-letter independents)."""
        indep = tuple(indep)
        if any(len(x) != 1 for x in indep):
            raise JetError("standard jets need single-letter independent variables")
        coords = list(indep)
        for u in dep:
            for k in range(order + 1):
                for mi in combinations_with_replacement(indep, k):
                    coords.append(jet_name(u, mi))
        rels = []
        for u in dep:
            for k in range(order):
                for mi in combinations_with_replacement(indep, k):
                    for x in indep:
                        rels.append(ContactRelation(jet_name(u, mi), sx.symbol(jet_name(u, _extend(mi, x, indep))), x))
        chart = Chart(name, tuple(coords), tuple(constraints), tuple(box))
        return cls(chart, indep, tuple(rels))

    @classmethod
    def from_relations(cls, name: str, indep: Sequence[str], coords: Sequence[str],
                       relations: Sequence[tuple[str, Expr, str]], constraints: Sequence[Expr] = (),
                       box=()) -> "JetChart":
        chart = Chart(name, tuple(coords), tuple(constraints), tuple(box))
        return cls(chart, tuple(indep), tuple(ContactRelation(*r) for r in relations))

    @classmethod
    def product(cls, name: str, factors: Sequence["JetChart"], constraints: Sequence[Expr] = (),
                box=()) -> "JetChart":
        coords, indep, rels = [], [], []
        for J in factors:
            coords.extend(J.chart.coords)
            indep.extend(x for x in J.indep if x not in indep)
            rels.extend(J.relations)
        cons = [c for J in factors for c in J.chart.constraints] + list(constraints)
        bx = [b for J in factors for b in J.chart.box] + list(box)
        return cls(Chart(name, tuple(coords), tuple(cons), tuple(bx)), tuple(indep), tuple(rels))

    # ---- structure ---------------------------------------------------------
    def targets(self) -> list[str]:
        out: list[str] = []
        for r in self.relations:
            if r.target not in out:
                out.append(r.target)
        return out

    def relations_of(self, target: str) -> list[ContactRelation]:
        return [r for r in self.relations if r.target == target]

    def contact_forms(self) -> list[DiffForm]:
        ch = self.chart
        out = []
        for t in self.targets():
            form = ch.d(t)
            for r in self.relations_of(t):
                form = form - r.rate * ch.d(r.base)
            out.append(form)
        return out

    def directions(self) -> dict[str, frozenset[str]]:
        """Independent variables each coordinate may vary along."""
        dirs: dict[str, frozenset[str]] = {x: frozenset([x]) for x in self.indep}
        for r in self.relations:
            base = dirs.get(r.base, frozenset())
            dirs[r.target] = dirs.get(r.target, frozenset()) | base
        for r in self.relations:
            if isinstance(r.rate, sp.Symbol) and r.rate.name in self.chart.coords:
                dirs[r.rate.name] = dirs.get(r.rate.name, frozenset()) | dirs[r.target]
        for c in self.chart.coords:
            dirs.setdefault(c, frozenset())
        return dirs

    def top_order(self) -> set[str]:
        """Coordinates whose derivatives are not determined on this chart."""
        targets = set(self.targets())
        dirs = self.directions()
        return {c for c in self.chart.coords if c not in targets and c not in self.indep and dirs[c]}

    def total_derivative_coeffs(self, x: str) -> tuple[dict[str, Expr], set[str]]:
        """Coefficients of D_x and the set of truncated coordinates."""
        if x not in self.indep:
            raise JetError(f"{x} is not an independent variable")
        coeff: dict[str, Expr] = {y: sp.Integer(1 if y == x else 0) for y in self.indep}
        for t in self.targets():
            val = sp.Integer(0)
            for r in self.relations_of(t):
                val += r.rate * coeff.get(r.base, sp.Integer(0))
            coeff[t] = val
        coeff = {k: v for k, v in coeff.items() if v != 0}
        dirs = self.directions()
        truncated = {c for c in self.top_order() if x in dirs[c]}
        return coeff, truncated

    def total(self, x: str, f: Expr) -> Expr:
        """D_x f; refuses to differentiate through truncated slots."""
        coeff, truncated = self.total_derivative_coeffs(x)
        f = sp.sympify(f)
        names = sx.free_names(f)
        bad = names & truncated
        if bad:
            raise TruncationError(f"D_{x} of an expression in top-order coordinates {sorted(bad)}")
        out = sp.Integer(0)
        for name in names:
            if name in coeff:
                out += coeff[name] * sp.diff(f, sx.symbol(name))
        return out


@dataclass(frozen=True)
class TotalDerivative:
    """A total derivative field with its truncation metadata."""

    field: VectorField
    truncated: frozenset[str]
    direction: str


def jet_name(u: str, mi: Sequence[str]) -> str:
    return u if not mi else f"{u}_{''.join(mi)}"


def _extend(mi: Sequence[str], x: str, indep: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted(list(mi) + [x], key=list(indep).index))


def contact_system(J: JetChart) -> EDSPresentation:
    """Pfaffian presentation of the contact system."""
    return EDSPresentation(J.chart, tuple(J.contact_forms()), (), True, f"K({J.chart.name})")


def direct_sum(systems: Sequence[EDSPresentation], chart: Chart, name: str = "") -> EDSPresentation:
    """Sum of systems on a product chart: generators restricted then concatenated."""
    ones, twos = [], []
    for S in systems:
        ones.extend(f.restrict_to(chart) for f in S.oneforms)
        twos.extend(f.restrict_to(chart) for f in S.twoforms)
    return EDSPresentation(chart, tuple(ones), tuple(twos), all(S.closed for S in systems), name)


def total_derivative(J: JetChart, direction: str) -> TotalDerivative:
    coeff, truncated = J.total_derivative_coeffs(direction)
    return TotalDerivative(VectorField.from_mapping(J.chart, coeff), frozenset(truncated), direction)


def prolong_field(J: JetChart, X: Mapping[str, Expr] | VectorField, plan: SamplePlan | None = None,
                  verify: bool = True) -> VectorField:
    """Prolong a field given on the base coordinates to the whole chart.

    For a target a with relations d(a) = Σ_r b_r d(c_r) the unknown rate
    components solve, for each direction i the target varies along,

        Σ_r X^{b_r} D_i c_r = D_i X^a − Σ_r b_r D_i X^{c_r}.

    Standard jets give η^{K+i} = D_i η^K − Σ_j u_{K+j} D_i ξ^j and a chain
    relation d(a) = b d(c) gives X^b = (D X^a − b D X^c) / D c.  Relations
    whose rate is an expression rather than a coordinate impose a condition
    that is checked by the final invariance test.
    """
    plan = plan or SamplePlan()
    if isinstance(X, VectorField):
        comps = {n: c for n, c in zip(X.chart.coords, X.coeffs) if c != 0}
    else:
        comps = {k: sp.sympify(v) for k, v in X.items()}
    coords = set(J.chart.coords)
    rate_coords = {r.rate.name for r in J.relations if isinstance(r.rate, sp.Symbol) and r.rate.name in coords}
    given = sorted(k for k in comps if k in rate_coords)
    if given:
        raise JetError(f"components along prolonged coordinates {given} must not be given")
    dirs = J.directions()
    coeff: dict[str, Expr] = {c: comps.get(c, sp.Integer(0)) for c in J.chart.coords if c not in rate_coords}
    for t in J.targets():
        rels = J.relations_of(t)
        unknown = [r for r in rels if isinstance(r.rate, sp.Symbol) and r.rate.name in rate_coords
                   and r.rate.name not in coeff]
        if not unknown:
            continue
        ds = sorted(dirs[t], key=list(J.indep).index)
        if len(ds) != len(rels):
            raise JetError(f"cannot prolong through the relations of {t}")
        A = sp.Matrix([[J.total(i, sx.symbol(r.base)) if r.base not in J.indep else sp.Integer(int(r.base == i))
                        for r in rels] for i in ds])
        rhs = []
        for i in ds:
            val = J.total(i, coeff.get(t, sp.Integer(0)))
            for r in rels:
                val -= r.rate * J.total(i, coeff.get(r.base, sp.Integer(0)))
            rhs.append(val)
        sol = A.LUsolve(sp.Matrix(rhs)) if A != sp.eye(len(ds)) else sp.Matrix(rhs)
        for r, s in zip(rels, sol):
            if r in unknown:
                # cancelling here keeps later derivatives below the top order
                coeff[r.rate.name] = sx.normalize(s)
    for c in J.chart.coords:
        coeff.setdefault(c, sp.Integer(0))
    field_ = VectorField.from_mapping(J.chart, {k: sx.normalize(v) for k, v in coeff.items()})
    if verify:
        K = contact_system(J)
        res = membership_many(K, [lie_derivative(field_, t) for t in K.oneforms], plan)
        if not all(r.verdict for r in res):
            raise NotAContactSymmetry("prolonged field does not preserve the contact system")
    return field_


def verify_syzygy(J: JetChart | Chart, lhs: Expr, rhs: Expr, plan: SamplePlan | None = None) -> sx.ZeroCertificate:
    """Zero test of lhs − rhs on the chart."""
    plan = plan or SamplePlan()
    chart = J.chart if isinstance(J, JetChart) else J
    return chart.is_zero(sp.sympify(lhs) - sp.sympify(rhs), plan)
