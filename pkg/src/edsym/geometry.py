"""Charts, maps, vector fields and differential forms with exterior calculus.

Forms are stored sparsely on strictly increasing coordinate-index tuples.
Every sign that arises from reordering differentials goes through
``shuffle_sign``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from . import symexpr as sx
from .symexpr import Expr, SamplePlan


class GeometryError(Exception):
    """Base class for geometric errors."""


class ChartMismatch(GeometryError):
    pass


class NotProjectable(GeometryError):
    def __init__(self, coordinate: str, detail: str = ""):
        super().__init__(f"not projectable along target coordinate {coordinate} {detail}".strip())
        self.coordinate = coordinate


def shuffle_sign(indices: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Sign and sorted tuple of a product of coordinate differentials.

    Returns sign 0 when an index repeats.
    """
    idx = list(indices)
    if len(set(idx)) != len(idx):
        return 0, ()
    sign = 1
    # insertion sort counting transpositions
    for i in range(1, len(idx)):
        j = i
        while j > 0 and idx[j - 1] > idx[j]:
            idx[j - 1], idx[j] = idx[j], idx[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(idx)


# --------------------------------------------------------------------------
# Charts and maps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Chart:
    """A coordinate chart on an open set cut out by constraints ``g > 0``."""

    name: str
    coords: tuple[str, ...]
    constraints: tuple[Expr, ...] = ()
    box: tuple[tuple[str, tuple[float, float]], ...] = ()

    def __post_init__(self):
        coords = tuple(self.coords)
        object.__setattr__(self, "coords", coords)
        if len(set(coords)) != len(coords):
            raise GeometryError(f"chart {self.name}: repeated coordinate names")
        cons = tuple(sp.sympify(c) for c in self.constraints)
        object.__setattr__(self, "constraints", cons)
        known = set(coords)
        for c in cons:
            extra = sx.free_names(c) - known
            if extra:
                raise GeometryError(f"chart {self.name}: constraint uses non-coordinates {sorted(extra)}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return tuple(sx.symbol(c) for c in self.coords)

    def index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise sx.UnknownCoordinate(f"{name} is not a coordinate of {self.name}") from None

    def sym(self, name: str) -> sp.Symbol:
        self.index(name)
        return sx.symbol(name)

    def samples(self, plan: SamplePlan, exprs: Sequence[Expr] = ()) -> sx.SampleSet:
        return sx.sample_points(self.coords, self.constraints, plan, exprs, dict(self.box), salt=self.name)

    def is_zero(self, e: Expr, plan: SamplePlan | None = None) -> sx.ZeroCertificate:
        return sx.is_zero(e, plan, self.coords, self.constraints, dict(self.box), salt=self.name)

    def d(self, name: str) -> "DiffForm":
        """Coordinate differential."""
        return DiffForm(self, 1, {(self.index(name),): sp.Integer(1)})

    def partial(self, name: str) -> "VectorField":
        coeffs = [sp.Integer(0)] * self.dim
        coeffs[self.index(name)] = sp.Integer(1)
        return VectorField(self, tuple(coeffs))

    def product(self, other: "Chart", name: str | None = None) -> "Chart":
        return Chart(name or f"{self.name}x{other.name}", self.coords + other.coords,
                     self.constraints + other.constraints, self.box + other.box)

    def sub(self, name: str, coords: Sequence[str]) -> "Chart":
        """Factor chart spanned by some coordinates, keeping constraints that fit."""
        keep = set(coords)
        cons = tuple(c for c in self.constraints if sx.free_names(c) <= keep)
        return Chart(name, tuple(coords), cons, tuple(b for b in self.box if b[0] in keep))


def _check_chart(a, b):
    if a.chart != b.chart:
        raise ChartMismatch(f"{a.chart.name} vs {b.chart.name}")


@dataclass(frozen=True)
class SmoothMap:
    """A map between charts given by target-coordinate expressions on the source."""

    source: Chart
    target: Chart
    components: tuple[Expr, ...]
    name: str = ""

    def __post_init__(self):
        comps = tuple(sp.sympify(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.target.dim:
            raise GeometryError(
                f"map {self.name}: {len(comps)} components for target of dimension {self.target.dim}")
        known = set(self.source.coords)
        for c in comps:
            extra = sx.free_names(c) - known
            if extra:
                raise GeometryError(f"map {self.name}: components use non-source symbols {sorted(extra)}")

    @classmethod
    def from_mapping(cls, source: Chart, target: Chart, assignment: Mapping[str, Expr], name: str = "") -> "SmoothMap":
        missing = [c for c in target.coords if c not in assignment]
        extra = [c for c in assignment if c not in target.coords]
        if missing or extra:
            raise GeometryError(f"map {name}: unassigned {missing}, unknown {extra}")
        return cls(source, target, tuple(sp.sympify(assignment[c]) for c in target.coords), name)

    @classmethod
    def identity(cls, chart: Chart) -> "SmoothMap":
        return cls(chart, chart, chart.symbols, f"id_{chart.name}")

    @property
    def substitution(self) -> dict[sp.Symbol, Expr]:
        return dict(zip(self.target.symbols, self.components))

    def apply(self, e: Expr) -> Expr:
        """Pull a target function back to the source (composition e∘φ)."""
        return sp.sympify(e).xreplace(self.substitution)

    def compose(self, inner: "SmoothMap") -> "SmoothMap":
        """self ∘ inner."""
        if inner.target != self.source:
            raise ChartMismatch(f"cannot compose {self.name} after {inner.name}")
        return SmoothMap(inner.source, self.target, tuple(inner.apply(c) for c in self.components),
                         f"{self.name}o{inner.name}")

    def jacobian(self) -> list[list[Expr]]:
        return [[sp.diff(c, s) for s in self.source.symbols] for c in self.components]

    def jacobian_rank(self, plan: SamplePlan) -> list[int]:
        jac = self.jacobian()
        flat = [e for row in jac for e in row]
        ss = self.source.samples(plan, flat + list(self.components))
        vals = np.array([[ss.evaluator(e)[0] for e in row] for row in jac])  # (m, n, pts)
        return [int(np.linalg.matrix_rank(vals[:, :, k], tol=None)) for k in range(ss.n)]

    def is_submersion(self, plan: SamplePlan) -> bool:
        return all(r == self.target.dim for r in self.jacobian_rank(plan))

    def normalized(self) -> "SmoothMap":
        return SmoothMap(self.source, self.target, tuple(sx.normalize(c) for c in self.components), self.name)


# --------------------------------------------------------------------------
# Vector fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    """A derivation written in the coordinate frame of its chart."""

    chart: Chart
    coeffs: tuple[Expr, ...]

    def __post_init__(self):
        coeffs = tuple(sp.sympify(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        if len(coeffs) != self.chart.dim:
            raise GeometryError("coefficient count must equal chart dimension")

    @classmethod
    def from_mapping(cls, chart: Chart, comps: Mapping[str, Expr]) -> "VectorField":
        coeffs = [sp.Integer(0)] * chart.dim
        for k, v in comps.items():
            coeffs[chart.index(k)] = sp.sympify(v)
        return cls(chart, tuple(coeffs))

    @classmethod
    def zero(cls, chart: Chart) -> "VectorField":
        return cls(chart, (sp.Integer(0),) * chart.dim)

    def __call__(self, f: Expr) -> Expr:
        """Directional derivative X(f)."""
        f = sp.sympify(f)
        out = sp.Integer(0)
        names = sx.free_names(f)
        for c, s, name in zip(self.coeffs, self.chart.symbols, self.chart.coords):
            if c != 0 and name in names:
                out += c * sp.diff(f, s)
        return out

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_chart(self, other)
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_chart(self, other)
        return VectorField(self.chart, tuple(a - b for a, b in zip(self.coeffs, other.coeffs)))

    def __neg__(self) -> "VectorField":
        return VectorField(self.chart, tuple(-a for a in self.coeffs))

    def __mul__(self, f) -> "VectorField":
        f = sp.sympify(f)
        return VectorField(self.chart, tuple(f * a for a in self.coeffs))

    __rmul__ = __mul__

    def coeff(self, name: str) -> Expr:
        return self.coeffs[self.chart.index(name)]

    def normalized(self) -> "VectorField":
        return VectorField(self.chart, tuple(sx.normalize(c) for c in self.coeffs))

    def is_zero(self, plan: SamplePlan | None = None) -> bool:
        return all(c == 0 or self.chart.is_zero(c, plan).verdict for c in self.coeffs)

    def restrict(self, chart: Chart) -> "VectorField":
        """Components along the coordinates of a factor chart."""
        return VectorField(chart, tuple(self.coeff(c) for c in chart.coords))

    def extend(self, chart: Chart) -> "VectorField":
        """Same derivation viewed on a chart containing this one as a factor."""
        comps = dict(zip(self.chart.coords, self.coeffs))
        return VectorField.from_mapping(chart, comps)

    def __str__(self) -> str:
        parts = [f"({sx.to_str(c)})*D({n})" for n, c in zip(self.chart.coords, self.coeffs) if c != 0]
        return " + ".join(parts) or "0"


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """Commutator [X, Y] of derivations."""
    _check_chart(X, Y)
    return VectorField(X.chart, tuple(X(b) - Y(a) for a, b in zip(X.coeffs, Y.coeffs)))


# --------------------------------------------------------------------------
# Differential forms
# --------------------------------------------------------------------------

class DiffForm:
    """A p-form sum of coefficient * dx^I over strictly increasing I."""

    __slots__ = ("chart", "degree", "terms")

    def __init__(self, chart: Chart, degree: int, terms: Mapping[tuple[int, ...], Expr] | None = None):
        self.chart = chart
        self.degree = degree
        clean: dict[tuple[int, ...], Expr] = {}
        for idx, c in (terms or {}).items():
            c = sp.sympify(c)
            if c == 0:
                continue
            idx = tuple(idx)
            if len(idx) != degree:
                raise GeometryError("inconsistent degree in form terms")
            if any(a >= b for a, b in zip(idx, idx[1:])):
                raise GeometryError("form indices must be strictly increasing")
            clean[idx] = c
        self.terms = clean

    # construction helpers
    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "DiffForm":
        return cls(chart, degree, {})

    @classmethod
    def function(cls, chart: Chart, f: Expr) -> "DiffForm":
        return cls(chart, 0, {(): sp.sympify(f)})

    @classmethod
    def from_sum(cls, chart: Chart, degree: int, items: Iterable[tuple[Sequence[int], Expr]]) -> "DiffForm":
        acc: dict[tuple[int, ...], Expr] = {}
        for idx, c in items:
            sign, key = shuffle_sign(idx)
            if sign == 0:
                continue
            acc[key] = acc.get(key, sp.Integer(0)) + sign * c
        return cls(chart, degree, acc)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DiffForm) and self.chart == other.chart and self.degree == other.degree
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.chart.name, self.degree, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        return f"DiffForm({self.chart.name}, {self.degree}, {self})"

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for idx, c in sorted(self.terms.items()):
            basis = " & ".join(f"d({self.chart.coords[i]})" for i in idx)
            cs = sx.to_str(c)
            if not idx:
                parts.append(f"({cs})")
            elif c == 1:
                parts.append(basis)
            else:
                parts.append(f"({cs})*{basis}")
        return " + ".join(parts)

    # linear structure
    def _combine(self, other: "DiffForm", sign: int) -> "DiffForm":
        _check_chart(self, other)
        if self.degree != other.degree:
            raise GeometryError("cannot add forms of different degree")
        acc = dict(self.terms)
        for k, v in other.terms.items():
            acc[k] = acc.get(k, sp.Integer(0)) + sign * v
        return DiffForm(self.chart, self.degree, acc)

    def __add__(self, other: "DiffForm") -> "DiffForm":
        return self._combine(other, 1)

    def __sub__(self, other: "DiffForm") -> "DiffForm":
        return self._combine(other, -1)

    def __neg__(self) -> "DiffForm":
        return DiffForm(self.chart, self.degree, {k: -v for k, v in self.terms.items()})

    def __mul__(self, f) -> "DiffForm":
        if isinstance(f, DiffForm):
            return wedge(self, f)
        f = sp.sympify(f)
        return DiffForm(self.chart, self.degree, {k: f * v for k, v in self.terms.items()})

    def __rmul__(self, f) -> "DiffForm":
        f = sp.sympify(f)
        return DiffForm(self.chart, self.degree, {k: f * v for k, v in self.terms.items()})

    def __truediv__(self, f) -> "DiffForm":
        return self * (1 / sp.sympify(f))

    def __xor__(self, other: "DiffForm") -> "DiffForm":
        return wedge(self, other)

    def coefficient(self, *names: str) -> Expr:
        """Coefficient of dx^{names} (sign-adjusted for order)."""
        sign, key = shuffle_sign([self.chart.index(n) for n in names])
        if sign == 0:
            return sp.Integer(0)
        return sign * self.terms.get(key, sp.Integer(0))

    def is_structurally_zero(self) -> bool:
        return not self.terms

    def is_zero(self, plan: SamplePlan | None = None) -> bool:
        return all(self.chart.is_zero(c, plan).verdict for c in self.terms.values())

    def normalized(self) -> "DiffForm":
        return DiffForm(self.chart, self.degree, {k: sx.normalize(v) for k, v in self.terms.items()})

    def map_coeffs(self, fn) -> "DiffForm":
        return DiffForm(self.chart, self.degree, {k: fn(v) for k, v in self.terms.items()})

    def coefficients(self) -> list[Expr]:
        return list(self.terms.values())

    def as_function(self) -> Expr:
        if self.degree != 0:
            raise GeometryError("not a 0-form")
        return self.terms.get((), sp.Integer(0))

    def restrict_to(self, chart: Chart) -> "DiffForm":
        """Re-express on a chart whose coordinates include those used here."""
        pos = [chart.index(n) for n in self.chart.coords]
        return DiffForm.from_sum(chart, self.degree, (([pos[i] for i in idx], c) for idx, c in self.terms.items()))


def wedge(*forms: DiffForm) -> DiffForm:
    """Graded-commutative exterior product."""
    if not forms:
        raise GeometryError("wedge of nothing")
    out = forms[0]
    for b in forms[1:]:
        _check_chart(out, b)
        items = []
        for i, c in out.terms.items():
            for j, e in b.terms.items():
                items.append((i + j, c * e))
        out = DiffForm.from_sum(out.chart, out.degree + b.degree, items)
    return out


def exterior_derivative(a: DiffForm) -> DiffForm:
    """d a; coefficients differentiated exactly."""
    chart = a.chart
    items = []
    for idx, c in a.terms.items():
        names = sx.free_names(c)
        for j, (name, s) in enumerate(zip(chart.coords, chart.symbols)):
            if name in names and j not in idx:
                items.append(((j,) + idx, sp.diff(c, s)))
    return DiffForm.from_sum(chart, a.degree + 1, items)


d = exterior_derivative


def df(chart: Chart, f: Expr) -> DiffForm:
    """Differential of a function."""
    return exterior_derivative(DiffForm.function(chart, f))


def hook(X: VectorField, a: DiffForm) -> DiffForm:
    """Interior product X ⌟ a."""
    _check_chart(X, a)
    if a.degree == 0:
        return DiffForm.zero(a.chart, 0)
    items = []
    for idx, c in a.terms.items():
        for k, i in enumerate(idx):
            xi = X.coeffs[i]
            if xi != 0:
                items.append((idx[:k] + idx[k + 1:], (-1) ** k * xi * c))
    return DiffForm.from_sum(a.chart, a.degree - 1, items)


def evaluate_one_form(a: DiffForm, X: VectorField) -> Expr:
    """a(X) for a 1-form."""
    if a.degree != 1:
        raise GeometryError("not a 1-form")
    return hook(X, a).as_function()


def lie_derivative(X: VectorField, a: DiffForm) -> DiffForm:
    """Cartan formula L_X a = X⌟da + d(X⌟a)."""
    _check_chart(X, a)
    if a.degree == 0:
        return DiffForm.function(a.chart, X(a.as_function()))
    return hook(X, exterior_derivative(a)) + exterior_derivative(hook(X, a))


def pullback(phi: SmoothMap, a: DiffForm) -> DiffForm:
    """φ* a: substitute target coordinates and push differentials through the Jacobian."""
    if a.chart != phi.target:
        raise ChartMismatch(f"form on {a.chart.name} cannot be pulled back along map into {phi.target.name}")
    src = phi.source
    sub = phi.substitution
    dphi: dict[int, DiffForm] = {}

    def dcomp(i: int) -> DiffForm:
        if i not in dphi:
            dphi[i] = df(src, phi.components[i])
        return dphi[i]

    out = DiffForm.zero(src, a.degree)
    for idx, c in a.terms.items():
        coeff = c.xreplace(sub)
        if not idx:
            out = out + DiffForm.function(src, coeff)
            continue
        piece = wedge(*[dcomp(i) for i in idx])
        out = out + coeff * piece
    return out


def pullback_function(phi: SmoothMap, f: Expr) -> Expr:
    return phi.apply(f)


def pushforward_projectable(phi: SmoothMap, X: VectorField, section: SmoothMap,
                            plan: SamplePlan | None = None) -> VectorField:
    """The φ-related field of a projectable X.

    The candidate component along target coordinate y^b is σ*(X(φ^b)); it is
    accepted only if X(φ^b) − φ*(that candidate) passes the zero test, which
    is exactly the statement that X(φ^b) is constant along fibres.
    """
    if X.chart != phi.source:
        raise ChartMismatch("field does not live on the map's source")
    if section.source != phi.target or section.target != phi.source:
        raise ChartMismatch("section must map the target chart back into the source")
    plan = plan or SamplePlan()
    comps = []
    for name, comp in zip(phi.target.coords, phi.components):
        upstairs = X(comp)
        if upstairs == 0:
            comps.append(sp.Integer(0))
            continue
        down = sx.normalize(section.apply(upstairs))
        resid = upstairs - phi.apply(down)
        cert = phi.source.is_zero(resid, plan)
        if not cert.verdict:
            raise NotProjectable(name, f"(max residual {max(cert.residuals):.3g})")
        comps.append(down)
    return VectorField(phi.target, tuple(comps))


def frame_values(forms: Sequence[DiffForm], ev: sx.Evaluator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numeric 1-form components: arrays (points, forms, n) of values and magnitudes."""
    pts = ev.n
    vals = np.zeros((pts, len(forms), n))
    mags = np.zeros((pts, len(forms), n))
    for k, f in enumerate(forms):
        if f.degree != 1:
            raise GeometryError("expected 1-forms")
        for (i,), c in f.terms.items():
            v, m, _ = ev(c)
            vals[:, k, i] = v
            mags[:, k, i] = m
    return vals, mags


def two_form_values(forms: Sequence[DiffForm], ev: sx.Evaluator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numeric 2-forms as antisymmetric matrices: arrays (points, forms, n, n)."""
    pts = ev.n
    vals = np.zeros((pts, len(forms), n, n))
    mags = np.zeros((pts, len(forms), n, n))
    for k, f in enumerate(forms):
        if f.degree != 2:
            raise GeometryError("expected 2-forms")
        for (i, j), c in f.terms.items():
            v, m, _ = ev(c)
            vals[:, k, i, j] = v
            vals[:, k, j, i] = -v
            mags[:, k, i, j] = m
            mags[:, k, j, i] = m
    return vals, mags


def field_values(fields: Sequence[VectorField], ev: sx.Evaluator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numeric vector fields: arrays (points, fields, n)."""
    pts = ev.n
    vals = np.zeros((pts, len(fields), n))
    mags = np.zeros((pts, len(fields), n))
    for k, X in enumerate(fields):
        for i, c in enumerate(X.coeffs):
            if c != 0:
                v, m, _ = ev(c)
                vals[:, k, i] = v
                mags[:, k, i] = m
    return vals, mags


def form_exprs(forms: Iterable[DiffForm]) -> list[Expr]:
    return [c for f in forms for c in f.terms.values()]


def field_exprs(fields: Iterable[VectorField]) -> list[Expr]:
    return [c for X in fields for c in X.coeffs if c != 0]


def basis_indices(n: int, p: int) -> list[tuple[int, ...]]:
    return list(combinations(range(n), p))
