"""Reader for model files.

A model file is a sequence of statements, one per line unless brackets or
braces are open.  ``#`` starts a comment.  Statements:

    let NAME = expr
    chart NAME { coords: [..]; constraints: [..]; box: [x = lo .. hi] }
    jets NAME { indep: [..]; dep: [..]; order: k }
    jets NAME { indep: [..]; coords: [..]; contact: [d(u) = p*d(x) + q*d(y), ..] }
    jets NAME { product: [J1, J2]; constraints: [..] }
    form NAME on CHART = form-expr
    field NAME on CHART = field-expr
    action NAME on CHART = [field-expr, ..]
    eds NAME on CHART { oneforms: [..]; twoforms: [..]; closed: true; contact: true }
    map NAME: SRC -> TGT = [y = expr, ..]        (omitted targets copy same-named sources)
    map NAME: SRC -> TGT = induced(QSMALL, QLARGE)
    quotient NAME { action: A; map: q; section: s }
    coframe NAME on CHART { forms: [..]; names: [..] }
    decomposition NAME of SYSTEM { theta: [..]; hat: [..]; check: [..]; hat2: [..]; check2: [..] }
                                 (theta defaults to the system's 1-forms)
    integrals NAME on CHART { hat: [..]; check: [..] }
    extension NAME { map: p; upstairs: E; downstairs: I; admissible: [..] }
    algebra NAME { basis: [e1, e2]; brackets: [[e1, e2] = e1] }
    task NAME { verb: VERB; key: value; .. }

Expressions use the scalar grammar plus d(.), D(coord), '&' for wedge,
pull(map, .), prolong(jets, field), total(x, .), apply(X, .), bracket(X, Y),
hook(X, form) and extend(field).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import sympy as sp

from . import symexpr as sx
from .eds import Coframe, EDSPresentation
from .geometry import (Chart, DiffForm, GeometryError, SmoothMap, VectorField, df, exterior_derivative, hook,
                       lie_bracket, pullback, wedge)
from .jets import JetChart, JetError, prolong_field
from .reduction import LieAction, QuotientSpec, induced_projection
from .darboux import Decomposition, FirstIntegralBasis, LieAlgebra
from .symexpr import Expr, SamplePlan


class ModelError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        super().__init__(f"{line}:{col}: {message}" if line else message)


class ModelSyntaxError(ModelError):
    pass


class UnresolvedReference(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


_OPEN, _CLOSE = "([{", ")]}"


# --------------------------------------------------------------------------
# scanning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    key: str
    value: str
    offset: int


@dataclass(frozen=True)
class Statement:
    keyword: str
    head: str
    head_offset: int
    body: tuple[Field, ...] | None
    offset: int

    def get(self, key: str) -> Field | None:
        for f in self.body or ():
            if f.key == key:
                return f
        return None

    def canonical(self) -> str:
        head = _squash(self.head)
        if self.body is None:
            return f"{self.keyword} {head}"
        inner = "; ".join(f"{f.key}: {_squash(f.value)}" for f in self.body)
        return f"{self.keyword} {head} {{ {inner} }}".replace("  ", " ")


def _squash(s: str) -> str:
    return " ".join(s.split())


def _strip_comments(text: str) -> str:
    # keep offsets stable by blanking comment characters
    return re.sub(r"#[^\n]*", lambda m: " " * len(m.group(0)), text)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def split_top(text: str, seps: str, base: int = 0) -> list[tuple[str, int]]:
    """Split at separators outside brackets, keeping offsets of the pieces."""
    out, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
        elif ch in seps and depth == 0:
            out.append((text[start:i], base + start))
            start = i + 1
    out.append((text[start:], base + start))
    res = []
    for piece, off in out:
        lead = len(piece) - len(piece.lstrip())
        if piece.strip():
            res.append((piece.strip(), off + lead))
    return res


def scan(text: str) -> list[Statement]:
    src = _strip_comments(text)
    chunks: list[tuple[str, int]] = []
    depth, start = 0, 0
    for i, ch in enumerate(src):
        if ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
            if depth < 0:
                line, col = _position(text, i)
                raise ModelSyntaxError(f"unbalanced {ch!r}", line, col)
        elif ch == "\n" and depth == 0:
            chunks.append((src[start:i], start))
            start = i + 1
    if depth != 0:
        line, col = _position(text, start)
        raise ModelSyntaxError("unclosed bracket or brace", line, col)
    chunks.append((src[start:], start))
    out = []
    for chunk, off in chunks:
        if not chunk.strip():
            continue
        lead = len(chunk) - len(chunk.lstrip())
        chunk, off = chunk.strip(), off + lead
        m = re.match(r"([A-Za-z][\w-]*)\s*", chunk)
        if not m:
            line, col = _position(text, off)
            raise ModelSyntaxError("expected a statement keyword", line, col)
        kw = m.group(1)
        rest_off = off + m.end()
        rest = chunk[m.end():]
        body = None
        brace = _top_index(rest, "{")
        if brace is not None:
            if not rest.endswith("}"):
                line, col = _position(text, rest_off + len(rest))
                raise ModelSyntaxError("text after closing brace", line, col)
            inner = rest[brace + 1:-1]
            fields = []
            for piece, poff in split_top(inner, ";\n", rest_off + brace + 1):
                fm = re.match(r"([A-Za-z_][\w-]*)\s*:\s*", piece)
                if not fm:
                    line, col = _position(text, poff)
                    raise ModelSyntaxError("expected 'key: value'", line, col)
                fields.append(Field(fm.group(1), piece[fm.end():].strip(), poff + fm.end()))
            body = tuple(fields)
            rest = rest[:brace]
        out.append(Statement(kw, rest.strip(), rest_off, body, off))
    return out


def _top_index(text: str, ch: str) -> int | None:
    depth = 0
    for i, c in enumerate(text):
        if c == ch and depth == 0:
            return i
        if c in _OPEN:
            depth += 1
        elif c in _CLOSE:
            depth -= 1
    return None


def list_items(value: str, base: int = 0) -> list[tuple[str, int]]:
    v = value.strip()
    lead = len(value) - len(value.lstrip())
    if not (v.startswith("[") and v.endswith("]")):
        return [(v, base + lead)] if v else []
    return split_top(v[1:-1], ",", base + lead + 1)


# --------------------------------------------------------------------------
# the model
# --------------------------------------------------------------------------

@dataclass
class Task:
    name: str
    verb: str
    args: dict[str, Field]
    line: int


@dataclass
class Model:
    text: str = ""
    statements: list[Statement] = field(default_factory=list)
    charts: dict[str, Chart] = field(default_factory=dict)
    jets: dict[str, JetChart] = field(default_factory=dict)
    lets: dict[str, Expr] = field(default_factory=dict)
    forms: dict[str, DiffForm] = field(default_factory=dict)
    fields: dict[str, VectorField] = field(default_factory=dict)
    maps: dict[str, SmoothMap | Callable] = field(default_factory=dict)
    actions: dict[str, LieAction] = field(default_factory=dict)
    quotients: dict[str, tuple] = field(default_factory=dict)
    systems: dict[str, EDSPresentation] = field(default_factory=dict)
    coframes: dict[str, Coframe] = field(default_factory=dict)
    decompositions: dict[str, Decomposition] = field(default_factory=dict)
    integrals: dict[str, tuple[FirstIntegralBasis, FirstIntegralBasis]] = field(default_factory=dict)
    extensions: dict[str, dict] = field(default_factory=dict)
    algebras: dict[str, LieAlgebra] = field(default_factory=dict)
    tasks: dict[str, Task] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    # ---- lookups used by the runner -----------------------------------
    def where(self, offset: int) -> tuple[int, int]:
        return _position(self.text, offset)

    def err(self, cls, message: str, offset: int):
        line, col = self.where(offset)
        return cls(message, line, col)

    def get(self, table: str, name: str, offset: int = 0):
        reg = getattr(self, table)
        if name not in reg:
            raise self.err(UnresolvedReference, f"undefined {table[:-1]} {name!r}", offset)
        return reg[name]

    def chart_of(self, name: str, offset: int = 0) -> Chart:
        if name in self.charts:
            return self.charts[name]
        raise self.err(UnresolvedReference, f"undefined chart {name!r}", offset)

    def smooth_map(self, name: str, plan: SamplePlan | None = None, offset: int = 0) -> SmoothMap:
        m = self.get("maps", name, offset)
        if callable(m) and not isinstance(m, SmoothMap):
            key = ("map", name)
            if key not in self._cache:
                self._cache[key] = m(plan or SamplePlan())
            return self._cache[key]
        return m

    def quotient_spec(self, name: str, plan: SamplePlan | None = None, offset: int = 0) -> QuotientSpec:
        action, qname, section, qoff = self.get("quotients", name, offset)
        q = self.smooth_map(qname, plan, qoff)
        s = section if isinstance(section, SmoothMap) else self.smooth_map(section, plan, qoff)
        return QuotientSpec(self.actions[action], q.target, q, s, name)

    def canonical(self) -> str:
        return "\n".join(s.canonical() for s in self.statements) + ("\n" if self.statements else "")

    def summary(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("charts", "maps", "actions", "quotients", "systems",
                                                      "decompositions", "integrals", "extensions",
                                                      "algebras", "coframes", "tasks")}


# --------------------------------------------------------------------------
# evaluation of expressions
# --------------------------------------------------------------------------

Value = Expr | DiffForm | VectorField


class Evaluator:
    """Typed evaluation of expression text on one chart."""

    def __init__(self, model: Model, chart: Chart | None, plan: SamplePlan | None = None):
        self.model, self.chart, self.plan = model, chart, plan or SamplePlan()

    # -- entry points --------------------------------------------------------
    def parse(self, text: str, offset: int):
        try:
            return sx.parse_ast(text)
        except sx.ParseError as exc:
            raise self.model.err(ModelSyntaxError, exc.args[0], offset + exc.pos) from None

    def value(self, text: str, offset: int) -> Value:
        self.base = offset
        node = self.parse(text, offset)
        return self.go(node)

    def scalar(self, text: str, offset: int) -> Expr:
        v = self.value(text, offset)
        if not isinstance(v, sp.Basic):
            raise self.model.err(DimensionMismatch, "expected a function", offset)
        self._check_names(v, offset)
        return v

    def form(self, text: str, offset: int, degree: int | None = None) -> DiffForm:
        v = self.value(text, offset)
        if isinstance(v, sp.Basic):
            if v == 0 and degree is not None:
                return DiffForm.zero(self.chart, degree)
            v = DiffForm.function(self.chart, v)
        if not isinstance(v, DiffForm):
            raise self.model.err(DimensionMismatch, "expected a differential form", offset)
        if degree is not None and v.degree != degree:
            raise self.model.err(DimensionMismatch, f"expected a {degree}-form, found degree {v.degree}", offset)
        for c in v.terms.values():
            self._check_names(c, offset)
        return v

    def vector(self, text: str, offset: int) -> VectorField:
        v = self.value(text, offset)
        if not isinstance(v, VectorField):
            raise self.model.err(DimensionMismatch, "expected a vector field", offset)
        for c in v.coeffs:
            self._check_names(c, offset)
        return v

    def _check_names(self, e: Expr, offset: int):
        if self.chart is None:
            return
        bad = sx.free_names(e) - set(self.chart.coords)
        if bad:
            raise self.model.err(UnresolvedReference, f"{sorted(bad)} not coordinates of {self.chart.name}", offset)

    # -- tree walk -----------------------------------------------------------
    def at(self, node) -> int:
        return self.base + node[-1]

    def go(self, n) -> Value:
        tag = n[0]
        if tag == "num":
            return sp.Rational(n[1].numerator, n[1].denominator)
        if tag == "name":
            return self.name(n[1], self.at(n))
        if tag == "neg":
            return -self.go(n[1])
        if tag == "call":
            return self.call(n)
        op, a, b = n[1], self.go(n[2]), self.go(n[3])
        try:
            return self.binary(op, a, b)
        except (TypeError, GeometryError) as exc:
            raise self.model.err(DimensionMismatch, f"cannot apply {op!r}: {exc}", self.at(n)) from None

    def name(self, name: str, offset: int) -> Value:
        m = self.model
        if name in m.lets:
            return m.lets[name]
        if name in sx.CONSTANTS:
            return sx.CONSTANTS[name]
        ch = self.chart
        if ch is not None and name in ch.coords:
            return sx.symbol(name)
        if name in m.forms:
            f = m.forms[name]
            if ch is not None and f.chart != ch:
                raise m.err(DimensionMismatch, f"form {name} lives on {f.chart.name}, not {ch.name}", offset)
            return f
        if name in m.fields:
            X = m.fields[name]
            if ch is not None and X.chart != ch:
                raise m.err(DimensionMismatch, f"field {name} lives on {X.chart.name}, not {ch.name}", offset)
            return X
        if ch is None:
            return sx.symbol(name)
        raise m.err(UnresolvedReference, f"{name!r} is not defined on chart {ch.name}", offset)

    def _ident(self, node, what: str) -> str:
        if node[0] != "name":
            raise self.model.err(ModelSyntaxError, f"expected a {what} name", self.at(node))
        return node[1]

    def call(self, n) -> Value:
        fname, args = n[1], n[2]
        m, ch = self.model, self.chart
        off = self.at(n)

        def need(k):
            if len(args) != k:
                raise m.err(ModelSyntaxError, f"{fname} takes {k} argument(s)", off)

        if fname in sx.FUNCTIONS:
            need(1)
            a = self.go(args[0])
            if not isinstance(a, sp.Basic):
                raise m.err(DimensionMismatch, f"{fname} of a non-function", off)
            return sx.FUNCTIONS[fname](a)
        if fname == "d":
            need(1)
            a = self.go(args[0])
            if isinstance(a, DiffForm):
                return exterior_derivative(a)
            if isinstance(a, sp.Basic):
                self._check_names(a, off)
                return df(ch, a)
            raise m.err(DimensionMismatch, "d of a vector field", off)
        if fname == "D":
            need(1)
            c = self._ident(args[0], "coordinate")
            if c not in ch.coords:
                raise m.err(UnresolvedReference, f"{c!r} is not a coordinate of {ch.name}", off)
            return ch.partial(c)
        if fname == "pull":
            need(2)
            phi = m.smooth_map(self._ident(args[0], "map"), self.plan, off)
            if phi.source != ch:
                raise m.err(DimensionMismatch, f"map {phi.name} starts on {phi.source.name}, not {ch.name}", off)
            inner = Evaluator(m, phi.target, self.plan)
            inner.base = self.base
            a = inner.go(args[1])
            if isinstance(a, DiffForm):
                return pullback(phi, a)
            if isinstance(a, sp.Basic):
                inner._check_names(a, off)
                return phi.apply(a)
            raise m.err(DimensionMismatch, "cannot pull back a vector field", off)
        if fname == "prolong":
            need(2)
            J = m.get("jets", self._ident(args[0], "jet chart"), off)
            inner = Evaluator(m, J.chart, self.plan)
            inner.base = self.base
            X = inner.go(args[1])
            if not isinstance(X, VectorField):
                raise m.err(DimensionMismatch, "prolong needs a vector field", off)
            try:
                Y = prolong_field(J, X, self.plan)
            except JetError as exc:
                raise m.err(DimensionMismatch, str(exc), off) from None
            return Y if J.chart == ch else Y.extend(ch)
        if fname == "total":
            need(2)
            J = self._jets_for(ch, off)
            x = self._ident(args[0], "independent variable")
            e = self.go(args[1])
            try:
                return J.total(x, e)
            except JetError as exc:
                raise m.err(DimensionMismatch, str(exc), off) from None
        if fname == "apply":
            need(2)
            X, e = self.go(args[0]), self.go(args[1])
            if not isinstance(X, VectorField) or not isinstance(e, sp.Basic):
                raise m.err(DimensionMismatch, "apply(field, function)", off)
            return X(e)
        if fname == "bracket":
            need(2)
            X, Y = self.go(args[0]), self.go(args[1])
            if not isinstance(X, VectorField) or not isinstance(Y, VectorField):
                raise m.err(DimensionMismatch, "bracket of non-fields", off)
            return lie_bracket(X, Y)
        if fname == "hook":
            need(2)
            X, a = self.go(args[0]), self.go(args[1])
            if not isinstance(X, VectorField) or not isinstance(a, DiffForm):
                raise m.err(DimensionMismatch, "hook(field, form)", off)
            return hook(X, a)
        if fname == "extend":
            need(1)
            nm = self._ident(args[0], "field")
            X = m.get("fields", nm, off)
            if not set(X.chart.coords) <= set(ch.coords):
                raise m.err(DimensionMismatch, f"{X.chart.name} is not a factor of {ch.name}", off)
            return X.extend(ch)
        raise m.err(UnresolvedReference, f"unknown function {fname!r}", off)

    def _jets_for(self, ch: Chart | None, off: int) -> JetChart:
        if ch is None:
            raise self.model.err(DimensionMismatch, "total derivatives need a chart; lets are chart-free", off)
        for J in self.model.jets.values():
            if J.chart == ch:
                return J
        raise self.model.err(DimensionMismatch, f"{ch.name} carries no contact structure", off)

    @staticmethod
    def binary(op: str, a: Value, b: Value) -> Value:
        sa, sb = isinstance(a, sp.Basic), isinstance(b, sp.Basic)
        if op == "&":
            if sa or sb:
                return a * b
            return wedge(a, b)
        if op in "+-":
            if sa != sb:
                raise TypeError("mixing functions with forms or fields")
            return a + b if op == "+" else a - b
        if op == "*":
            if sa and sb:
                return a * b
            if sa:
                return b * a
            if sb:
                return a * b
            raise TypeError("use '&' to wedge forms")
        if op == "/":
            if not sb:
                raise TypeError("division by a form or field")
            if b == 0:
                raise TypeError("division by zero")
            return a / b if sa else a * (1 / b)
        if not (sa and sb) or not b.is_Rational:
            raise TypeError("exponents must be rational constants")
        return a**b


# --------------------------------------------------------------------------
# statement handlers
# --------------------------------------------------------------------------

def parse_model(text: str, plan: SamplePlan | None = None) -> Model:
    """Parse and resolve a model file."""
    model = Model(text=text)
    reader = _Reader(model, plan or SamplePlan())
    for st in scan(text):
        reader.statement(st)
    return model


_HEAD_NAME = re.compile(r"([A-Za-z_]\w*)\s*")


class _Reader:
    def __init__(self, model: Model, plan: SamplePlan):
        self.m, self.plan = model, plan
        self.names: set[str] = set()

    def fail(self, cls, msg, offset):
        return self.m.err(cls, msg, offset)

    def statement(self, st: Statement):
        handler = getattr(self, "st_" + st.keyword.replace("-", "_"), None)
        if handler is None:
            raise self.fail(ModelSyntaxError, f"unknown statement {st.keyword!r}", st.offset)
        self.m.statements.append(st)
        handler(st)

    # -- helpers -------------------------------------------------------------
    def declare(self, name: str, offset: int):
        if name in self.names:
            raise self.fail(ModelSyntaxError, f"{name!r} is already defined", offset)
        self.names.add(name)

    def head(self, st: Statement, pattern: str, what: str) -> re.Match:
        m = re.fullmatch(pattern, st.head, re.S)
        if not m:
            raise self.fail(ModelSyntaxError, f"malformed {st.keyword} header; expected {what}", st.head_offset)
        return m

    def need(self, st: Statement, key: str) -> Field:
        f = st.get(key)
        if f is None:
            raise self.fail(ModelSyntaxError, f"{st.keyword} needs '{key}'", st.offset)
        return f

    def need_body(self, st: Statement):
        if st.body is None:
            raise self.fail(ModelSyntaxError, f"{st.keyword} needs a {{ ... }} body", st.offset)

    def names_list(self, f: Field | None) -> list[tuple[str, int]]:
        if f is None:
            return []
        out = list_items(f.value, f.offset)
        for n, off in out:
            if not re.fullmatch(r"[A-Za-z_]\w*", n):
                raise self.fail(ModelSyntaxError, f"expected a name, found {n!r}", off)
        return out

    def exprs(self, f: Field | None, chart: Chart | None) -> list[Expr]:
        if f is None:
            return []
        ev = Evaluator(self.m, chart, self.plan)
        return [ev.scalar(t, off) for t, off in list_items(f.value, f.offset)]

    def forms(self, f: Field | None, chart: Chart, degree: int | None = None) -> list[DiffForm]:
        if f is None:
            return []
        ev = Evaluator(self.m, chart, self.plan)
        return [ev.form(t, off, degree) for t, off in list_items(f.value, f.offset)]

    def box(self, f: Field | None) -> tuple:
        out = []
        for item, off in list_items(f.value, f.offset) if f else []:
            mm = re.fullmatch(r"([A-Za-z_]\w*)\s*=\s*(-?[\d.]+(?:e-?\d+)?)\s*\.\.\s*(-?[\d.]+(?:e-?\d+)?)", item)
            if not mm:
                raise self.fail(ModelSyntaxError, "box entries look like 'x = lo .. hi'", off)
            lo, hi = float(mm.group(2)), float(mm.group(3))
            if not lo < hi:
                raise self.fail(ModelSyntaxError, "empty box interval", off)
            out.append((mm.group(1), (lo, hi)))
        return tuple(out)

    def add_chart(self, name: str, chart: Chart, offset: int):
        self.declare(name, offset)
        self.m.charts[name] = chart

    # -- statements ----------------------------------------------------------
    def st_let(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)\s*=\s*(.+)", "let NAME = expr")
        self.declare(mm.group(1), st.head_offset)
        ev = Evaluator(self.m, None, self.plan)
        self.m.lets[mm.group(1)] = ev.scalar(mm.group(2), st.head_offset + mm.start(2))

    def st_chart(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)", "chart NAME")
        self.need_body(st)
        coords = [n for n, _ in self.names_list(self.need(st, "coords"))]
        if len(set(coords)) != len(coords):
            raise self.fail(DimensionMismatch, "repeated coordinate", st.offset)
        bare = Chart(mm.group(1), tuple(coords))
        cons = self.exprs(st.get("constraints"), bare)
        self.add_chart(mm.group(1), Chart(mm.group(1), tuple(coords), tuple(cons), self.box(st.get("box"))), st.head_offset)

    def st_jets(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)", "jets NAME")
        name = mm.group(1)
        self.need_body(st)
        try:
            if st.get("product"):
                parts = [self.m.get("jets", n, off) for n, off in self.names_list(st.get("product"))]
                tmp = JetChart.product(name, parts)
                cons = self.exprs(st.get("constraints"), tmp.chart)
                J = JetChart.product(name, parts, cons, self.box(st.get("box")))
            elif st.get("contact"):
                indep = [n for n, _ in self.names_list(self.need(st, "indep"))]
                coords = [n for n, _ in self.names_list(self.need(st, "coords"))]
                bare = Chart(name, tuple(coords))
                rels = []
                ev = Evaluator(self.m, bare, self.plan)
                for item, off in list_items(st.get("contact").value, st.get("contact").offset):
                    parts = split_top(item, "=", off)
                    lhs = re.fullmatch(r"d\(\s*([A-Za-z_]\w*)\s*\)", parts[0][0]) if len(parts) == 2 else None
                    if lhs is None:
                        raise self.fail(ModelSyntaxError, "contact relations look like d(u) = p*d(x) + ...", off)
                    rhs = ev.form(parts[1][0], parts[1][1], 1)
                    for (k,), c in sorted(rhs.terms.items()):
                        rels.append((lhs.group(1), c, coords[k]))
                cons = self.exprs(st.get("constraints"), bare)
                J = JetChart.from_relations(name, indep, coords, rels, cons, self.box(st.get("box")))
            else:
                indep = [n for n, _ in self.names_list(self.need(st, "indep"))]
                dep = [n for n, _ in self.names_list(self.need(st, "dep"))]
                order = int(self.need(st, "order").value)
                tmp = JetChart.standard(name, indep, dep, order)
                cons = self.exprs(st.get("constraints"), tmp.chart)
                J = JetChart.standard(name, indep, dep, order, cons, self.box(st.get("box")))
        except JetError as exc:
            raise self.fail(DimensionMismatch, str(exc), st.offset) from None
        self.add_chart(name, J.chart, st.head_offset)
        self.m.jets[name] = J

    def _named_on(self, st: Statement, what: str) -> tuple[str, Chart, str, int]:
        mm = self.head(st, r"([A-Za-z_]\w*)\s+on\s+([A-Za-z_]\w*)\s*(?:=\s*(.+))?", f"{what} NAME on CHART")
        chart = self.m.chart_of(mm.group(2), st.head_offset + mm.start(2))
        self.declare(mm.group(1), st.head_offset)
        rhs = mm.group(3) or ""
        return mm.group(1), chart, rhs, st.head_offset + (mm.start(3) if mm.group(3) else 0)

    def st_form(self, st: Statement):
        name, chart, rhs, off = self._named_on(st, "form")
        self.m.forms[name] = Evaluator(self.m, chart, self.plan).form(rhs, off)

    def st_field(self, st: Statement):
        name, chart, rhs, off = self._named_on(st, "field")
        self.m.fields[name] = Evaluator(self.m, chart, self.plan).vector(rhs, off)

    def st_action(self, st: Statement):
        name, chart, rhs, off = self._named_on(st, "action")
        ev = Evaluator(self.m, chart, self.plan)
        fields = [ev.vector(t, o) for t, o in list_items(rhs, off)]
        self.m.actions[name] = LieAction(chart, tuple(fields), name)

    def st_eds(self, st: Statement):
        name, chart, _, _ = self._named_on(st, "eds")
        self.need_body(st)
        ones = self.forms(st.get("oneforms"), chart, 1)
        cf = st.get("contact")
        if cf is not None and cf.value.strip() in ("true", "yes"):
            J = Evaluator(self.m, chart, self.plan)._jets_for(chart, cf.offset)
            ones = list(J.contact_forms()) + list(ones)
        twos = self.forms(st.get("twoforms"), chart, 2)
        closed = st.get("closed")
        flag = True if closed is None else closed.value.strip() in ("true", "diff", "yes")
        self.m.systems[name] = EDSPresentation(chart, tuple(ones), tuple(twos), flag, name)

    def st_coframe(self, st: Statement):
        name, chart, _, _ = self._named_on(st, "coframe")
        self.need_body(st)
        forms = self.forms(self.need(st, "forms"), chart, 1)
        names = tuple(n for n, _ in self.names_list(st.get("names")))
        if names and len(names) != len(forms):
            raise self.fail(DimensionMismatch, "names and forms differ in length", st.offset)
        if len(forms) != chart.dim:
            raise self.fail(DimensionMismatch, f"{len(forms)} forms on a {chart.dim}-dimensional chart", st.offset)
        self.m.coframes[name] = Coframe(chart, tuple(forms), names)

    def st_map(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)\s*:\s*([A-Za-z_]\w*)\s*->\s*([A-Za-z_]\w*)\s*=\s*(.+)",
                       "map NAME: SRC -> TGT = [...]")
        name = mm.group(1)
        src = self.m.chart_of(mm.group(2), st.head_offset + mm.start(2))
        tgt = self.m.chart_of(mm.group(3), st.head_offset + mm.start(3))
        self.declare(name, st.head_offset)
        rhs, roff = mm.group(4).strip(), st.head_offset + mm.start(4)
        ind = re.fullmatch(r"induced\(\s*([A-Za-z_]\w*)\s*,\s*([A-Za-z_]\w*)\s*\)", rhs)
        if ind:
            small, large = ind.group(1), ind.group(2)
            self.m.get("quotients", small, roff)
            self.m.get("quotients", large, roff)
            model = self.m

            def build(plan, small=small, large=large, name=name, src=src, tgt=tgt):
                p = induced_projection(model.quotient_spec(small, plan), model.quotient_spec(large, plan), plan, name)
                if p.source != src or p.target != tgt:
                    raise model.err(DimensionMismatch, f"induced map {name} does not run {src.name} -> {tgt.name}", roff)
                return p

            self.m.maps[name] = build
            return
        self.m.maps[name] = self._components(name, src, tgt, rhs, roff)

    def _components(self, name: str, src: Chart, tgt: Chart, rhs: str, roff: int) -> SmoothMap:
        ev = Evaluator(self.m, src, self.plan)
        comps: dict[str, Expr] = {}
        for item, off in list_items(rhs, roff):
            parts = split_top(item, "=", off)
            if len(parts) != 2 or parts[0][0] not in tgt.coords:
                raise self.fail(DimensionMismatch, f"expected 'target_coordinate = expr' for chart {tgt.name}", off)
            if parts[0][0] in comps:
                raise self.fail(ModelSyntaxError, f"component {parts[0][0]} given twice", off)
            comps[parts[0][0]] = ev.scalar(parts[1][0], parts[1][1])
        for c in tgt.coords:
            if c not in comps:
                if c not in src.coords:
                    raise self.fail(DimensionMismatch, f"map {name} lacks a component for {c}", roff)
                comps[c] = sx.symbol(c)
        return SmoothMap.from_mapping(src, tgt, comps, name)

    def st_quotient(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)", "quotient NAME")
        self.need_body(st)
        self.declare(mm.group(1), st.head_offset)
        a, q, s = self.need(st, "action"), self.need(st, "map"), self.need(st, "section")
        G = self.m.get("actions", a.value, a.offset)
        qmap = self.m.get("maps", q.value, q.offset)
        if s.value.startswith("["):
            if not isinstance(qmap, SmoothMap):
                raise self.fail(ModelSyntaxError, "an inline section needs an explicit quotient map", s.offset)
            section = self._components(f"section_{mm.group(1)}", qmap.target, G.chart, s.value, s.offset)
        else:
            self.m.get("maps", s.value, s.offset)
            section = s.value
        self.m.quotients[mm.group(1)] = (a.value, q.value, section, q.offset)

    def st_decomposition(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)\s+of\s+([A-Za-z_]\w*)", "decomposition NAME of SYSTEM")
        self.need_body(st)
        S = self.m.get("systems", mm.group(2), st.head_offset + mm.start(2))
        self.declare(mm.group(1), st.head_offset)
        blocks = [tuple(self.forms(st.get(k), S.chart, deg)) for k, deg in
                  (("theta", 1), ("hat", 1), ("check", 1), ("hat2", 2), ("check2", 2))]
        if st.get("theta") is None:
            blocks[0] = tuple(S.oneforms)
        self.m.decompositions[mm.group(1)] = Decomposition(S, *blocks, name=mm.group(1))

    def st_integrals(self, st: Statement):
        name, chart, _, _ = self._named_on(st, "integrals")
        self.need_body(st)
        self.m.integrals[name] = (FirstIntegralBasis(chart, tuple(self.exprs(st.get("hat"), chart)), "hat"),
                                  FirstIntegralBasis(chart, tuple(self.exprs(st.get("check"), chart)), "check"))

    def st_extension(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)", "extension NAME")
        self.need_body(st)
        self.declare(mm.group(1), st.head_offset)
        p, up, down = self.need(st, "map"), self.need(st, "upstairs"), self.need(st, "downstairs")
        self.m.get("maps", p.value, p.offset)
        E = self.m.get("systems", up.value, up.offset)
        I = self.m.get("systems", down.value, down.offset)
        J = self.forms(st.get("admissible"), E.chart, 1)
        self.m.extensions[mm.group(1)] = {"map": p.value, "upstairs": up.value, "downstairs": down.value,
                                          "admissible": J, "E": E, "I": I}

    def st_algebra(self, st: Statement):
        mm = self.head(st, r"([A-Za-z_]\w*)", "algebra NAME")
        self.need_body(st)
        self.declare(mm.group(1), st.head_offset)
        basis = [n for n, _ in self.names_list(self.need(st, "basis"))]
        syms = {b: sx.symbol("__lie_" + b) for b in basis}
        consts = {}
        ev = Evaluator(self.m, None, self.plan)
        br = st.get("brackets")
        for item, off in list_items(br.value, br.offset) if br else []:
            parts = split_top(item, "=", off)
            lhs = re.fullmatch(r"\[\s*([A-Za-z_]\w*)\s*,\s*([A-Za-z_]\w*)\s*\]", parts[0][0]) if len(parts) == 2 else None
            if lhs is None or lhs.group(1) not in basis or lhs.group(2) not in basis:
                raise self.fail(ModelSyntaxError, "brackets look like [a, b] = linear combination", off)
            saved = dict(self.m.lets)
            self.m.lets.update(syms)
            try:
                rhs = sp.expand(ev.scalar(parts[1][0], parts[1][1]))
            finally:
                self.m.lets.clear()
                self.m.lets.update(saved)
            vec = [rhs.coeff(syms[b]) for b in basis]
            rest = sp.expand(rhs - sum(c * syms[b] for c, b in zip(vec, basis)))
            if rest != 0 or any(not sp.sympify(c).is_Rational for c in vec):
                raise self.fail(ModelSyntaxError, "bracket values must be rational combinations of the basis", parts[1][1])
            consts[(basis.index(lhs.group(1)), basis.index(lhs.group(2)))] = vec
        self.m.algebras[mm.group(1)] = LieAlgebra.from_dict(len(basis), consts, basis)

    def st_task(self, st: Statement):
        from .cli import VERBS

        mm = self.head(st, r"([A-Za-z_][\w-]*)", "task NAME")
        self.need_body(st)
        if mm.group(1) in self.m.tasks:
            raise self.fail(ModelSyntaxError, f"task {mm.group(1)!r} defined twice", st.head_offset)
        verb = self.need(st, "verb")
        if verb.value not in VERBS:
            raise self.fail(UnresolvedReference, f"unknown verb {verb.value!r}", verb.offset)
        spec = VERBS[verb.value]
        args = {f.key: f for f in st.body if f.key != "verb"}
        for key in spec.required:
            if key not in args:
                raise self.fail(ModelSyntaxError, f"verb {verb.value} needs '{key}'", st.offset)
        for key, table in spec.refs.items():
            if key in args:
                for n, off in self.names_list(args[key]):
                    self.m.get(table, n, off)
        self.m.tasks[mm.group(1)] = Task(mm.group(1), verb.value, args, self.m.where(st.offset)[0])
