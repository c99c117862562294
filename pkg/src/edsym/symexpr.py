"""Scalar expression kernel.

Expressions are sympy trees restricted to a small elementary vocabulary:
coordinate symbols, exact rationals, ``pi``, sums, products, rational
powers and the unary functions exp, log, sqrt, sin, cos, tan, cot,
arcsin and arccos.  On top of sympy this module supplies

* a parser and printer for the text grammar shared with the model files,
* a vectorized numeric evaluator that reports domain violations per point
  and propagates a first-order error magnitude used as the zero-test scale,
* seeded sampling of chart points subject to strict inequality constraints,
* the probabilistic zero test ``is_zero`` with a residual certificate.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

Expr = sp.Expr

FUNCTIONS: dict[str, Callable[[Expr], Expr]] = {
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "cot": sp.cot,
    "arcsin": sp.asin,
    "arccos": sp.acos,
    "abs": sp.Abs,
}
CONSTANTS: dict[str, Expr] = {"pi": sp.pi}

DEFAULT_BOX = (-2.0, 2.0)
CONSTRAINT_MARGIN = 0.05
RETRIES_PER_POINT = 1000


class SymexprError(Exception):
    """Base class for expression errors."""


class ParseError(SymexprError):
    """Malformed expression text."""

    def __init__(self, message: str, pos: int = 0, text: str = ""):
        super().__init__(message)
        self.message = message
        self.pos = pos
        self.text = text


class UnknownCoordinate(SymexprError):
    """A coordinate that is not part of the ambient chart."""


class DomainViolation(SymexprError, ArithmeticError):
    """Log of a non-positive number, root of a negative number or division by zero."""


class AllSamplesSingular(SymexprError):
    """No admissible sample point could be drawn."""


def symbol(name: str) -> sp.Symbol:
    """Coordinate symbol.  Coordinates are real so that log(exp(V)) = V."""
    return sp.Symbol(name, real=True)


def const(value: int | Fraction | str) -> Expr:
    return sp.Rational(value)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^&(),\[\]]))"
)


def tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split text into (kind, value, offset) triples."""
    out = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


# AST nodes are plain tuples:
#   ("num", Fraction, pos) ("name", str, pos) ("call", name, [args], pos)
#   ("neg", node, pos) ("bin", op, lhs, rhs, pos)


class _Parser:
    # precedence climbing; '&' shares the multiplicative level
    _BINARY = {"+": 1, "-": 1, "*": 2, "/": 2, "&": 2, "^": 4}

    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value: str | None = None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2], self.text)
        self.i += 1
        return tok

    def parse(self):
        node = self.expr(0)
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2], self.text)
        return node

    def expr(self, min_prec: int):
        lhs = self.unary()
        while True:
            kind, val, pos = self.peek()
            prec = self._BINARY.get(val) if kind == "op" else None
            if prec is None or prec < min_prec:
                return lhs
            self.take()
            # '^' is right associative and binds tighter than unary minus on its left
            rhs = self.expr(prec if val == "^" else prec + 1)
            lhs = ("bin", val, lhs, rhs, pos)

    def unary(self):
        kind, val, pos = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            operand = self.expr(3)
            return operand if val == "+" else ("neg", operand, pos)
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", Fraction(int(val)), pos)
        if kind == "name":
            if self.peek()[1] == "(":
                self.take("(")
                args = []
                if self.peek()[1] != ")":
                    args.append(self.expr(0))
                    while self.peek()[1] == ",":
                        self.take(",")
                        args.append(self.expr(0))
                self.take(")")
                return ("call", val, args, pos)
            return ("name", val, pos)
        if val == "(":
            node = self.expr(0)
            self.take(")")
            return node
        raise ParseError(f"unexpected token {val or 'end of input'!r}", pos, self.text)


def parse_ast(text: str):
    """Parse text into a tuple AST (used by the model-file reader too)."""
    return _Parser(text).parse()


def ast_to_expr(node, names: Mapping[str, Expr] | None = None, allowed: Iterable[str] | None = None) -> Expr:
    """Convert an AST to an expression.

    ``names`` maps identifiers to expressions; unmapped identifiers become
    coordinate symbols unless ``allowed`` restricts them.
    """
    allowed_set = None if allowed is None else set(allowed)

    def go(n) -> Expr:
        tag = n[0]
        if tag == "num":
            return sp.Rational(n[1].numerator, n[1].denominator)
        if tag == "name":
            name = n[1]
            if names is not None and name in names:
                return names[name]
            if name in CONSTANTS:
                return CONSTANTS[name]
            if allowed_set is not None and name not in allowed_set:
                raise UnknownCoordinate(name)
            return symbol(name)
        if tag == "neg":
            return -go(n[1])
        if tag == "call":
            fname, args, pos = n[1], n[2], n[3]
            if fname not in FUNCTIONS:
                raise ParseError(f"unknown function {fname!r}", pos)
            if len(args) != 1:
                raise ParseError(f"{fname} takes one argument", pos)
            return FUNCTIONS[fname](go(args[0]))
        op, a, b, pos = n[1], n[2], n[3], n[4]
        if op == "&":
            raise ParseError("wedge '&' is not a scalar operation", pos)
        x, y = go(a), go(b)
        if op == "+":
            return x + y
        if op == "-":
            return x - y
        if op == "*":
            return x * y
        if op == "/":
            if y == 0:
                raise ParseError("division by literal zero", pos)
            return x / y
        if not y.is_Rational:
            raise ParseError("exponents must be rational constants", pos)
        return x**y

    return go(node)


def parse(text: str, coordinates: Iterable[str] | None = None) -> Expr:
    """Parse an expression; optionally restrict identifiers to ``coordinates``."""
    return ast_to_expr(parse_ast(text), allowed=coordinates)


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PRINT_NAMES = {sp.exp: "exp", sp.log: "log", sp.sin: "sin", sp.cos: "cos", sp.tan: "tan",
                sp.cot: "cot", sp.asin: "arcsin", sp.acos: "arccos", sp.Abs: "abs"}

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _rational_str(r: sp.Rational) -> tuple[str, int]:
    if r.q == 1:
        return (str(r.p), _PREC_ATOM if r.p >= 0 else _PREC_NEG)
    s = f"{abs(r.p)}/{r.q}"
    return (("-" + s) if r.p < 0 else s, _PREC_NEG if r.p < 0 else _PREC_MUL)


def _wrap(s: str, prec: int, need: int) -> str:
    return f"({s})" if prec < need else s


def _print(e: Expr) -> tuple[str, int]:
    if e.is_Symbol:
        return (e.name, _PREC_ATOM)
    if e is sp.pi:
        return ("pi", _PREC_ATOM)
    if e is sp.E:
        return ("exp(1)", _PREC_ATOM)
    if e.is_Rational:
        return _rational_str(e)
    if isinstance(e, sp.Float):
        r = sp.Rational(e)
        return _rational_str(r)
    if e.is_Add:
        terms = list(e.as_ordered_terms())
        parts = []
        for k, t in enumerate(terms):
            coeff, rest = t.as_coeff_Mul()
            if coeff.is_Rational and coeff < 0:
                body = _print(-t)
                s = _wrap(body[0], body[1], _PREC_MUL)
                parts.append(("-" if k == 0 else " - ") + s)
            else:
                s, p = _print(t)
                parts.append((" + " if k else "") + s)
        return ("".join(parts), _PREC_ADD)
    if e.is_Mul:
        coeff, rest = e.as_coeff_Mul()
        if coeff.is_Rational and coeff < 0:
            s, p = _print(-e)
            return ("-" + _wrap(s, p, _PREC_MUL), _PREC_NEG)
        num, den = [], []
        for f in sp.Mul.make_args(e):
            if f.is_Rational and f.q != 1:
                if f.p != 1:
                    num.append(sp.Integer(f.p))
                den.append(sp.Integer(f.q))
            elif f.is_Pow and f.exp.is_Rational and f.exp < 0:
                den.append(f.base ** (-f.exp))
            else:
                num.append(f)
        if not num:
            num_s = "1"
        elif len(num) == 1 and not den:
            return _print(num[0])
        else:
            num_s = "*".join(_wrap(s, p, _PREC_NEG) for s, p in map(_print, num))
        if not den:
            return (num_s, _PREC_MUL)
        if len(den) == 1:
            s, p = _print(den[0])
            den_s = _wrap(s, p, _PREC_POW)
        else:
            den_s = "(" + "*".join(_wrap(s, p, _PREC_NEG) for s, p in map(_print, den)) + ")"
        return (f"{num_s}/{den_s}", _PREC_MUL)
    if e.is_Pow:
        b, x = e.base, e.exp
        if b is sp.E:
            return (f"exp({_print(x)[0]})", _PREC_ATOM)
        if x == sp.Rational(1, 2):
            return (f"sqrt({_print(b)[0]})", _PREC_ATOM)
        if x.is_Rational and x < 0:
            s, p = _print(b ** (-x))
            return (f"1/{_wrap(s, p, _PREC_POW)}", _PREC_MUL)
        bs, bp = _print(b)
        xs, xp = _print(x)
        return (f"{_wrap(bs, bp, _PREC_ATOM)}^{_wrap(xs, xp, _PREC_ATOM)}", _PREC_POW)
    if isinstance(e, sp.Function) and type(e) in _PRINT_NAMES:
        return (f"{_PRINT_NAMES[type(e)]}({_print(e.args[0])[0]})", _PREC_ATOM)
    raise SymexprError(f"cannot print {e!r}")


def to_str(e: Expr) -> str:
    """Render an expression in the text grammar (``^`` for powers)."""
    return _print(sp.sympify(e))[0]


# --------------------------------------------------------------------------
# Symbolic operations
# --------------------------------------------------------------------------

def normalize(e: Expr) -> Expr:
    """Canonical form of the rational layer: one fraction of expanded polynomials.

    Transcendental subterms are opaque kernels for the polynomial arithmetic.
    """
    e = sp.sympify(e)
    if e.is_Atom:
        return e
    return sp.cancel(sp.together(e))


_TRIG = (sp.sin, sp.cos, sp.tan, sp.cot)


def simplify(e: Expr) -> Expr:
    """normalize, plus Pythagorean identities when trigonometric kernels occur."""
    e = normalize(e)
    if e.is_Atom or not e.has(*_TRIG):
        return e
    return normalize(sp.trigsimp(e))


def diff(e: Expr, x: sp.Symbol | str, coordinates: Iterable[str] | None = None) -> Expr:
    """Exact partial derivative, normalized."""
    xs = symbol(x) if isinstance(x, str) else x
    if coordinates is not None and xs.name not in set(coordinates):
        raise UnknownCoordinate(xs.name)
    return normalize(sp.diff(e, xs))


def substitute(e: Expr, bindings: Mapping[str | sp.Symbol, Expr]) -> Expr:
    """Simultaneous substitution, normalized.  Unbound coordinates pass through."""
    rep = {(symbol(k) if isinstance(k, str) else k): sp.sympify(v) for k, v in bindings.items()}
    return normalize(sp.sympify(e).xreplace(rep))


# --------------------------------------------------------------------------
# Numeric evaluation
# --------------------------------------------------------------------------

_TINY = 1e-300


class Evaluator:
    """Evaluate expressions at a batch of points.

    Each call returns ``(value, magnitude, bad)`` arrays.  ``magnitude``
    bounds the size of rounding errors relative to machine precision by
    propagating first-order sensitivities through the tree, and ``bad``
    marks points where a domain violation occurred.
    """

    def __init__(self, env: Mapping[str, np.ndarray]):
        self.env = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        self.n = len(next(iter(self.env.values()))) if self.env else 1
        self._cache: dict[Expr, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def __call__(self, e: Expr):
        e = sp.sympify(e)
        hit = self._cache.get(e)
        if hit is None:
            with np.errstate(all="ignore"):
                hit = self._eval(e)
            self._cache[e] = hit
        return hit

    def _const(self, c: float):
        v = np.full(self.n, c)
        return v, np.abs(v), np.zeros(self.n, bool)

    def _eval(self, e: Expr):
        n = self.n
        if e.is_Symbol:
            if e.name not in self.env:
                raise UnknownCoordinate(e.name)
            v = self.env[e.name]
            return v, np.abs(v), np.zeros(n, bool)
        if e.is_Number or e is sp.pi or e is sp.E:
            return self._const(float(e))
        if e.is_Add:
            vals = [self(a) for a in e.args]
            v = sum(x[0] for x in vals)
            m = sum(x[1] for x in vals)
            bad = np.logical_or.reduce([x[2] for x in vals])
            return v, m, bad
        if e.is_Mul:
            vals = [self(a) for a in e.args]
            v = np.prod([x[0] for x in vals], axis=0)
            m = np.prod([x[1] for x in vals], axis=0)
            bad = np.logical_or.reduce([x[2] for x in vals])
            return v, m, bad
        if e.is_Pow:
            bv, bm, bb = self(e.base)
            if e.base is sp.E:
                return self._func(sp.exp, e.exp)
            x = e.exp
            if not x.is_Rational:
                xv, xm, xb = self(x)
                bad = bb | xb | (bv <= 0)
                v = np.power(np.where(bad, 1.0, bv), xv)
                m = np.maximum(np.abs(v), np.abs(v) * (np.abs(xv) * bm / np.maximum(np.abs(bv), _TINY) + np.abs(np.log(np.abs(bv) + _TINY)) * xm))
                return v, m, bad
            p, q = int(x.p), int(x.q)
            bad = bb.copy()
            if p < 0:
                bad |= np.abs(bv) <= _TINY
            if q % 2 == 0:
                bad |= bv < 0
            safe = np.where(bad, 1.0, bv)
            if q == 1:
                v = safe ** p
            elif q % 2 == 0:
                v = np.power(safe, p / q)
            else:
                v = np.sign(safe) ** (p % 2) * np.power(np.abs(safe), p / q)
            if x == 1:
                m = bm
            else:
                deriv = abs(p / q) * np.abs(v) / np.maximum(np.abs(safe), _TINY)
                m = np.maximum(np.abs(v), deriv * bm)
            bad |= ~np.isfinite(v)
            return v, m, bad
        if isinstance(e, sp.Function) and len(e.args) == 1:
            return self._func(type(e), e.args[0])
        raise SymexprError(f"cannot evaluate node {type(e).__name__}")

    def _func(self, f, arg):
        av, am, ab = self(arg)
        bad = ab.copy()
        if f is sp.exp:
            v = np.exp(av)
            d = v
        elif f is sp.log:
            bad |= av <= 0
            safe = np.where(bad, 1.0, av)
            v = np.log(safe)
            d = 1.0 / safe
        elif f is sp.sin:
            v, d = np.sin(av), np.cos(av)
        elif f is sp.cos:
            v, d = np.cos(av), np.sin(av)
        elif f is sp.tan:
            c = np.cos(av)
            bad |= np.abs(c) < 1e-12
            v = np.tan(av)
            d = 1.0 + v * v
        elif f is sp.cot:
            s = np.sin(av)
            bad |= np.abs(s) < 1e-12
            v = np.cos(av) / np.where(bad, 1.0, s)
            d = 1.0 + v * v
        elif f in (sp.asin, sp.acos):
            bad |= np.abs(av) >= 1.0
            safe = np.where(bad, 0.0, av)
            v = np.arcsin(safe) if f is sp.asin else np.arccos(safe)
            d = 1.0 / np.sqrt(1.0 - safe * safe)
        elif f is sp.Abs:
            v, d = np.abs(av), np.ones_like(av)
        else:
            raise SymexprError(f"unsupported function {f.__name__}")
        m = np.maximum(np.abs(v), np.abs(d) * am)
        bad |= ~np.isfinite(v)
        return v, m, bad


def eval_numeric(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate at a single point; raises DomainViolation on a singularity."""
    ev = Evaluator({k: np.array([float(v)]) for k, v in point.items()})
    v, _, bad = ev(e)
    if bad[0]:
        raise DomainViolation(f"{to_str(e)} is singular at {dict(point)}")
    return float(v[0])


# --------------------------------------------------------------------------
# Sampling and the zero test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePlan:
    """Seeded sampling recipe.

    ``box`` lists per-coordinate intervals overriding ``default_box``.
    """

    seed: int = 0
    sample_count: int = 8
    tolerance: float = 1e-9
    box: tuple[tuple[str, tuple[float, float]], ...] = ()
    default_box: tuple[float, float] = DEFAULT_BOX

    def interval(self, name: str, chart_box: Mapping[str, tuple[float, float]] | None = None) -> tuple[float, float]:
        for k, iv in self.box:
            if k == name:
                return iv
        if chart_box and name in chart_box:
            return chart_box[name]
        return self.default_box

    def with_seed(self, seed: int) -> "SamplePlan":
        return SamplePlan(seed, self.sample_count, self.tolerance, self.box, self.default_box)


@dataclass
class SampleSet:
    """Admissible points drawn for one computation."""

    coords: tuple[str, ...]
    env: dict[str, np.ndarray]
    evaluator: Evaluator = field(repr=False)

    @property
    def n(self) -> int:
        return self.evaluator.n

    def points(self) -> list[dict[str, float]]:
        return [{c: float(self.env[c][i]) for c in self.coords} for i in range(self.n)]


def _stream_seed(seed: int, salt: str) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(salt.encode())])


def sample_points(
    coords: Sequence[str],
    constraints: Sequence[Expr],
    plan: SamplePlan,
    exprs: Sequence[Expr] = (),
    chart_box: Mapping[str, tuple[float, float]] | None = None,
    salt: str = "",
) -> SampleSet:
    """Draw ``plan.sample_count`` points satisfying constraints with all ``exprs`` regular.

    Candidates come from one deterministic stream, so the accepted points
    depend only on the seed, the coordinates and the expressions checked.
    """
    coords = tuple(coords)
    need = plan.sample_count
    rng = _stream_seed(plan.seed, salt + "|" + ",".join(coords))
    lows = np.array([plan.interval(c, chart_box)[0] for c in coords])
    highs = np.array([plan.interval(c, chart_box)[1] for c in coords])
    accepted: list[np.ndarray] = []
    budget = RETRIES_PER_POINT * need
    drawn = 0
    batch = max(4 * need, 16)
    while len(accepted) < need and drawn < budget:
        cand = lows + (highs - lows) * rng.random((batch, len(coords)))
        drawn += batch
        env = {c: cand[:, i] for i, c in enumerate(coords)}
        ev = Evaluator(env)
        ok = np.ones(batch, bool)
        for g in constraints:
            v, _, bad = ev(g)
            ok &= ~bad & (v > CONSTRAINT_MARGIN)
        for e in exprs:
            if not ok.any():
                break
            v, _, bad = ev(e)
            ok &= ~bad
        for i in np.nonzero(ok)[0]:
            if len(accepted) < need:
                accepted.append(cand[i])
        batch = min(batch * 2, 4096)
    if not accepted:
        raise AllSamplesSingular(f"no admissible point for coordinates {coords} after {drawn} draws")
    pts = np.array(accepted)
    env = {c: pts[:, i].copy() for i, c in enumerate(coords)}
    return SampleSet(coords, env, Evaluator(env))


@dataclass(frozen=True)
class ZeroCertificate:
    """Outcome of a sampled zero test."""

    verdict: bool
    points: tuple[dict, ...]
    residuals: tuple[float, ...]
    scales: tuple[float, ...]
    tolerance: float
    seed: int

    def __bool__(self) -> bool:
        return self.verdict

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "points": [dict(p) for p in self.points],
            "residuals": list(self.residuals),
            "scales": list(self.scales),
        }


def is_zero(
    e: Expr,
    plan: SamplePlan | None = None,
    coords: Sequence[str] | None = None,
    constraints: Sequence[Expr] = (),
    chart_box: Mapping[str, tuple[float, float]] | None = None,
    salt: str = "",
) -> ZeroCertificate:
    """Probabilistic zero test: |e| <= tol*(1 + scale) at every sample point."""
    plan = plan or SamplePlan()
    e = sp.sympify(e)
    if coords is None:
        coords = sorted(s.name for s in e.free_symbols)
    else:
        missing = {s.name for s in e.free_symbols} - set(coords)
        if missing:
            raise UnknownCoordinate(", ".join(sorted(missing)))
    if e == 0:
        return ZeroCertificate(True, (), (), (), plan.tolerance, plan.seed)
    if not coords:
        v = float(e)
        return ZeroCertificate(abs(v) <= plan.tolerance, ({},), (abs(v),), (0.0,), plan.tolerance, plan.seed)
    ss = sample_points(coords, constraints, plan, [e], chart_box, salt)
    v, m, _ = ss.evaluator(e)
    res = np.abs(v)
    verdict = bool(np.all(res <= plan.tolerance * (1.0 + m)))
    return ZeroCertificate(verdict, tuple(ss.points()), tuple(map(float, res)), tuple(map(float, m)),
                           plan.tolerance, plan.seed)


def numeric_is_zero(values: np.ndarray, mags: np.ndarray, tol: float) -> bool:
    """Zero verdict on already evaluated arrays."""
    return bool(np.all(np.abs(values) <= tol * (1.0 + mags)))


def rationalize(x: float, max_den: int = 10**6) -> Fraction:
    """Nearest small-denominator rational to a float."""
    return Fraction(x).limit_denominator(max_den)


def free_names(e: Expr) -> set[str]:
    return {s.name for s in sp.sympify(e).free_symbols}
