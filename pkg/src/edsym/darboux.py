"""Decomposable systems, Darboux integrability, Vessiot algebras and extension invariants.

Numerical questions about forms go through the sampled rank and membership
oracles; questions about Lie algebras are answered exactly over the
rationals.  The two-dimensional subalgebra search in particular never
touches floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, product
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from . import symexpr as sx
from .eds import (Coframe, EDSPresentation, StructureEquations, algebraic_ideal, membership_many,
                  numeric_rank, ranks_at, sample_for, span_equal)
from .geometry import Chart, DiffForm, SmoothMap, VectorField, df, frame_values, pullback, pushforward_projectable
from .reduction import LieAction, QuotientSpec, kernel_basis_values, real_span_coefficients
from .symexpr import Expr, SamplePlan


class DarbouxError(Exception):
    pass


class CrossTermPresent(DarbouxError):
    def __init__(self, form: str, pair: tuple[str, str], coefficient: Expr):
        self.form, self.pair, self.coefficient = form, pair, coefficient
        super().__init__(f"{form} has a mixed term {pair[0]}^{pair[1]} with coefficient {sx.to_str(coefficient)}")


class DegenerateDecomposition(DarbouxError):
    pass


class NotProductTangent(DarbouxError):
    pass


class ExpressionNotInvariant(DarbouxError):
    pass


class NotAnIdeal(DarbouxError):
    pass


class SpanMismatch(DarbouxError):
    pass


class NonRationalStructureConstants(DarbouxError):
    pass


class InconsistentRanks(DarbouxError):
    pass


# ==========================================================================
# exact linear algebra over Q
# ==========================================================================

def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    e = sp.nsimplify(x) if isinstance(x, float) else sp.sympify(x)
    if not e.is_Rational:
        raise NonRationalStructureConstants(f"{x} is not rational")
    return Fraction(int(e.p), int(e.q))


def row_reduce(rows: Sequence[Sequence[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form and pivot columns."""
    m = [list(r) for r in rows]
    piv: list[int] = []
    r = 0
    ncols = len(m[0]) if m else 0
    for c in range(ncols):
        k = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if k is None:
            continue
        m[r], m[k] = m[k], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        piv.append(c)
        r += 1
    return m[:r], piv


def rational_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    return len(row_reduce(rows)[1]) if rows else 0


def solve_in_basis(basis: Sequence[Sequence[Fraction]], v: Sequence[Fraction]) -> list[Fraction] | None:
    """Coefficients c with Σ c_k basis_k = v, or None."""
    k = len(basis)
    if k == 0:
        return [] if all(x == 0 for x in v) else None
    n = len(v)
    aug = [[basis[j][i] for j in range(k)] + [v[i]] for i in range(n)]
    red, piv = row_reduce(aug)
    if k in piv:
        return None
    c = [Fraction(0)] * k
    for row, p in zip(red, piv):
        c[p] = row[k]
    return c


def det(m: Sequence[Sequence]) -> object:
    """Laplace expansion; works for any commutative ring with + - *."""
    n = len(m)
    if n == 0:
        return Fraction(1)
    if n == 1:
        return m[0][0]
    total = None
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * det(minor)
        if j % 2:
            term = -term
        total = term if total is None else total + term
    return total


# ==========================================================================
# Lie algebras with exact structure constants
# ==========================================================================

@dataclass(frozen=True)
class LieAlgebra:
    """[e_i, e_j] = Σ_k c[(i, j)][k] e_k for i < j, with rational entries."""

    dim: int
    constants: tuple[tuple[tuple[int, int], tuple[Fraction, ...]], ...]
    names: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, dim: int, consts: Mapping[tuple[int, int], Sequence], names: Sequence[str] = ()) -> "LieAlgebra":
        table: dict[tuple[int, int], tuple[Fraction, ...]] = {}
        for (i, j), v in consts.items():
            v = tuple(_frac(x) for x in v)
            if len(v) != dim:
                raise DarbouxError(f"bracket ({i},{j}) has {len(v)} components, expected {dim}")
            if i == j:
                if any(v):
                    raise DarbouxError("[e_i, e_i] must vanish")
                continue
            if i > j:
                i, j, v = j, i, tuple(-x for x in v)
            if (i, j) in table and table[(i, j)] != v:
                raise DarbouxError(f"conflicting values for [e{i + 1}, e{j + 1}]")
            table[(i, j)] = v
        items = tuple(sorted((k, v) for k, v in table.items() if any(v)))
        names = tuple(names) or tuple(f"e{i + 1}" for i in range(dim))
        return cls(dim, items, names)

    @classmethod
    def from_action(cls, G: LieAction, plan: SamplePlan | None = None) -> "LieAlgebra":
        return cls.from_dict(G.dim, G.structure_constants(plan))

    @classmethod
    def abelian(cls, dim: int) -> "LieAlgebra":
        return cls(dim, (), tuple(f"e{i + 1}" for i in range(dim)))

    @classmethod
    def so3(cls) -> "LieAlgebra":
        return cls.from_dict(3, {(0, 1): [0, 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]})

    @classmethod
    def sl2(cls) -> "LieAlgebra":
        # basis h, e, f
        return cls.from_dict(3, {(0, 1): [0, 2, 0], (0, 2): [0, 0, -2], (1, 2): [1, 0, 0]}, ("h", "e", "f"))

    def table(self) -> dict[tuple[int, int], tuple[Fraction, ...]]:
        return dict(self.constants)

    def structure(self, i: int, j: int) -> tuple[Fraction, ...]:
        if i == j:
            return (Fraction(0),) * self.dim
        t = self.table()
        if i < j:
            return t.get((i, j), (Fraction(0),) * self.dim)
        return tuple(-x for x in t.get((j, i), (Fraction(0),) * self.dim))

    def bracket(self, u: Sequence[Fraction], v: Sequence[Fraction]) -> list[Fraction]:
        out = [Fraction(0)] * self.dim
        for (i, j), c in self.constants:
            coef = u[i] * v[j] - u[j] * v[i]
            if coef:
                for k in range(self.dim):
                    out[k] += coef * c[k]
        return out

    def basis(self) -> list[list[Fraction]]:
        return [[Fraction(int(i == j)) for j in range(self.dim)] for i in range(self.dim)]

    def jacobi_ok(self) -> bool:
        e = self.basis()
        for a, b, c in combinations(range(self.dim), 3):
            s = [x + y + z for x, y, z in zip(self.bracket(e[a], self.bracket(e[b], e[c])),
                                              self.bracket(e[b], self.bracket(e[c], e[a])),
                                              self.bracket(e[c], self.bracket(e[a], e[b])))]
            if any(s):
                return False
        return True

    def derived_basis(self) -> list[list[Fraction]]:
        rows = [list(c) for _, c in self.constants]
        return row_reduce(rows)[0] if rows else []

    def center_dimension(self) -> int:
        # z is central iff ad_z = 0, a linear condition on z
        eqs = []
        e = self.basis()
        for j in range(self.dim):
            cols = [self.bracket(e[i], e[j]) for i in range(self.dim)]
            for k in range(self.dim):
                eqs.append([cols[i][k] for i in range(self.dim)])
        return self.dim - rational_rank(eqs)

    def ad(self, u: Sequence[Fraction]) -> list[list[Fraction]]:
        e = self.basis()
        cols = [self.bracket(u, e[j]) for j in range(self.dim)]
        return [[cols[j][i] for j in range(self.dim)] for i in range(self.dim)]

    def killing(self, u: Sequence[Fraction], v: Sequence[Fraction]) -> Fraction:
        A, B = self.ad(u), self.ad(v)
        n = self.dim
        return sum((A[i][k] * B[k][i] for i in range(n) for k in range(n)), Fraction(0))

    def change_basis(self, P: Sequence[Sequence]) -> "LieAlgebra":
        """New basis f_i = Σ_j P[i][j] e_j (rows of P)."""
        rows = [[_frac(x) for x in r] for r in P]
        if rational_rank(rows) != self.dim:
            raise DarbouxError("change of basis is singular")
        consts = {}
        for i, j in combinations(range(self.dim), 2):
            br = self.bracket(rows[i], rows[j])
            c = solve_in_basis(rows, br)
            consts[(i, j)] = c
        return LieAlgebra.from_dict(self.dim, consts)

    def classify(self) -> str:
        n = self.dim
        d = len(self.derived_basis())
        if d == 0:
            return f"abelian R^{n}"
        if n == 2:
            return "2-dim non-abelian"
        z = self.center_dimension()
        if n == 3 and d == 3:
            return "so(3)" if _definite(self, self.basis()) else "sl(2,R)"
        if n == 4 and d == 3 and z == 1:
            der = self.derived_basis()
            return "R+so(3)" if _definite(self, der) else "R+sl(2,R)"
        return f"dim {n}, derived {d}, center {z}"

    def to_json(self) -> dict:
        return {"dimension": self.dim, "basis": list(self.names),
                "brackets": {f"[{self.names[i]},{self.names[j]}]": [str(x) for x in c]
                             for (i, j), c in self.constants}}


def _definite(L: LieAlgebra, vecs: Sequence[Sequence[Fraction]]) -> bool:
    """Killing form on span(vecs) definite (Sylvester's criterion)."""
    G = [[L.killing(a, b) for b in vecs] for a in vecs]
    minors = [det([row[:k] for row in G[:k]]) for k in range(1, len(G) + 1)]
    pos = all(m > 0 for m in minors)
    neg = all((m < 0) if k % 2 == 0 else (m > 0) for k, m in enumerate(minors))
    return pos or neg


# ==========================================================================
# univariate polynomials over Q and Sturm sequences
# ==========================================================================

@dataclass(frozen=True)
class Poly:
    """Coefficients low to high; no trailing zeros."""

    c: tuple[Fraction, ...]

    def __post_init__(self):
        c = list(self.c)
        while c and c[-1] == 0:
            c.pop()
        object.__setattr__(self, "c", tuple(Fraction(x) for x in c))

    @classmethod
    def const(cls, x) -> "Poly":
        return cls((Fraction(x),))

    @property
    def deg(self) -> int:
        return len(self.c) - 1

    def __bool__(self) -> bool:
        return bool(self.c)

    def __add__(self, o: "Poly") -> "Poly":
        n = max(len(self.c), len(o.c))
        return Poly(tuple((self.c[i] if i < len(self.c) else 0) + (o.c[i] if i < len(o.c) else 0) for i in range(n)))

    def __neg__(self) -> "Poly":
        return Poly(tuple(-x for x in self.c))

    def __sub__(self, o: "Poly") -> "Poly":
        return self + (-o)

    def __mul__(self, o) -> "Poly":
        if not isinstance(o, Poly):
            o = Poly.const(o)
        if not self.c or not o.c:
            return Poly(())
        out = [Fraction(0)] * (len(self.c) + len(o.c) - 1)
        for i, a in enumerate(self.c):
            if a:
                for j, b in enumerate(o.c):
                    out[i + j] += a * b
        return Poly(tuple(out))

    __rmul__ = __mul__

    def divmod(self, o: "Poly") -> tuple["Poly", "Poly"]:
        if not o:
            raise ZeroDivisionError("polynomial division by zero")
        r = list(self.c)
        q = [Fraction(0)] * max(len(r) - len(o.c) + 1, 1)
        lead = o.c[-1]
        while len(r) >= len(o.c) and any(r):
            s = len(r) - len(o.c)
            f = r[-1] / lead
            q[s] = f
            for i, b in enumerate(o.c):
                r[s + i] -= f * b
            r.pop()
            while r and r[-1] == 0:
                r.pop()
        return Poly(tuple(q)), Poly(tuple(r))

    def __call__(self, x: Fraction) -> Fraction:
        acc = Fraction(0)
        for a in reversed(self.c):
            acc = acc * x + a
        return acc

    def derivative(self) -> "Poly":
        return Poly(tuple(i * a for i, a in enumerate(self.c) if i > 0))

    def monic(self) -> "Poly":
        return Poly(tuple(a / self.c[-1] for a in self.c)) if self.c else self


def poly_gcd(a: Poly, b: Poly) -> Poly:
    while b:
        a, b = b, a.divmod(b)[1]
    return a.monic() if a else a


def squarefree(p: Poly) -> Poly:
    if p.deg <= 0:
        return p
    g = poly_gcd(p, p.derivative())
    return p.divmod(g)[0].monic()


def sturm_sequence(p: Poly) -> list[Poly]:
    seq = [p, p.derivative()]
    while seq[-1]:
        r = seq[-2].divmod(seq[-1])[1]
        if not r:
            break
        seq.append(-r)
    return seq


def _sign_changes(vals: Sequence[Fraction]) -> int:
    s = [v for v in vals if v != 0]
    return sum(1 for a, b in zip(s, s[1:]) if (a > 0) != (b > 0))


def _sign_at_inf(p: Poly, positive: bool) -> int:
    lead = p.c[-1]
    s = 1 if lead > 0 else -1
    return s if positive or p.deg % 2 == 0 else -s


def count_real_roots(p: Poly, lo: Fraction | None = None, hi: Fraction | None = None) -> int:
    """Distinct real roots in (lo, hi] (whole line by default)."""
    if p.deg <= 0:
        return 0
    seq = sturm_sequence(squarefree(p))
    a = [_sign_at_inf(q, False) if q.deg > 0 else q.c[0] for q in seq] if lo is None else [q(lo) for q in seq]
    b = [_sign_at_inf(q, True) if q.deg > 0 else q.c[0] for q in seq] if hi is None else [q(hi) for q in seq]
    return _sign_changes(a) - _sign_changes(b)


def root_bound(p: Poly) -> Fraction:
    lead = abs(p.c[-1])
    return 1 + max((abs(a) / lead for a in p.c[:-1]), default=Fraction(0))


def isolate_roots(p: Poly) -> list[tuple[Fraction, Fraction]]:
    """Disjoint intervals (lo, hi], each holding exactly one real root, with p(lo), p(hi) ≠ 0."""
    if p.deg <= 0:
        return []
    p = squarefree(p)
    M = root_bound(p) + 1
    out = []
    stack = [(-M, M)]
    while stack:
        lo, hi = stack.pop()
        n = count_real_roots(p, lo, hi)
        if n == 0:
            continue
        if n == 1 and p(hi) != 0:
            out.append((lo, hi))
            continue
        mid = (lo + hi) / 2
        if p(mid) == 0:
            # nudge the split point off the exact rational root
            eps = (hi - lo) / 7
            while p(mid + eps) == 0 or count_real_roots(p, mid, mid + eps) > 1:
                eps /= 3
            stack.append((lo, mid + eps))
            stack.append((mid + eps, hi))
            continue
        stack.append((lo, mid))
        stack.append((mid, hi))
    return sorted(out)


def gap_points(p: Poly, avoid: int = 0) -> list[Fraction]:
    """Rationals covering every open interval between consecutive real roots of p.

    Each gap receives ``avoid + 1`` distinct points so that a further
    polynomial of degree ``avoid`` cannot vanish at all of them.
    """
    ivs = isolate_roots(p) if p.deg > 0 else []
    k = avoid + 1
    if not ivs:
        return [Fraction(j) for j in range(k)]
    M = root_bound(p) + 1
    edges = [-M - 1] + [x for iv in ivs for x in iv] + [M + 1]
    pts = []
    # gaps are (edge[0], lo_1), (hi_1, lo_2), ..., (hi_last, edge[-1])
    for a, b in zip(edges[0::2], edges[1::2]):
        pts.extend(a + (b - a) * Fraction(j, k + 1) for j in range(1, k + 1))
    return pts


# ==========================================================================
# two-dimensional subalgebras of a three-dimensional algebra
# ==========================================================================

BiPoly = dict  # {(i, j): Fraction} for a^i b^j


def _bi_mul(p: BiPoly, q: BiPoly) -> BiPoly:
    out: BiPoly = {}
    for (i, j), a in p.items():
        for (k, l), b in q.items():
            out[(i + k, j + l)] = out.get((i + k, j + l), Fraction(0)) + a * b
    return {k: v for k, v in out.items() if v}


def _bi_add(p: BiPoly, q: BiPoly, s: int = 1) -> BiPoly:
    out = dict(p)
    for k, v in q.items():
        out[k] = out.get(k, Fraction(0)) + s * v
    return {k: v for k, v in out.items() if v}


class _BiRing:
    """Thin wrapper so that ``det`` can expand matrices of bivariate polynomials."""

    __slots__ = ("p",)

    def __init__(self, p: BiPoly):
        self.p = p

    def __add__(self, o):
        return _BiRing(_bi_add(self.p, o.p))

    def __sub__(self, o):
        return _BiRing(_bi_add(self.p, o.p, -1))

    def __neg__(self):
        return _BiRing({k: -v for k, v in self.p.items()})

    def __mul__(self, o):
        return _BiRing(_bi_mul(self.p, o.p))


class _PolyRing:
    __slots__ = ("p",)

    def __init__(self, p: Poly):
        self.p = p

    def __add__(self, o):
        return _PolyRing(self.p + o.p)

    def __sub__(self, o):
        return _PolyRing(self.p - o.p)

    def __neg__(self):
        return _PolyRing(-self.p)

    def __mul__(self, o):
        return _PolyRing(self.p * o.p)


def closure_polynomial(L: LieAlgebra, i: int, j: int, k: int) -> BiPoly:
    """det[u, v, [u, v]] for u = e_i + a e_k, v = e_j + b e_k."""
    n = L.dim
    one = {(0, 0): Fraction(1)}
    u = [{} for _ in range(n)]
    v = [{} for _ in range(n)]
    u[i] = dict(one)
    u[k] = {(1, 0): Fraction(1)}
    v[j] = dict(one)
    v[k] = {(0, 1): Fraction(1)}
    w = [{} for _ in range(n)]
    for (x, y), c in L.constants:
        coef = _bi_add(_bi_mul(u[x], v[y]), _bi_mul(u[y], v[x]), -1)
        if not coef:
            continue
        for m in range(n):
            if c[m]:
                w[m] = _bi_add(w[m], {kk: vv * c[m] for kk, vv in coef.items()})
    M = [[_BiRing(u[r]), _BiRing(v[r]), _BiRing(w[r])] for r in range(n)]
    return det(M).p


def _coeff_in_a(P: BiPoly, power: int) -> Poly:
    deg = max((jb for (ia, jb) in P), default=0)
    return Poly(tuple(P.get((power, jb), Fraction(0)) for jb in range(deg + 1)))


def sylvester_resultant(f: Sequence[Poly], g: Sequence[Poly]) -> Poly:
    """Resultant in the main variable; f, g list coefficients low to high."""
    m, n = len(f) - 1, len(g) - 1
    size = m + n
    zero = _PolyRing(Poly(()))
    rows = []
    for s in range(n):
        row = [zero] * size
        for t, c in enumerate(reversed(f)):
            row[s + t] = _PolyRing(c)
        rows.append(row)
    for s in range(m):
        row = [zero] * size
        for t, c in enumerate(reversed(g)):
            row[s + t] = _PolyRing(c)
        rows.append(row)
    return det(rows).p


@dataclass
class SubalgebraResult:
    exists: bool
    witness: dict | None
    certificate: list[dict]

    def __bool__(self) -> bool:
        return self.exists

    def to_json(self) -> dict:
        return {"exists": self.exists, "witness": self.witness, "certificate": self.certificate}


def _chart_solution(P: BiPoly) -> tuple[dict | None, dict]:
    """Decide whether P(a, b) = 0 has a real solution (P has degree <= 2 in a)."""
    A, B, C = (_coeff_in_a(P, d) for d in (2, 1, 0))
    cert: dict = {"A": [str(x) for x in A.c], "B": [str(x) for x in B.c], "C": [str(x) for x in C.c]}
    small = [Fraction(x) for x in (0, 1, -1, 2, -2)] + [Fraction(1, 2), Fraction(-1, 2)]
    for a, b in product(small, small):
        if A(b) * a * a + B(b) * a + C(b) == 0:
            cert["case"] = "rational point"
            return {"a": str(a), "b": str(b), "exact": True}, cert
    if not A:
        if B:
            b = next(x for x in gap_points(Poly(()), B.deg) if B(x) != 0)
            cert["case"] = "linear in a"
            return {"a": str(-C(b) / B(b)), "b": str(b), "exact": True}, cert
        cert["case"] = "independent of a"
        if not C:
            return {"a": "0", "b": "0", "exact": True}, cert
        ivs = isolate_roots(C)
        cert["roots_of_C"] = len(ivs)
        if ivs:
            lo, hi = ivs[0]
            return {"a": "0", "b_interval": [str(lo), str(hi)], "exact": False}, cert
        return None, cert
    # the discriminant by two routes: resultant of P and dP/da, and B^2 - 4AC
    res = sylvester_resultant([C, B, A], [B, A * 2])
    disc, rem = res.divmod(-A)
    direct = B * B - A * C * 4
    if rem or (disc - direct):
        raise DarbouxError("resultant and discriminant disagree")
    cert["discriminant"] = [str(x) for x in disc.c]
    cert["case"] = "quadratic in a"
    if not disc:
        b = next(x for x in gap_points(Poly(()), A.deg) if A(x) != 0)
        return {"a": str(-B(b) / (2 * A(b))), "b": str(b), "exact": True}, cert
    for b in gap_points(disc, A.deg):
        if disc(b) > 0 and A(b) != 0:
            cert["positive_discriminant_at"] = str(b)
            root = (-float(B(b)) + float(disc(b)) ** 0.5) / (2 * float(A(b)))
            return {"a": root, "b": str(b), "exact": False}, cert
    nd = count_real_roots(disc)
    shared = count_real_roots(poly_gcd(squarefree(disc), squarefree(A))) if A.deg > 0 else 0
    cert["discriminant_roots"] = nd
    cert["roots_shared_with_A"] = shared
    if nd > shared:
        return {"b_root_of": cert["discriminant"], "exact": False}, cert
    if A.deg > 0:
        na = count_real_roots(A)
        nab = count_real_roots(poly_gcd(squarefree(A), B)) if B else na
        cert["roots_of_A"] = na
        if na > nab:
            return {"b_root_of": [str(x) for x in A.c], "exact": False}, cert
        common = poly_gcd(poly_gcd(A, B) if B else A, C) if C else (poly_gcd(A, B) if B else A)
        if common.deg > 0 and count_real_roots(common) > 0:
            return {"b_root_of": [str(x) for x in common.c], "exact": False}, cert
    return None, cert


def has_2dim_subalgebra(L: LieAlgebra) -> SubalgebraResult:
    """Exact search over the three affine charts of the Grassmannian of planes."""
    if L.dim != 3:
        raise DarbouxError("the plane search needs a 3-dimensional algebra")
    for _, c in L.constants:
        for x in c:
            if not isinstance(x, Fraction):
                raise NonRationalStructureConstants(str(x))
    certificate = []
    # chart k: planes spanned by e_i + a e_k, e_j + b e_k
    for k in (2, 1, 0):
        i, j = [m for m in range(3) if m != k]
        P = closure_polynomial(L, i, j, k)
        wit, cert = _chart_solution(P)
        cert.update({"chart": [i, j, k], "closure_polynomial": {f"a^{x} b^{y}": str(v) for (x, y), v in sorted(P.items())}})
        certificate.append(cert)
        if wit is not None:
            wit.update({"u": f"{L.names[i]} + a*{L.names[k]}", "v": f"{L.names[j]} + b*{L.names[k]}"})
            return SubalgebraResult(True, wit, certificate)
    return SubalgebraResult(False, None, certificate)


def is_subalgebra(L: LieAlgebra, vecs: Sequence[Sequence]) -> bool:
    vecs = [[_frac(x) for x in v] for v in vecs]
    for a, b in combinations(vecs, 2):
        if solve_in_basis(vecs, L.bracket(a, b)) is None:
            return False
    return True


# ==========================================================================
# constants from structure equations
# ==========================================================================

def maurer_cartan_algebra(se: StructureEquations, block: Sequence[int]) -> LieAlgebra:
    """Lie algebra from the θ∧θ part of dθ^i = -½ C^i_jk θ^j∧θ^k on a block of the coframe."""
    block = list(block)
    consts: dict[tuple[int, int], list] = {}
    for a, b in combinations(range(len(block)), 2):
        vec = []
        for i in block:
            c = sx.normalize(-se.coefficient(i, block[a], block[b]))
            if sx.free_names(c):
                raise NonRationalStructureConstants(f"coefficient {sx.to_str(c)} is not constant")
            if not c.is_Rational:
                raise NonRationalStructureConstants(f"coefficient {sx.to_str(c)} is not rational")
            vec.append(c)
        consts[(a, b)] = vec
    names = [se.coframe.names[i] for i in block]
    return LieAlgebra.from_dict(len(block), consts, names)


# ==========================================================================
# decompositions and singular systems
# ==========================================================================

@dataclass
class Decomposition:
    system: EDSPresentation
    theta: tuple[DiffForm, ...]
    hat: tuple[DiffForm, ...]
    check: tuple[DiffForm, ...]
    hat2: tuple[DiffForm, ...]
    check2: tuple[DiffForm, ...]
    name: str = ""

    def coframe(self) -> Coframe:
        k, p = len(self.theta), len(self.hat)
        names = ([f"theta{i + 1}" for i in range(k)] + [f"hat{i + 1}" for i in range(p)]
                 + [f"check{i + 1}" for i in range(len(self.check))])
        return Coframe(self.system.chart, tuple(self.theta) + tuple(self.hat) + tuple(self.check), tuple(names))

    def singular_pair(self) -> "SingularPair":
        return SingularPair(self.system.chart, tuple(self.theta) + tuple(self.hat),
                            tuple(self.theta) + tuple(self.check))


@dataclass
class DecompositionReport:
    type: tuple[int, int]
    counts: tuple[int, int]
    max_cross_residual: float
    ideal_ok: bool

    def to_json(self) -> dict:
        return {"type": list(self.type), "two_form_counts": list(self.counts),
                "max_cross_residual": self.max_cross_residual, "ideal_equal": self.ideal_ok}


def check_decomposition(D: Decomposition, plan: SamplePlan | None = None) -> DecompositionReport:
    """Verify that D splits the system into two pure blocks of 2-forms."""
    plan = plan or SamplePlan()
    p, rho = len(D.hat), len(D.check)
    if p < 2 or rho < 2 or not D.hat2 or not D.check2:
        raise DegenerateDecomposition(f"type [{p},{rho}] with {len(D.hat2)},{len(D.check2)} two-forms")
    C = D.coframe()
    if not C.check(plan):
        raise DegenerateDecomposition("supplied forms are not a coframe")
    if not span_equal(list(D.theta), list(D.system.oneforms), plan):
        raise DegenerateDecomposition("theta block does not span the 1-forms of the system")
    k = len(D.theta)
    hat_idx = set(range(k, k + p))
    check_idx = set(range(k + p, k + p + rho))
    ss = sample_for(C.chart, plan, list(C.forms) + list(D.hat2) + list(D.check2))
    inv = C.inverse(plan, ss)
    worst = 0.0
    for label, forms, allowed in (("hat", D.hat2, hat_idx), ("check", D.check2, check_idx)):
        for m, f in enumerate(forms):
            for (a, b), c in C.expand(f, inv).items():
                if a < k or b < k or (a in allowed and b in allowed):
                    continue
                cert = C.chart.is_zero(c, plan)
                worst = max(worst, max(cert.residuals, default=0.0))
                if not cert.verdict:
                    raise CrossTermPresent(f"{label} 2-form {m + 1}", (C.names[a], C.names[b]), sx.normalize(c))
    gen = algebraic_ideal(C.chart, list(D.theta), list(D.hat2) + list(D.check2), "decomposition")
    fwd = membership_many(gen, D.system.all_forms(), plan)
    back = membership_many(D.system, list(D.theta) + list(D.hat2) + list(D.check2), plan)
    ideal_ok = all(r.verdict for r in fwd) and all(r.verdict for r in back)
    if not ideal_ok:
        raise DegenerateDecomposition("generators do not reproduce the system")
    return DecompositionReport((p, rho), (len(D.hat2), len(D.check2)), worst, ideal_ok)


@dataclass
class SingularPair:
    chart: Chart
    hat: tuple[DiffForm, ...]
    check: tuple[DiffForm, ...]

    def ranks(self, plan: SamplePlan) -> tuple[int, int]:
        ss = sample_for(self.chart, plan, list(self.hat) + list(self.check))
        n = self.chart.dim
        rh, rc = ranks_at(self.hat, ss, n), ranks_at(self.check, ss, n)
        if len(set(rh)) != 1 or len(set(rc)) != 1:
            raise InconsistentRanks(f"singular ranks vary across samples: {rh}, {rc}")
        full = ranks_at(list(self.hat) + list(self.check), ss, n)
        if any(r != n for r in full):
            raise DegenerateDecomposition("the two singular systems do not span the cotangent space")
        p, rho = n - rc[0], n - rh[0]
        if p < 2 or rho < 2:
            raise DegenerateDecomposition(f"type [{p},{rho}] violates p, rho >= 2")
        return rh[0], rc[0]

    def hat_system(self) -> EDSPresentation:
        return EDSPresentation(self.chart, self.hat, (), False, "V_hat")

    def check_system(self) -> EDSPresentation:
        return EDSPresentation(self.chart, self.check, (), False, "V_check")


@dataclass
class FirstIntegralBasis:
    chart: Chart
    functions: tuple[Expr, ...]
    side: str = "hat"

    def differentials(self) -> list[DiffForm]:
        return [df(self.chart, f) for f in self.functions]


@dataclass
class IntegralCertificate:
    side: str
    memberships: list
    ranks: list[int]
    verdict: bool

    def to_json(self) -> dict:
        return {"side": self.side, "verdict": self.verdict, "ranks": self.ranks,
                "max_residual": max((max(r.residuals, default=0.0) for r in self.memberships), default=0.0)}


def verify_first_integrals(F: FirstIntegralBasis, V: Sequence[DiffForm], plan: SamplePlan | None = None) -> IntegralCertificate:
    """df ∈ V for each f, and the differentials independent."""
    plan = plan or SamplePlan()
    dfs = F.differentials()
    if not dfs:
        return IntegralCertificate(F.side, [], [], True)
    res = membership_many(EDSPresentation(F.chart, tuple(V), (), False), dfs, plan)
    ss = sample_for(F.chart, plan, dfs)
    rk = ranks_at(dfs, ss, F.chart.dim)
    ok = all(r.verdict for r in res) and all(r == len(dfs) for r in rk)
    return IntegralCertificate(F.side, res, rk, ok)


def vessiot_dimension(dimM: int, rank_hat: int, rank_check: int) -> int:
    out = dimM - rank_hat - rank_check
    if out < 0:
        raise InconsistentRanks(f"{dimM} - {rank_hat} - {rank_check} is negative")
    return out


@dataclass
class DarbouxReport:
    darboux: bool
    ranks: tuple[int, int]
    singular_ranks: tuple[int, int]
    spans_hat: list[int]
    spans_check: list[int]
    joint_ranks: list[int]
    vessiot_dimension: int
    certificates: tuple[IntegralCertificate, IntegralCertificate]
    assumptions: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.darboux

    def to_json(self) -> dict:
        return {"darboux_integrable": self.darboux, "integral_ranks": list(self.ranks),
                "singular_ranks": list(self.singular_ranks), "hat_plus_dcheck_ranks": self.spans_hat,
                "check_plus_dhat_ranks": self.spans_check, "joint_integral_ranks": self.joint_ranks,
                "vessiot_dimension": self.vessiot_dimension,
                "integrals": [c.to_json() for c in self.certificates], "assumptions": self.assumptions}


def check_darboux(S: SingularPair, Ih: FirstIntegralBasis, Ic: FirstIntegralBasis,
                  plan: SamplePlan | None = None) -> DarbouxReport:
    """Each singular system plus the other side's integrals fills T*M; no shared integrals."""
    plan = plan or SamplePlan()
    rh, rc = S.ranks(plan)
    ch = verify_first_integrals(Ih, S.hat, plan)
    cc = verify_first_integrals(Ic, S.check, plan)
    dh, dc = Ih.differentials(), Ic.differentials()
    n = S.chart.dim
    ss = sample_for(S.chart, plan, list(S.hat) + list(S.check) + dh + dc)
    spans_hat = ranks_at(list(S.hat) + dc, ss, n)
    spans_check = ranks_at(list(S.check) + dh, ss, n)
    joint = ranks_at(dh + dc, ss, n)
    ok = (ch.verdict and cc.verdict and all(r == n for r in spans_hat) and all(r == n for r in spans_check)
          and all(r == len(dh) + len(dc) for r in joint))
    vd = vessiot_dimension(n, len(dh), len(dc))
    return DarbouxReport(ok, (len(dh), len(dc)), (rh, rc), spans_hat, spans_check, joint, vd, (ch, cc),
                         ["integral bases are supplied; completeness is certified only through the rank conditions"])


# ==========================================================================
# product actions
# ==========================================================================

def _restrict_field(X: VectorField, chart: Chart) -> VectorField:
    return VectorField.from_mapping(chart, {c: X.coeff(c) for c in chart.coords})


def factor_images(G: LieAction, charts: tuple[Chart, Chart]) -> tuple[list[VectorField], list[VectorField]]:
    """ρ_1(X), ρ_2(X) for each basis field, after checking the product structure."""
    out: tuple[list, list] = ([], [])
    for a, X in enumerate(G.fields):
        for side, ch in enumerate(charts):
            own = set(ch.coords)
            for c in ch.coords:
                comp = X.coeff(c)
                stray = sx.free_names(comp) - own
                if stray:
                    raise NotProductTangent(f"field {a + 1}: component along {c} depends on {sorted(stray)}")
            out[side].append(_restrict_field(X, ch))
    covered = set(charts[0].coords) | set(charts[1].coords)
    missing = [c for c in G.chart.coords if c not in covered]
    if missing:
        raise NotProductTangent(f"coordinates {missing} belong to neither factor")
    return out


def _dedupe(fields: Sequence[VectorField], plan: SamplePlan) -> list[VectorField]:
    kept: list[VectorField] = []
    for X in fields:
        if X.is_zero(plan):
            continue
        if real_span_coefficients(X, kept, plan) is None:
            kept.append(X)
    return kept


def projected_algebras(G: LieAction, charts: tuple[Chart, Chart], plan: SamplePlan | None = None) -> tuple[LieAction, LieAction]:
    plan = plan or SamplePlan()
    im1, im2 = factor_images(G, charts)
    return (LieAction(charts[0], tuple(_dedupe(im1, plan)), f"{G.name}_1"),
            LieAction(charts[1], tuple(_dedupe(im2, plan)), f"{G.name}_2"))


def _kernel_of_images(images: Sequence[VectorField], plan: SamplePlan) -> list[list[Fraction]]:
    """Rational basis of {c : Σ c_i image_i = 0}."""
    n = len(images)
    sel: list[int] = []
    kernel = []
    for i, X in enumerate(images):
        if X.is_zero(plan):
            kernel.append([Fraction(int(k == i)) for k in range(n)])
            continue
        c = real_span_coefficients(X, [images[s] for s in sel], plan)
        if c is None:
            sel.append(i)
            continue
        vec = [Fraction(int(k == i)) for k in range(n)]
        for s, a in zip(sel, c):
            vec[s] -= _frac(a)
        kernel.append(vec)
    return kernel


def _combine(fields: Sequence[VectorField], vec: Sequence[Fraction], chart: Chart) -> VectorField:
    out = VectorField.zero(chart)
    for X, a in zip(fields, vec):
        if a:
            out = out + sp.Rational(a.numerator, a.denominator) * X
    return out.normalized()


@dataclass
class VessiotAlgebra:
    algebra: LieAlgebra
    provenance: str
    dual_route_ok: bool | None = None

    @property
    def dim(self) -> int:
        return self.algebra.dim

    def to_json(self) -> dict:
        return {"provenance": self.provenance, "jacobi": self.algebra.jacobi_ok(),
                "classification": self.algebra.classify(), "dual_route": self.dual_route_ok,
                **self.algebra.to_json()}


@dataclass
class DiagonalReduction:
    A1: LieAction
    A2: LieAction
    ideal_basis: list[list[Fraction]]
    complement: list[list[Fraction]]
    vessiot: VessiotAlgebra
    reduced: LieAction | None

    def to_json(self) -> dict:
        return {"A1_dimension": self.A1.dim, "A2_dimension": self.A2.dim,
                "A1": [str(X) for X in self.A1.fields], "A2": [str(X) for X in self.A2.fields],
                "ideal_dimension": len(self.ideal_basis),
                "ideal_basis": [[str(x) for x in v] for v in self.ideal_basis],
                "vessiot": self.vessiot.to_json(),
                "reduced": [str(X) for X in self.reduced.fields] if self.reduced else None}


def diagonal_reduction(G: LieAction, charts: tuple[Chart, Chart], plan: SamplePlan | None = None,
                       specs: tuple[QuotientSpec, QuotientSpec] | None = None,
                       product_chart: Chart | None = None) -> DiagonalReduction:
    """Split off the factor ideals and return the reduced diagonal algebra."""
    plan = plan or SamplePlan()
    im1, im2 = factor_images(G, charts)
    L = LieAlgebra.from_action(G, plan)
    if not L.jacobi_ok():
        raise DarbouxError("structure constants of the action fail the Jacobi identity")
    k2 = _kernel_of_images(im2, plan)   # elements acting only on the first factor
    k1 = _kernel_of_images(im1, plan)
    A1 = LieAction(charts[0], tuple(_combine(im1, v, charts[0]) for v in k2), f"{G.name}_A1")
    A2 = LieAction(charts[1], tuple(_combine(im2, v, charts[1]) for v in k1), f"{G.name}_A2")
    ideal, _ = row_reduce(k2 + k1) if (k2 or k1) else ([], [])
    e = L.basis()
    for v in ideal:
        for b in e:
            if solve_in_basis(ideal, L.bracket(b, v)) is None:
                raise NotAnIdeal("A1 + A2 is not an ideal of the algebra")
    comp: list[list[Fraction]] = []
    for b in e:
        if rational_rank(ideal + comp + [b]) > len(ideal) + len(comp):
            comp.append(b)
    full = comp + ideal
    consts = {}
    for a, b in combinations(range(len(comp)), 2):
        c = solve_in_basis(full, L.bracket(comp[a], comp[b]))
        consts[(a, b)] = c[:len(comp)]
    Q = LieAlgebra.from_dict(len(comp), consts)
    if not Q.jacobi_ok():
        raise DarbouxError("quotient structure constants fail the Jacobi identity")
    vess = VessiotAlgebra(Q, "reduced diagonal action" if ideal else "diagonal action")
    reduced = None
    if specs is not None:
        reduced, ok = _push_to_quotients(G, comp, specs, product_chart, Q, plan)
        vess.dual_route_ok = ok
    return DiagonalReduction(A1, A2, ideal, comp, vess, reduced)


def product_maps(M: Chart, specs: tuple[QuotientSpec, QuotientSpec], N: Chart | None = None) -> tuple[SmoothMap, SmoothMap]:
    """q_1 × q_2 : M → N_1 × N_2 and the product section."""
    N = N or specs[0].chart.product(specs[1].chart, f"{specs[0].chart.name}x{specs[1].chart.name}")
    comps = {}
    back = {}
    for s in specs:
        comps.update(zip(s.chart.coords, s.q.components))
        back.update(zip(s.section.target.coords, s.section.components))
    q = SmoothMap.from_mapping(M, N, comps, "q_product")
    sigma = SmoothMap.from_mapping(N, M, {c: back.get(c, sx.symbol(c)) for c in M.coords}, "section_product")
    return q, sigma


def _push_to_quotients(G, comp, specs, N, Q: LieAlgebra, plan):
    M = G.chart
    q, sigma = product_maps(M, specs, N)
    fields = [pushforward_projectable(q, _combine(G.fields, v, M), sigma, plan) for v in comp]
    red = LieAction(q.target, tuple(fields), f"{G.name}_reduced")
    try:
        R = LieAlgebra.from_action(red, plan)
    except Exception:
        return red, False
    return red, R.table() == Q.table()


# ==========================================================================
# intermediate integrals from quotients
# ==========================================================================

@dataclass
class QuotientIntegrals:
    basis: FirstIntegralBasis
    invariance: list[bool]
    expression_checks: list[bool]
    section_checks: list[bool]
    membership: IntegralCertificate | None

    @property
    def verdict(self) -> bool:
        ok = all(self.invariance) and all(self.expression_checks) and all(self.section_checks)
        return ok and (self.membership is None or self.membership.verdict)

    def to_json(self) -> dict:
        return {"functions": [sx.to_str(f) for f in self.basis.functions], "invariance": self.invariance,
                "expression_checks": self.expression_checks, "section_checks": self.section_checks,
                "membership": self.membership.to_json() if self.membership else None, "verdict": self.verdict}


def intermediate_integrals_from_quotient(spec: QuotientSpec, pairs: Sequence[tuple[Expr, Expr]],
                                         V: Sequence[DiffForm] | None = None, side: str = "hat",
                                         plan: SamplePlan | None = None) -> QuotientIntegrals:
    """Express factor invariants J in the quotient coordinates as F.

    Each pair (J, F) is checked three ways: X(J) = 0 for the action, q*F = J
    upstairs, and σ*J = F on the quotient.  With V given, dF ∈ V is certified.
    """
    plan = plan or SamplePlan()
    M = spec.action.chart
    inv, expr_ok, sec_ok = [], [], []
    for J, F in pairs:
        J, F = sp.sympify(J), sp.sympify(F)
        good = True
        for X in spec.action.fields:
            v = X(J)
            if v != 0 and not M.is_zero(v, plan).verdict:
                good = False
        if not good:
            raise ExpressionNotInvariant(f"{sx.to_str(J)} is not invariant under {spec.action.name}")
        inv.append(good)
        up = M.is_zero(spec.q.apply(F) - J, plan)
        if not up.verdict:
            raise ExpressionNotInvariant(f"{sx.to_str(F)} does not pull back to {sx.to_str(J)}")
        expr_ok.append(True)
        sec_ok.append(spec.chart.is_zero(spec.section.apply(J) - F, plan).verdict)
    basis = FirstIntegralBasis(spec.chart, tuple(sp.sympify(F) for _, F in pairs), side)
    mem = verify_first_integrals(basis, V, plan) if V is not None else None
    return QuotientIntegrals(basis, inv, expr_ok, sec_ok, mem)


# ==========================================================================
# integrable extensions
# ==========================================================================

@dataclass
class ExtensionRecord:
    p: SmoothMap
    J: tuple[DiffForm, ...]
    upstairs: SingularPair
    downstairs: SingularPair
    integrals_up: tuple[FirstIntegralBasis, FirstIntegralBasis]
    integrals_down: tuple[FirstIntegralBasis, FirstIntegralBasis]
    pulled_ok: tuple[bool, bool] = (True, True)
    name: str = ""

    def to_json(self) -> dict:
        return {"map": self.p.name, "admissible": [str(f) for f in self.J],
                "pulled_integrals_ok": list(self.pulled_ok),
                "integral_counts": {"up": [len(b.functions) for b in self.integrals_up],
                                    "down": [len(b.functions) for b in self.integrals_down]}}


def extension_singular_systems(p: SmoothMap, J: Sequence[DiffForm], upstairs: SingularPair, downstairs: SingularPair,
                               integrals_down: tuple[FirstIntegralBasis, FirstIntegralBasis],
                               integrals_up: tuple[FirstIntegralBasis, FirstIntegralBasis] | None = None,
                               plan: SamplePlan | None = None, name: str = "") -> ExtensionRecord:
    """Certify Ẑ = J + p*V̂, Ž = J + p*V̌ and pull the downstairs integrals up."""
    plan = plan or SamplePlan()
    J = tuple(J)
    if p.source != upstairs.chart or p.target != downstairs.chart:
        raise SpanMismatch("map does not connect the two singular pairs")
    for label, up, down in (("hat", upstairs.hat, downstairs.hat), ("check", upstairs.check, downstairs.check)):
        rhs = list(J) + [pullback(p, f) for f in down]
        if not span_equal(list(up), rhs, plan):
            raise SpanMismatch(f"{label} singular system upstairs differs from J + p*V_{label}")
    pulled = []
    okays = []
    for basis, V in zip(integrals_down, (upstairs.hat, upstairs.check)):
        fs = FirstIntegralBasis(upstairs.chart, tuple(p.apply(f) for f in basis.functions), basis.side)
        cert = verify_first_integrals(fs, V, plan)
        pulled.append(fs)
        okays.append(cert.verdict)
    if integrals_up is None:
        integrals_up = (pulled[0], pulled[1])
    else:
        for basis, V in zip(integrals_up, (upstairs.hat, upstairs.check)):
            if not verify_first_integrals(basis, V, plan).verdict:
                raise SpanMismatch(f"supplied upstairs {basis.side} integrals are not first integrals")
    return ExtensionRecord(p, J, upstairs, downstairs, integrals_up, integrals_down, (okays[0], okays[1]), name)


@dataclass
class MaxCompatReport:
    verdict: bool
    condition_i: tuple[bool, bool]
    condition_ii: tuple[bool, bool]
    kernel_dimension: int
    ranks_up: tuple[int, int]
    ranks_down_pulled: tuple[int, int]
    transversality_ranks: tuple[list[int], list[int]]
    sandwich: tuple[bool, bool]
    failed: list[str]

    def __bool__(self) -> bool:
        return self.verdict

    def to_json(self) -> dict:
        return {"maximally_compatible": self.verdict, "condition_i": list(self.condition_i),
                "condition_ii": list(self.condition_ii), "kernel_dimension": self.kernel_dimension,
                "ranks_up": list(self.ranks_up), "ranks_down_pulled": list(self.ranks_down_pulled),
                "transversality_ranks": [list(x) for x in self.transversality_ranks],
                "bounds_hold": list(self.sandwich), "failed": self.failed}


def _const_rank(rs: list[int], what: str) -> int:
    if len(set(rs)) != 1:
        raise InconsistentRanks(f"{what} varies across samples: {rs}")
    return rs[0]


def check_max_compatible(R: ExtensionRecord, plan: SamplePlan | None = None) -> MaxCompatReport:
    """Kernel transversality [i] and the rank equalities [ii], with the bounds on the upstairs ranks."""
    plan = plan or SamplePlan()
    E = R.upstairs.chart
    n = E.dim
    up = [b.differentials() for b in R.integrals_up]
    down = [[df(E, R.p.apply(f)) for f in b.functions] for b in R.integrals_down]
    forms = [f for group in up + down for f in group]
    ss = sample_for(E, plan, forms, exprs=list(R.p.components))
    kers = kernel_basis_values(R.p, ss)
    kdim = _const_rank([k.shape[1] for k in kers], "kernel dimension")
    cond_i, trans = [], []
    for group in up:
        if group:
            vals, mags = frame_values(group, ss.evaluator, n)
            rs = [numeric_rank(vals[k] @ kers[k], float(mags[k].max())) for k in range(ss.n)]
        else:
            rs = [0] * ss.n
        trans.append(rs)
        cond_i.append(all(r == kdim for r in rs))
    r_up = tuple(_const_rank(ranks_at(g, ss, n), "upstairs integral rank") for g in up)
    r_down = tuple(_const_rank(ranks_at(g, ss, n), "pulled integral rank") for g in down)
    cond_ii = tuple(r_up[s] == kdim + r_down[s] for s in range(2))
    sandwich = tuple(r_down[s] <= r_up[s] <= r_down[s] + kdim for s in range(2))
    failed = []
    if not all(cond_i):
        failed.append("i")
    if not all(cond_ii):
        failed.append("ii")
    return MaxCompatReport(not failed, (cond_i[0], cond_i[1]), cond_ii, kdim, r_up, r_down,
                           (trans[0], trans[1]), sandwich, failed)
