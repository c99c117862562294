"""Command line runner: verbs, reports and the shipped example corpus."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from . import darboux as dx
from . import symexpr as sx
from .dsl import Evaluator, Field, Model, ModelError, UnresolvedReference, list_items, parse_model, split_top
from .eds import (EDSPresentation, derived_system, ideals_equal, membership_many, span_equal,
                  structure_equations)
from .geometry import Chart, DiffForm, SmoothMap, VectorField, df, pullback
from .reduction import (induced_projection, is_integrable_extension, is_symmetry, is_transverse, quotient,
                        real_span_coefficients)
from .symexpr import SamplePlan

REPORT_SCHEMA = "edsym-report/1"


class UsageError(Exception):
    pass


class UnknownExample(UsageError):
    pass


# --------------------------------------------------------------------------
# helpers shared by the verbs
# --------------------------------------------------------------------------

@dataclass
class Ctx:
    model: Model
    plan: SamplePlan
    args: dict[str, Field]

    def raw(self, key: str, default: str | None = None) -> str | None:
        f = self.args.get(key)
        return f.value.strip() if f else default

    def has(self, key: str) -> bool:
        return key in self.args

    def _f(self, key: str) -> Field:
        if key not in self.args:
            raise UsageError(f"missing argument '{key}'")
        return self.args[key]

    def ref(self, table: str, key: str):
        f = self._f(key)
        return self.model.get(table, f.value.strip(), f.offset)

    def names(self, key: str) -> list[str]:
        f = self.args.get(key)
        return [n for n, _ in list_items(f.value, f.offset)] if f else []

    def ints(self, key: str) -> list[int]:
        return [int(x) for x in self.names(key)]

    def flag(self, key: str, default: bool) -> bool:
        v = self.raw(key)
        if v is None:
            return default
        if v not in ("true", "false"):
            raise UsageError(f"'{key}' must be true or false")
        return v == "true"

    def chart(self, key: str) -> Chart:
        f = self._f(key)
        return self.model.chart_of(f.value.strip(), f.offset)

    def smooth_map(self, key: str) -> SmoothMap:
        f = self._f(key)
        return self.model.smooth_map(f.value.strip(), self.plan, f.offset)

    def quotient(self, key: str):
        f = self._f(key)
        return self.model.quotient_spec(f.value.strip(), self.plan, f.offset)

    def ev(self, chart: Chart | None) -> Evaluator:
        return Evaluator(self.model, chart, self.plan)

    def expr(self, key: str, chart: Chart):
        f = self._f(key)
        return self.ev(chart).scalar(f.value, f.offset)

    def forms(self, key: str, chart: Chart, degree: int | None = None) -> list[DiffForm]:
        f = self._f(key)
        ev = self.ev(chart)
        return [ev.form(t, o, degree) for t, o in list_items(f.value, f.offset)]

    def vectors(self, key: str, chart: Chart) -> list[VectorField]:
        f = self._f(key)
        ev = self.ev(chart)
        return [ev.vector(t, o) for t, o in list_items(f.value, f.offset)]

    def system_or_forms(self, key: str, chart: Chart) -> list[DiffForm]:
        v = self.raw(key)
        if v is not None and v in self.model.systems:
            return list(self.model.systems[v].oneforms)
        return self.forms(key, chart, 1)


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (set, frozenset)):
        return sorted(jsonable(v) for v in x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, sp.Basic):
        return sx.to_str(x)
    if isinstance(x, (DiffForm, VectorField)):
        return str(x)
    if hasattr(x, "to_json"):
        return jsonable(x.to_json())
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _max_res(results) -> float:
    return max((max(r.residuals, default=0.0) for r in results), default=0.0)


def _expect_list(ctx: Ctx, key: str, observed: Sequence[int], details: dict) -> bool:
    if not ctx.has(key):
        return True
    want = ctx.ints(key)
    details[key if key.startswith("expected") else f"expected_{key}"] = want
    return list(observed) == want


def _expect_int(ctx: Ctx, key: str, observed: int, details: dict) -> bool:
    if not ctx.has(key):
        return True
    want = int(ctx.raw(key))
    details[key if key.startswith("expected") else f"expected_{key}"] = want
    return observed == want


def _expect_str(ctx: Ctx, key: str, observed: str, details: dict) -> bool:
    if not ctx.has(key):
        return True
    want = ctx.raw(key).strip("\"'")
    details[key if key.startswith("expected") else f"expected_{key}"] = want
    return observed == want


def _span_contains(chart: Chart, big: Sequence[VectorField], small: Sequence[VectorField], plan) -> bool:
    return all(real_span_coefficients(X, list(big), plan) is not None for X in small)


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def v_check_symmetry(ctx: Ctx) -> dict:
    r = is_symmetry(ctx.ref("systems", "system"), ctx.ref("actions", "action"), ctx.plan)
    return {"verdict": r.verdict, **r.details}


def v_check_invariants(ctx: Ctx) -> dict:
    G = ctx.ref("actions", "action")
    ev = ctx.ev(G.chart)
    f = ctx.args["functions"]
    rows, ok, worst = [], True, 0.0
    for t, o in list_items(f.value, f.offset):
        fn = ev.scalar(t, o)
        certs = [G.chart.is_zero(X(fn), ctx.plan) for X in G.fields]
        rows.append({"function": fn, "annihilated": [c.verdict for c in certs]})
        ok = ok and all(c.verdict for c in certs)
        worst = max([worst] + [max(c.residuals, default=0.0) for c in certs])
    return {"verdict": ok, "functions": rows, "max_residual": worst}


def v_check_transverse(ctx: Ctx) -> dict:
    r = is_transverse(ctx.ref("systems", "system"), ctx.ref("actions", "action"), ctx.plan)
    return {"verdict": r.verdict, **r.details}


def v_check_quotient(ctx: Ctx) -> dict:
    r = ctx.quotient("quotient").validate(ctx.plan)
    return {"verdict": r.verdict, **r.details}


def v_reduce(ctx: Ctx) -> dict:
    spec = ctx.quotient("quotient")
    Q = quotient(ctx.ref("systems", "system"), spec, ctx.plan)
    d = {"oneforms": [str(f) for f in Q.system.oneforms], "twoforms": [str(f) for f in Q.system.twoforms],
         "roundtrip": Q.roundtrip_ok, "roundtrip_max_residual": _max_res(Q.roundtrip)}
    ok = Q.roundtrip_ok
    if ctx.has("expected"):
        E = ctx.ref("systems", "expected")
        d["expected_equal"] = ideals_equal(E, Q.system, ctx.plan)
        ok = ok and d["expected_equal"]
    d["verdict"] = ok
    return d


def v_induced_projection(ctx: Ctx) -> dict:
    p = induced_projection(ctx.quotient("small"), ctx.quotient("large"), ctx.plan)
    d = {"components": dict(zip(p.target.coords, [sx.to_str(c) for c in p.components]))}
    ok = True
    if ctx.has("expected"):
        e = ctx.smooth_map("expected")
        mism = [c for c, a, b in zip(p.target.coords, p.components, e.components)
                if not p.source.is_zero(a - b, ctx.plan).verdict]
        d["mismatched"] = mism
        ok = not mism and e.source == p.source and e.target == p.target
    d["verdict"] = ok
    return d


def v_check_extension(ctx: Ctx) -> dict:
    ext = ctx.ref("extensions", "extension")
    f = ctx.args["extension"]
    p = ctx.model.smooth_map(ext["map"], ctx.plan, f.offset)
    r = is_integrable_extension(p, ext["E"], ext["I"], ext["admissible"], ctx.plan)
    return {"verdict": r.verdict, **r.details}


def v_verify_syzygy(ctx: Ctx) -> dict:
    ch = ctx.chart("on")
    lhs, rhs = ctx.expr("lhs", ch), ctx.expr("rhs", ch)
    cert = ch.is_zero(lhs - rhs, ctx.plan)
    return {"verdict": cert.verdict, "lhs": lhs, "rhs": rhs, "certificate": cert.to_json()}


def v_structure_equations(ctx: Ctx) -> dict:
    C = ctx.ref("coframes", "coframe")
    se = structure_equations(C, ctx.plan)
    d: dict = {"equations": se.lines(), "residual_ok": se.residual_ok, "max_residual": se.max_residual}
    ok = se.residual_ok
    names = list(C.names)
    listed: set[tuple[int, int, int]] = set()
    checks = []
    if ctx.has("coefficients"):
        f = ctx.args["coefficients"]
        ev = ctx.ev(C.chart)
        for item, off in list_items(f.value, f.offset):
            parts = split_top(item, "=", off)
            node = sx.parse_ast(parts[0][0]) if len(parts) == 2 else None
            if node is None or node[0] != "call" or node[1] != "c" or len(node[2]) != 3 \
                    or any(a[0] != "name" or a[1] not in names for a in node[2]):
                raise UsageError(f"coefficient entries look like c(theta, a, b) = expr: {item!r}")
            i, j, k = (names.index(a[1]) for a in node[2])
            want = ev.scalar(parts[1][0], parts[1][1])
            got = se.coefficient(i, j, k)
            exact = sx.simplify(got - want) == 0
            sampled = C.chart.is_zero(got - want, ctx.plan).verdict
            listed.add((i, min(j, k), max(j, k)))
            checks.append({"entry": item, "computed": got, "symbolic_equal": exact, "sampled_equal": sampled})
            ok = ok and exact and sampled
    d["coefficient_checks"] = checks
    if ctx.has("complete"):
        mod = {names.index(n) for n in ctx.names("modulo")}
        extra = []
        for n in ctx.names("complete"):
            i = names.index(n)
            for (j, k), c in se.coefficients[i].items():
                if (i, j, k) in listed or j in mod or k in mod:
                    continue
                extra.append(f"c({n}, {names[j]}, {names[k]}) = {sx.to_str(c)}")
        d["unlisted_nonzero"] = extra
        ok = ok and not extra
    if ctx.has("algebra"):
        block = [names.index(n) for n in ctx.names("algebra")]
        L = dx.maurer_cartan_algebra(se, block)
        d["algebra"] = L.to_json()
        d["jacobi"] = L.jacobi_ok()
        d["classification"] = L.classify()
        ok = ok and d["jacobi"] and _expect_str(ctx, "classification", d["classification"], d)
        if ctx.has("subalgebra"):
            want = ctx.raw("subalgebra").strip().lower()
            if want not in ("true", "false"):
                raise UsageError("subalgebra takes true or false")
            sub = dx.has_2dim_subalgebra(L)
            d["subalgebra"] = sub.to_json()
            ok = ok and sub.exists == (want == "true")
    d["verdict"] = ok
    return d


def v_derived_system(ctx: Ctx) -> dict:
    S = ctx.ref("systems", "system")
    Dr = derived_system(S, ctx.plan)
    d = {"derived": [str(f) for f in Dr.oneforms], "rank": len(Dr.oneforms)}
    ok = True
    if ctx.has("expected"):
        want = ctx.system_or_forms("expected", S.chart)
        d["expected_equal"] = span_equal(list(Dr.oneforms), want, ctx.plan)
        ok = d["expected_equal"]
    ok = _expect_int(ctx, "rank", len(Dr.oneforms), d) and ok
    d["verdict"] = ok
    return d


def v_span_equal(ctx: Ctx) -> dict:
    ch = ctx.chart("on")
    ok = span_equal(ctx.forms("a", ch, 1), ctx.forms("b", ch, 1), ctx.plan)
    return {"verdict": ok}


def v_ideal_equal(ctx: Ctx) -> dict:
    return {"verdict": ideals_equal(ctx.ref("systems", "a"), ctx.ref("systems", "b"), ctx.plan)}


def v_membership(ctx: Ctx) -> dict:
    S = ctx.ref("systems", "system")
    forms = ctx.forms("forms", S.chart)
    res = membership_many(S, forms, ctx.plan)
    return {"verdict": all(r.verdict for r in res), "results": [r.verdict for r in res],
            "max_residual": _max_res(res)}


def v_first_integral(ctx: Ctx) -> dict:
    S = ctx.ref("systems", "system")
    fs = []
    f = ctx.args["functions"]
    ev = ctx.ev(S.chart)
    for t, o in list_items(f.value, f.offset):
        fs.append(ev.scalar(t, o))
    basis = dx.FirstIntegralBasis(S.chart, tuple(fs))
    cert = dx.verify_first_integrals(basis, S.oneforms, ctx.plan)
    return {"verdict": cert.verdict, "functions": fs, **cert.to_json()}


def v_check_decomposition(ctx: Ctx) -> dict:
    r = dx.check_decomposition(ctx.ref("decompositions", "decomposition"), ctx.plan)
    d = r.to_json()
    d["verdict"] = _expect_list(ctx, "type", r.type, d)
    return d


def v_darboux_report(ctx: Ctx) -> dict:
    D = ctx.ref("decompositions", "decomposition")
    Ih, Ic = ctx.ref("integrals", "integrals")
    if Ih.chart != D.system.chart:
        raise UsageError("integrals and decomposition live on different charts")
    dec = dx.check_decomposition(D, ctx.plan)
    r = dx.check_darboux(D.singular_pair(), Ih, Ic, ctx.plan)
    d = r.to_json()
    d["type"] = list(dec.type)
    ok = r.darboux and _expect_list(ctx, "ranks", r.ranks, d) and _expect_int(ctx, "vessiot", r.vessiot_dimension, d)
    d["verdict"] = ok
    return d


def v_vessiot(ctx: Ctx) -> dict:
    Ih, Ic = ctx.ref("integrals", "integrals")
    n = Ih.chart.dim
    v = dx.vessiot_dimension(n, len(Ih.functions), len(Ic.functions))
    d = {"dimension": n, "rank_hat": len(Ih.functions), "rank_check": len(Ic.functions), "vessiot_dimension": v}
    ok = _expect_int(ctx, "expected", v, d)
    if ctx.has("action"):
        G = ctx.ref("actions", "action")
        d["action_dimension"] = G.dim
        ok = ok and G.dim == v
    d["verdict"] = ok
    return d


def _factor_charts(ctx: Ctx) -> tuple[Chart, Chart]:
    return ctx.chart("first"), ctx.chart("second")


def v_projected_algebras(ctx: Ctx) -> dict:
    G = ctx.ref("actions", "action")
    c1, c2 = _factor_charts(ctx)
    L1, L2 = dx.projected_algebras(G, (c1, c2), ctx.plan)
    d = {"first": [str(X) for X in L1.fields], "second": [str(X) for X in L2.fields]}
    ok = True
    for key, L, ch in (("expected_first", L1, c1), ("expected_second", L2, c2)):
        if ctx.has(key):
            want = ctx.vectors(key, ch)
            same = len(want) == L.dim and _span_contains(ch, L.fields, want, ctx.plan) \
                and _span_contains(ch, want, L.fields, ctx.plan)
            d[key + "_equal"] = same
            ok = ok and same
    d["verdict"] = ok
    return d


def v_intermediate_integrals(ctx: Ctx) -> dict:
    spec = ctx.quotient("quotient")
    M = spec.action.chart
    f = ctx.args["pairs"]
    pairs = []
    for item, off in list_items(f.value, f.offset):
        parts = split_top(item, "=", off)
        if len(parts) != 2:
            raise UsageError("pairs look like upstairs_expr = quotient_expr")
        pairs.append((ctx.ev(M).scalar(*parts[0]), ctx.ev(spec.chart).scalar(*parts[1])))
    V = None
    side = ctx.raw("side", "hat")
    if ctx.has("decomposition"):
        D = ctx.ref("decompositions", "decomposition")
        pair = D.singular_pair()
        V = pair.hat if side == "hat" else pair.check
    r = dx.intermediate_integrals_from_quotient(spec, pairs, V, side, ctx.plan)
    d = r.to_json()
    d["verdict"] = r.verdict
    return d


def v_diagonal_reduction(ctx: Ctx) -> dict:
    G = ctx.ref("actions", "action")
    c1, c2 = _factor_charts(ctx)
    specs = None
    if ctx.has("quotients"):
        f = ctx.args["quotients"]
        qs = [ctx.model.quotient_spec(n, ctx.plan, o) for n, o in list_items(f.value, f.offset)]
        specs = (qs[0], qs[1])
    N = ctx.chart("product") if ctx.has("product") else None
    r = dx.diagonal_reduction(G, (c1, c2), ctx.plan, specs, N)
    d = r.to_json()
    ok = r.vessiot.algebra.jacobi_ok()
    ok = _expect_int(ctx, "a1_dimension", r.A1.dim, d) and ok
    ok = _expect_int(ctx, "a2_dimension", r.A2.dim, d) and ok
    ok = _expect_int(ctx, "ideal_dimension", len(r.ideal_basis), d) and ok
    ok = _expect_int(ctx, "quotient_dimension", r.vessiot.dim, d) and ok
    ok = _expect_str(ctx, "classification", r.vessiot.algebra.classify(), d) and ok
    for key, A, ch in (("expected_a1", r.A1, c1), ("expected_a2", r.A2, c2)):
        if ctx.has(key):
            want = ctx.vectors(key, ch)
            same = len(want) == A.dim and _span_contains(ch, A.fields, want, ctx.plan) \
                and _span_contains(ch, want, A.fields, ctx.plan)
            d[key + "_equal"] = same
            ok = ok and same
    if specs is not None:
        ok = ok and bool(r.vessiot.dual_route_ok)
        if ctx.has("expected_reduced"):
            want = ctx.vectors("expected_reduced", r.reduced.chart)
            same = len(want) == r.reduced.dim and _span_contains(r.reduced.chart, r.reduced.fields, want, ctx.plan) \
                and _span_contains(r.reduced.chart, want, r.reduced.fields, ctx.plan)
            d["expected_reduced_equal"] = same
            ok = ok and same
    d["verdict"] = ok
    return d


def _record(ctx: Ctx) -> dx.ExtensionRecord:
    ext = ctx.ref("extensions", "extension")
    p = ctx.model.smooth_map(ext["map"], ctx.plan, ctx.args["extension"].offset)
    up = ctx.ref("decompositions", "up")
    down = ctx.ref("decompositions", "down")
    if up.system is not ext["E"] or down.system is not ext["I"]:
        raise UsageError("decompositions must belong to the extension's systems")
    Idown = ctx.ref("integrals", "integrals_down")
    Iup = ctx.ref("integrals", "integrals_up") if ctx.has("integrals_up") else None
    return dx.extension_singular_systems(p, ext["admissible"], up.singular_pair(), down.singular_pair(),
                                         Idown, Iup, ctx.plan, ctx.raw("extension"))


def v_extension_record(ctx: Ctx) -> dict:
    R = _record(ctx)
    d = R.to_json()
    d["pulled_integrals"] = [[sx.to_str(R.p.apply(f)) for f in b.functions] for b in R.integrals_down]
    d["verdict"] = all(R.pulled_ok)
    return d


def v_max_compat(ctx: Ctx) -> dict:
    R = _record(ctx)
    r = dx.check_max_compatible(R, ctx.plan)
    d = r.to_json()
    ok = all(r.sandwich)
    if ctx.has("failed"):
        want = ctx.names("failed")
        d["expected_failed"] = want
        # an expected failure is checked by comparing the failing conditions
        d["verdict"] = ok and r.failed == want
        return d
    d["verdict"] = ok and r.verdict
    return d


def v_subalgebra(ctx: Ctx) -> dict:
    L = ctx.ref("algebras", "algebra")
    r = dx.has_2dim_subalgebra(L)
    d = r.to_json()
    d["classification"] = L.classify()
    d["verdict"] = r.exists
    if ctx.has("conjugations"):
        rng = np.random.default_rng([ctx.plan.seed, 7])
        same = []
        for _ in range(int(ctx.raw("conjugations"))):
            while True:
                P = [[int(x) for x in rng.integers(-3, 4, size=L.dim)] for _ in range(L.dim)]
                if dx.rational_rank([[Fraction(x) for x in r_] for r_ in P]) == L.dim:
                    break
            same.append(dx.has_2dim_subalgebra(L.change_basis(P)).exists == r.exists)
        d["conjugation_invariant"] = same
        if not all(same):
            raise dx.DarbouxError("answer changed under a rational change of basis")
    return d


def v_classify(ctx: Ctx) -> dict:
    if ctx.has("algebra"):
        L = ctx.ref("algebras", "algebra")
    else:
        L = dx.LieAlgebra.from_action(ctx.ref("actions", "action"), ctx.plan)
    d = {"algebra": L.to_json(), "jacobi": L.jacobi_ok(), "classification": L.classify()}
    d["verdict"] = d["jacobi"] and _expect_str(ctx, "classification", d["classification"], d) \
        and _expect_int(ctx, "dimension", L.dim, d)
    return d


def v_pullback_roundtrip(ctx: Ctx) -> dict:
    phi = ctx.smooth_map("map")
    S = ctx.ref("systems", "source")
    T = ctx.ref("systems", "target")
    if phi.source != S.chart or phi.target != T.chart:
        raise UsageError("map must run from the source system's chart to the target's")
    gens = list(T.oneforms) + list(T.twoforms)
    fwd = membership_many(S, [pullback(phi, g) for g in gens], ctx.plan)
    d = {"forward": [r.verdict for r in fwd], "generators": len(gens), "max_residual": _max_res(fwd)}
    ok = all(r.verdict for r in fwd)
    if ctx.has("inverse"):
        psi = ctx.smooth_map("inverse")
        back = membership_many(T, [pullback(psi, g) for g in list(S.oneforms) + list(S.twoforms)], ctx.plan)
        d["backward"] = [r.verdict for r in back]
        comp = psi.compose(phi)
        ident = [S.chart.is_zero(c - s, ctx.plan).verdict for c, s in zip(comp.components, S.chart.symbols)]
        d["inverse_identity"] = all(ident)
        ok = ok and all(r.verdict for r in back) and all(ident)
    d["verdict"] = ok
    return d


@dataclass(frozen=True)
class VerbSpec:
    handler: Callable[[Ctx], dict]
    required: tuple[str, ...]
    refs: dict = field(default_factory=dict)
    help: str = ""


VERBS: dict[str, VerbSpec] = {
    "check-symmetry": VerbSpec(v_check_symmetry, ("system", "action"), {"system": "systems", "action": "actions"},
                               "Lie derivatives of the generators stay in the ideal"),
    "check-transverse": VerbSpec(v_check_transverse, ("system", "action"), {"system": "systems", "action": "actions"},
                                 "the action meets the annihilator of the 1-forms trivially"),
    "check-invariants": VerbSpec(v_check_invariants, ("action", "functions"), {"action": "actions"},
                                 "every generator annihilates the functions"),
    "check-quotient": VerbSpec(v_check_quotient, ("quotient",), {"quotient": "quotients"},
                               "invariance, submersion and section round trip"),
    "reduce": VerbSpec(v_reduce, ("system", "quotient"), {"system": "systems", "quotient": "quotients",
                                                          "expected": "systems"},
                       "quotient of a system, optionally compared with a displayed one"),
    "induced-projection": VerbSpec(v_induced_projection, ("small", "large"),
                                   {"small": "quotients", "large": "quotients", "expected": "maps"},
                                   "map between quotients of nested algebras"),
    "check-extension": VerbSpec(v_check_extension, ("extension",), {"extension": "extensions"},
                                "integrable extension test"),
    "verify-syzygy": VerbSpec(v_verify_syzygy, ("on", "lhs", "rhs"), {"on": "charts"}, "zero test of lhs - rhs"),
    "structure-equations": VerbSpec(v_structure_equations, ("coframe",), {"coframe": "coframes"},
                                    "exact structure equations of a coframe"),
    "derived-system": VerbSpec(v_derived_system, ("system",), {"system": "systems"}, "first derived system"),
    "span-equal": VerbSpec(v_span_equal, ("on", "a", "b"), {"on": "charts"}, "pointwise span equality"),
    "ideal-equal": VerbSpec(v_ideal_equal, ("a", "b"), {"a": "systems", "b": "systems"}, "algebraic ideal equality"),
    "membership": VerbSpec(v_membership, ("system", "forms"), {"system": "systems"}, "forms lie in the ideal"),
    "first-integral": VerbSpec(v_first_integral, ("system", "functions"), {"system": "systems"},
                               "differentials lie in a Pfaffian system"),
    "check-decomposition": VerbSpec(v_check_decomposition, ("decomposition",), {"decomposition": "decompositions"},
                                    "purity of the hat and check blocks"),
    "darboux-report": VerbSpec(v_darboux_report, ("decomposition", "integrals"),
                               {"decomposition": "decompositions", "integrals": "integrals"},
                               "Darboux integrability from supplied first integrals"),
    "vessiot": VerbSpec(v_vessiot, ("integrals",), {"integrals": "integrals", "action": "actions"},
                        "dimension of the Vessiot algebra from integral ranks"),
    "projected-algebras": VerbSpec(v_projected_algebras, ("action", "first", "second"),
                                   {"action": "actions", "first": "charts", "second": "charts"},
                                   "factor projections of a product action"),
    "intermediate-integrals": VerbSpec(v_intermediate_integrals, ("quotient", "pairs"),
                                       {"quotient": "quotients", "decomposition": "decompositions"},
                                       "factor invariants rewritten on a quotient"),
    "diagonal-reduction": VerbSpec(v_diagonal_reduction, ("action", "first", "second"),
                                   {"action": "actions", "first": "charts", "second": "charts",
                                    "quotients": "quotients", "product": "charts"},
                                   "factor ideals and the reduced diagonal algebra"),
    "extension-record": VerbSpec(v_extension_record, ("extension", "up", "down", "integrals_down"),
                                 {"extension": "extensions", "up": "decompositions", "down": "decompositions",
                                  "integrals_down": "integrals", "integrals_up": "integrals"},
                                 "singular systems of an extension and pulled integrals"),
    "max-compat": VerbSpec(v_max_compat, ("extension", "up", "down", "integrals_down", "integrals_up"),
                           {"extension": "extensions", "up": "decompositions", "down": "decompositions",
                            "integrals_down": "integrals", "integrals_up": "integrals"},
                           "maximal compatibility of an extension"),
    "subalgebra": VerbSpec(v_subalgebra, ("algebra",), {"algebra": "algebras"},
                           "exact search for a 2-dimensional subalgebra"),
    "classify": VerbSpec(v_classify, (), {"algebra": "algebras", "action": "actions"},
                         "structure constants and isomorphism type"),
    "pullback-roundtrip": VerbSpec(v_pullback_roundtrip, ("map", "source", "target"),
                                   {"map": "maps", "source": "systems", "target": "systems", "inverse": "maps"},
                                   "change of variables carries one system onto another"),
}

_CONTROL_KEYS = {"expect", "expect-error", "note"}


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

@dataclass
class TaskResult:
    name: str
    verb: str
    passed: bool
    outcome: bool | None
    details: dict
    error: str | None
    seconds: float


@dataclass
class Report:
    seed: int
    samples: int
    tolerance: float
    results: list[TaskResult]
    model: str = ""

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self, timing: bool = False) -> dict:
        tasks = {}
        for r in sorted(self.results, key=lambda r: r.name):
            entry = {"verb": r.verb, "passed": r.passed, "outcome": r.outcome, "error": r.error,
                     "details": jsonable(r.details)}
            if timing:
                entry["seconds"] = round(r.seconds, 3)
            tasks[r.name] = entry
        return {"schema": REPORT_SCHEMA, "model": self.model, "seed": self.seed, "samples": self.samples,
                "tolerance": self.tolerance, "passed": self.passed,
                "summary": {"total": len(self.results), "failed": sum(not r.passed for r in self.results)},
                "tasks": tasks}

    def dumps(self, timing: bool = False) -> str:
        return json.dumps(self.to_json(timing), sort_keys=True, indent=2)

    def text(self) -> str:
        lines = []
        for r in sorted(self.results, key=lambda r: r.name):
            tag = "PASS" if r.passed else "FAIL"
            extra = f"  error: {r.error}" if r.error else ""
            lines.append(f"{tag}  {r.name:<32} {r.verb:<24} {r.seconds:6.2f}s{extra}")
        n_fail = sum(not r.passed for r in self.results)
        lines.append(f"{len(self.results) - n_fail}/{len(self.results)} tasks passed (seed {self.seed})")
        return "\n".join(lines)


def run_task(model: Model, task, plan: SamplePlan) -> TaskResult:
    spec = VERBS[task.verb]
    ctx = Ctx(model, plan, {k: v for k, v in task.args.items() if k not in _CONTROL_KEYS})
    expect = task.args.get("expect")
    expect_ok = True if expect is None else expect.value.strip() != "false"
    expect_err = task.args.get("expect-error")
    t0 = time.perf_counter()
    try:
        details = spec.handler(ctx)
        outcome = bool(details.get("verdict"))
        err = None
        passed = outcome == expect_ok and expect_err is None
    except Exception as exc:  # errors stay inside the report
        details, outcome = {}, None
        err = f"{type(exc).__name__}: {exc}"
        passed = expect_err is not None and type(exc).__name__ == expect_err.value.strip()
        if passed:
            details = {"expected_error": expect_err.value.strip()}
    return TaskResult(task.name, task.verb, passed, outcome, details, err, time.perf_counter() - t0)


def run(model: Model, plan: SamplePlan | None = None, verbs: Sequence[str] | None = None,
        task: str | None = None, name: str = "") -> Report:
    plan = plan or SamplePlan()
    for v in verbs or ():
        if v not in VERBS:
            raise UsageError(f"unknown verb {v!r}")
    if task is not None and task not in model.tasks:
        raise UsageError(f"no task named {task!r}")
    results = []
    for t in model.tasks.values():
        if verbs and t.verb not in verbs:
            continue
        if task is not None and t.name != task:
            continue
        results.append(run_task(model, t, plan))
    return Report(plan.seed, plan.sample_count, plan.tolerance, results, name)


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------

def corpus_names() -> list[str]:
    root = resources.files("edsym") / "corpus"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".eds"))


def corpus_text(name: str) -> str:
    if name.startswith("example"):
        name = "ex" + name[len("example"):]
    path = resources.files("edsym") / "corpus" / f"{name}.eds"
    if not path.is_file():
        raise UnknownExample(f"no shipped example {name!r}; available: {', '.join(corpus_names())}")
    return path.read_text(encoding="utf-8")


def corpus_example(name: str, plan: SamplePlan | None = None) -> Model:
    return parse_model(corpus_text(name), plan)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _plan_from(args) -> SamplePlan:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("EDSYM_SEED", "0"))
    return SamplePlan(seed=seed, sample_count=args.samples, tolerance=args.tol)


def _add_run_options(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: $EDSYM_SEED or 0)")
    p.add_argument("--samples", type=int, default=8, help="sample points per test")
    p.add_argument("--tol", type=float, default=1e-9, help="relative tolerance of the zero test")
    p.add_argument("--report", choices=("json", "text"), default="text")
    p.add_argument("--task", default=None, help="run a single task")
    p.add_argument("--verb", action="append", default=None, help="run only tasks with this verb")
    p.add_argument("--timing", action="store_true", help="include wall times in JSON reports")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edsym", description="Verify exterior differential system computations.")
    sub = ap.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run the tasks of a model file")
    pr.add_argument("file")
    _add_run_options(pr)
    pe = sub.add_parser("example", help="run or print a shipped example")
    pe.add_argument("name")
    pe.add_argument("--emit", action="store_true", help="print the model text instead of running it")
    _add_run_options(pe)
    sub.add_parser("verbs", help="list task verbs")
    sub.add_parser("examples", help="list shipped examples")
    return ap


def _emit(report: Report, args) -> None:
    out = report.dumps(args.timing) if args.report == "json" else report.text()
    sys.stdout.write(out + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "verbs":
        for name in sorted(VERBS):
            print(f"{name:<24} {VERBS[name].help}")
        return 0
    if args.command == "examples":
        print("\n".join(corpus_names()))
        return 0
    try:
        plan = _plan_from(args)
        if args.command == "example":
            text = corpus_text(args.name)
            if args.emit:
                sys.stdout.write(text)
                return 0
            label = args.name
        else:
            with open(args.file, encoding="utf-8") as fh:
                text = fh.read()
            label = os.path.basename(args.file)
        model = parse_model(text, plan)
        report = run(model, plan, args.verb, args.task, label)
    except (ModelError, UsageError, OSError, ValueError) as exc:
        print(f"edsym: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _emit(report, args)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
