"""Reduce J2 x J2 by three symmetry algebras and inspect the results.

Run with ``python demos/wave_liouville.py``.
"""

from edsym import SamplePlan
from edsym.cli import corpus_example
from edsym.darboux import check_darboux, check_max_compatible, extension_singular_systems
from edsym.eds import ideals_equal
from edsym.reduction import is_integrable_extension, is_symmetry, quotient


def main() -> None:
    plan = SamplePlan(seed=0)
    m = corpus_example("ex31", plan)
    I = m.systems["I"]

    for name in ("H", "G1", "G2"):
        print(f"{name} preserves I:", is_symmetry(I, m.actions[name], plan).verdict)

    for qname, target in (("QH", "B"), ("QG1", "I1"), ("QG2", "I2")):
        res = quotient(I, m.quotient_spec(qname, plan), plan)
        print(f"I/{qname[1:]} on {res.system.chart.name}:")
        for form in res.system.oneforms:
            print("   ", form)
        print("    equals", target, "->", ideals_equal(res.system, m.systems[target], plan))

    beta2 = m.forms["beta2"]
    for p, down in (("p1", "I1"), ("p2", "I2")):
        rep = is_integrable_extension(m.smooth_map(p, plan), m.systems["B"], m.systems[down], [beta2], plan)
        print(f"B -> {down} is an integrable extension:", rep.verdict)

    for dname, iname in (("DB", "FB"), ("DI1", "FI1"), ("DL", "FL")):
        rep = check_darboux(m.decompositions[dname].singular_pair(), *m.integrals[iname], plan)
        print(f"{dname}: Darboux {rep.darboux}, ranks {rep.ranks}, Vessiot dimension {rep.vessiot_dimension}")

    up = m.decompositions["DB"].singular_pair()
    for p, dname, iname in (("p1", "DI1", "FI1"), ("p2", "DI2", "FI2")):
        rec = extension_singular_systems(m.smooth_map(p, plan), [beta2], up, m.decompositions[dname].singular_pair(),
                                         m.integrals[iname], m.integrals["FB"], plan)
        rep = check_max_compatible(rec, plan)
        print(f"extension via {p}: maximally compatible {rep.verdict}, failed conditions {rep.failed}")


if __name__ == "__main__":
    main()
