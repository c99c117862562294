import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import edsym.symexpr as sx
from edsym import SamplePlan
from edsym.cli import UnknownExample, UsageError, corpus_example, corpus_names, corpus_text, main, run
from edsym.dsl import DimensionMismatch, ModelSyntaxError, UnresolvedReference, parse_model
from strategies import COORDS, expressions

from conftest import corpus_model, corpus_report

SMALL_MODEL = """\
chart C { coords: [x, y, z] }   # a flat chart
form a on C = d(z) - y*d(x)
form b on C = d(z) - y*d(x) + x*d(y)
eds S on C { oneforms: [a] }
task same { verb: span-equal; on: C; a: [a]; b: [2*a] }
task other { verb: span-equal; on: C; a: [a]; b: [b]; expect: false }
"""


# ---------------------------------------------------------------- parsing

def test_empty_file_gives_an_empty_model():
    m = parse_model("")
    assert all(not v for v in m.summary().values())
    assert parse_model("# only a comment\n\n").canonical() == ""


def test_undefined_chart_is_reported_at_the_token():
    text = "chart C { coords: [x] }\nform a on Q = d(x)\n"
    with pytest.raises(UnresolvedReference) as exc:
        parse_model(text)
    assert (exc.value.line, exc.value.col) == (2, 11)


def test_syntax_errors_carry_positions():
    with pytest.raises(ModelSyntaxError) as exc:
        parse_model("chart C { coords: [x, y }\n")
    assert exc.value.line == 1
    with pytest.raises(ModelSyntaxError):
        parse_model("chart C { coords [x] }\n")


def test_map_with_wrong_number_of_components():
    text = "chart A { coords: [x, y] }\nchart B { coords: [u] }\nmap f: A -> B = [u = x, v = y]\n"
    with pytest.raises((DimensionMismatch, UnresolvedReference)):
        parse_model(text)


def test_wave_liouville_model_has_the_diagram():
    m = corpus_model("ex31")
    assert len(m.charts) == 5
    assert sorted(m.maps) == ["p1", "p2", "qG1", "qG2", "qH"]
    assert m.smooth_map("p1").source is m.charts["N"]


def coord_expr():
    syms = tuple(sx.symbol(c) for c in COORDS[:3])
    return expressions(syms, 3).map(sx.to_str)


@settings(max_examples=50)
@given(st.lists(st.tuples(coord_expr(), st.sampled_from(["a", "b", "c"])), min_size=1, max_size=3),
       st.sampled_from(["", " ", "   "]), st.booleans())
def test_parse_print_parse_is_stable(terms, pad, comment):
    body = " + ".join(f"({e})*d({c})" for e, c in terms)
    note = "   # note" if comment else ""
    text = (f"chart P {{{pad}coords: [a, b, c]{pad}}}{note}\n"
            f"form f on P ={pad}{body}\n"
            f"eds S on P {{ oneforms: [f]; twoforms: [d(f)] }}\n")
    m1 = parse_model(text)
    m2 = parse_model(m1.canonical())
    assert m2.canonical() == m1.canonical()
    assert (m1.forms["f"] - m2.forms["f"]).is_zero()


@pytest.mark.parametrize("name", ["ex31", "ex34", "ex71"])
def test_corpus_round_trips(name):
    m1 = corpus_model(name)
    m2 = parse_model(m1.canonical())
    assert m2.canonical() == m1.canonical()
    assert m2.summary() == m1.summary()


# ---------------------------------------------------------------- running

def test_run_reports_pass_and_expected_failure():
    rep = run(parse_model(SMALL_MODEL), SamplePlan())
    assert rep.passed
    res = {r.name: r for r in rep.results}
    assert res["same"].outcome is True and res["other"].outcome is False


def test_unknown_verb_filter_is_a_usage_error():
    with pytest.raises(UsageError):
        run(parse_model(SMALL_MODEL), SamplePlan(), verbs=["no-such-verb"])


def test_task_errors_stay_inside_the_report():
    text = SMALL_MODEL + "task broken { verb: span-equal; on: C; a: [a]; b: [d(a)] }\n"
    rep = run(parse_model(text), SamplePlan())
    res = {r.name: r for r in rep.results}
    assert not res["broken"].passed and res["broken"].error
    assert res["same"].passed and res["other"].passed


def test_unknown_example():
    with pytest.raises(UnknownExample):
        corpus_example("ex99")
    assert corpus_text("example31") == corpus_text("ex31")


@pytest.mark.parametrize("name", corpus_names())
def test_every_corpus_model_passes(name):
    rep = corpus_report(name)
    failed = [(r.name, r.error, r.details) for r in rep.results if not r.passed]
    assert rep.results and not failed


# ---------------------------------------------------------------- command line

def test_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.eds"
    good.write_text(SMALL_MODEL)
    assert main(["run", str(good)]) == 0
    bad = tmp_path / "bad.eds"
    bad.write_text(SMALL_MODEL.replace("expect: false", "expect: true"))
    assert main(["run", str(bad)]) == 1
    broken = tmp_path / "broken.eds"
    broken.write_text("form a on Q = d(x)\n")
    assert main(["run", str(broken)]) == 2
    assert main(["run", str(tmp_path / "missing.eds")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["run", str(good), "--verb", "nope"]) == 2
    assert main(["example", "ex99"]) == 2
    err = capsys.readouterr().err
    assert "UnresolvedReference" in err and "1:11" in err


def test_json_reports_are_byte_identical_for_a_seed(capsys):
    outs = []
    for _ in range(2):
        assert main(["example", "ex71", "--seed", "7", "--report", "json"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["seed"] == 7 and doc["passed"] and list(doc["tasks"]) == sorted(doc["tasks"])


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("EDSYM_SEED", "3")
    assert main(["example", "ex61", "--report", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 3


def test_single_task_and_emit(capsys):
    assert main(["example", "ex31", "--task", "sym_H"]) == 0
    out = capsys.readouterr().out
    assert "sym_H" in out and "1/1 tasks passed" in out
    assert main(["example", "ex31", "--emit"]) == 0
    assert capsys.readouterr().out == corpus_text("ex31")


def test_listing_verbs_and_examples(capsys):
    assert main(["verbs"]) == 0
    verbs = capsys.readouterr().out
    assert "darboux-report" in verbs and "check-symmetry" in verbs
    assert main(["examples"]) == 0
    assert capsys.readouterr().out.split() == corpus_names()
