import pytest
from hypothesis import given
from hypothesis import strategies as st

from darkabduce.logic import MULTI, SINGLE, TRUE, After, Interval, TemporalFact, at
from darkabduce.syntax import (
    ParseError,
    format_fact,
    format_program,
    format_rule,
    load_rules,
    parse_program,
    parse_statement,
)

RULE = "normal(AGT):[0.8,1] <- nearport(AGT):[1,1] & hotspot(AGT):[1,1] & AFTER(hotspot,nearport):[1,1] ; hop=multi"


def test_rule_round_trip():
    rule = parse_statement(RULE)
    assert rule.head_annotation == Interval(0.8, 1.0)
    assert rule.body[2] == After("hotspot", "nearport", TRUE, MULTI)
    assert format_rule(rule) == RULE


def test_alternative_symbols():
    rule = parse_statement("normal(X):[0.9,1] ← low-speed(X):[1,1] ∧ AFTER(change-direction(X), low-speed(X)):[1,1]")
    assert rule.body[1] == After("change-direction", "low-speed", TRUE, SINGLE)
    assert parse_statement("normal(X):[0.5,1] :- stay(X):[1,1]").body[0].atom.predicate == "stay"


def test_fact_round_trip():
    fact = parse_statement("at(v42, R_031_046):[1,1] @ 7")
    assert fact == TemporalFact(at("v42", "R_031_046"), TRUE, 7)
    assert format_fact(fact) == "at(v42, R_031_046):[1,1] @ 7"


def test_program_with_comments():
    text = "# learned rules\n" + RULE + "\n\nat(v, r1):[1,1] @ 0  # first report\nnearport(r1):[1,1] @ 0\n"
    p = parse_program(text)
    assert len(p.rules) == 1
    assert len(list(p.facts())) == 2


@pytest.mark.parametrize(
    "text,column",
    [
        ("normal(AGT):[0.8,1] <- nearport(AGT):[1,1] &", 45),
        ("normal(AGT):[1.5,1] <- stay(AGT):[1,1]", 14),
        ("at(v):[1,1] @ 0", 1),
        ("at(v, r):[1,1] @ 2.5", 18),
        ("nearport(r):[0.9,0.1] @ 0", 13),
        ("normal(AGT):[0.5,1] <- stay(AGT):[1,1] ; hop=twice", 46),
        ("normal(AGT):[0.5,1] <- stay(AGT):[1,1] $", 40),
        ("nearport(AGT):[0.5,1] <- stay(AGT):[1,1]", 1),
    ],
)
def test_parse_errors_report_position(text, column):
    with pytest.raises(ParseError) as exc:
        parse_statement(text, lineno=3)
    assert exc.value.line == 3
    assert exc.value.column == column


def test_parse_program_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_program(RULE + "\nbogus\n")
    assert exc.value.line == 2


def test_load_rules(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text(format_program([parse_statement(RULE)], header=["hop=multi"]))
    assert path.read_text().startswith("# hop=multi\n")
    assert [format_rule(r) for r in load_rules(path)] == [RULE]


names = st.from_regex(r"[a-z][a-z\-]{0,8}", fullmatch=True).filter(lambda s: s not in ("at", "normal"))
conf = st.floats(0.0, 1.0, allow_nan=False)


@given(names, names, conf, st.sampled_from([SINGLE, MULTI]))
def test_format_parse_round_trip(m0, m1, c, hop):
    text = f"normal(AGT):[{c!r},1] <- {m0}(AGT):[1,1] & {m1}(AGT):[1,1] & AFTER({m1},{m0}):[1,1] ; hop={hop}"
    rule = parse_statement(text)
    assert parse_statement(format_rule(rule)) == rule
    assert rule.head_annotation.lower == c
