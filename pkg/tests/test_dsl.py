import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import AGE_RULE, AGE_SCHEMA
from rulegen import SCHEMA, random_source
from nsad.dsl import (
    Compare, Const, ParseError, Ramp, RuleSet, RuleValidationError, Sigmoid,
    parse_rules, parse_ruleset, serialize_ruleset, validate_ruleset,
)
from nsad.dsl.writer import format_number


class TestParse:
    def test_age_rule_structure(self, age_rules):
        assert len(age_rules.rules) == 1
        rule = age_rules.rules[0]
        assert rule.id == "age_risk"
        assert [p.name for p in rule.params] == ["alpha", "beta", "T1", "T2", "tau"]
        assert rule.param("T1").bounds == (50.0, 90.0)
        assert rule.param("alpha").bounds is None
        f1, f2 = rule.effect.factors()
        assert f1 == Sigmoid("age", "alpha", "T1", "tau")
        assert f2 == Ramp("age", "beta", "T2")

    def test_empty_source(self):
        assert parse_ruleset("", AGE_SCHEMA).rules == ()
        assert parse_ruleset("  # only a comment\n", AGE_SCHEMA).rules == ()

    def test_wrong_arity_names_primitive(self):
        src = "rule r { when present(age) effect sigmoid(age; alpha) params { alpha = 1 } }"
        with pytest.raises(ParseError) as err:
            parse_rules(src)
        assert "sigmoid" in str(err.value)
        assert err.value.line == 1

    def test_syntax_error_has_position_and_expected(self):
        src = "rule r {\n  when age >\n  effect const(c) params { c = 1 } }"
        with pytest.raises(ParseError) as err:
            parse_rules(src)
        assert err.value.line == 3
        assert err.value.expected

    def test_numbers_parse_to_full_precision(self):
        src = "rule r { when age > 1e-3 effect const(c) params { c = 0.1000000000000000055511151231257827 } }"
        rule = parse_rules(src)[0]
        assert rule.param("c").init == 0.1
        assert rule.condition == Compare("age", ">", 0.001)

    def test_keywords_are_case_sensitive(self):
        with pytest.raises(ParseError):
            parse_rules("Rule r { when present(age) effect const(c) params { c = 1 } }")

    def test_string_escapes(self):
        src = r'rule r { describe "a \"q\" \\ b" when smoker == "y\"es" effect const(c) params { c = 1 } }'
        rule = parse_rules(src)[0]
        assert rule.description == 'a "q" \\ b'
        assert rule.condition.literal == 'y"es'

    def test_and_binds_tighter_than_or(self):
        rule = parse_rules(
            "rule r { when present(age) or present(bmi) and not present(sex) effect const(c) params { c = 1 } }"
        )[0]
        assert type(rule.condition).__name__ == "Or"
        assert type(rule.condition.operands[1]).__name__ == "And"

    @pytest.mark.parametrize("src", [
        "rule r { when present(age) effect const(c) params { c = 1 }",          # unclosed
        "rule r { when present(age) effect const(c) params { c = } }",          # missing number
        "rule r { when age >> 3 effect const(c) params { c = 1 } }",           # bad operator
        "rule r { when present(age) effect const(c) + params { c = 1 } }",      # dangling +
        "rule r { when present(age) effect const(c) params { c = 1 in [0 1] } }",
        "rule r { when present(age) effect foo(c) params { c = 1 } }",
        "rule r { when present(age) effect const(c) params { c = 1 } } trailing",
        "rule 9r { when present(age) effect const(c) params { c = 1 } }",
        'rule r { when smoker == "unterminated effect const(c) params { c = 1 } }',
        "rule r { effect const(c) params { c = 1 } }",
    ])
    def test_rejects_malformed(self, src):
        with pytest.raises(ParseError):
            parse_rules(src)


class TestValidate:
    def test_valid_age_rule(self, age_rules):
        assert validate_ruleset(age_rules, AGE_SCHEMA) == []

    def test_unknown_feature(self):
        rs = RuleSet(tuple(parse_rules("rule r { when present(weight) effect const(c) params { c = 1 } }")))
        diags = validate_ruleset(rs, AGE_SCHEMA)
        assert len(diags) == 1
        assert diags[0].code == "unknown-feature"
        assert "weight" in diags[0].message
        assert diags[0].pos.line == 1

    def test_duplicate_id(self):
        one = "rule r { when present(age) effect const(c) params { c = 1 } }\n"
        diags = validate_ruleset(RuleSet(tuple(parse_rules(one * 2))), AGE_SCHEMA)
        assert [d.code for d in diags] == ["duplicate-id"]

    def test_unresolved_param(self):
        rs = RuleSet(tuple(parse_rules("rule r { when present(age) effect const(k) params { c = 1 } }")))
        assert [d.code for d in validate_ruleset(rs, AGE_SCHEMA)] == ["unresolved-param"]

    @pytest.mark.parametrize("cond", ['smoker < "yes"', "smoker == 3", 'age == "old"'])
    def test_type_mismatch(self, cond):
        rs = RuleSet(tuple(parse_rules(f"rule r {{ when {cond} effect const(c) params {{ c = 1 }} }}")))
        assert [d.code for d in validate_ruleset(rs, AGE_SCHEMA)] == ["type-mismatch"]

    def test_categorical_effect_feature(self):
        rs = RuleSet(tuple(parse_rules("rule r { when present(sex) effect linear(sex; a, b) params { a = 1 b = 0 } }")))
        assert [d.code for d in validate_ruleset(rs, AGE_SCHEMA)] == ["type-mismatch"]

    def test_init_outside_bounds(self):
        rs = RuleSet(tuple(parse_rules("rule r { when present(age) effect const(c) params { c = 5 in [0, 1] } }")))
        assert [d.code for d in validate_ruleset(rs, AGE_SCHEMA)] == ["bounds"]

    def test_tau_bound_must_be_positive(self):
        src = "rule r { when present(age) effect sigmoid(age; a, t, s) params { a = 1 t = 1 s = 1 in [0, 5] } }"
        rs = RuleSet(tuple(parse_rules(src)))
        assert [d.code for d in validate_ruleset(rs, AGE_SCHEMA)] == ["bounds"]

    def test_parse_ruleset_raises_on_diagnostics(self):
        with pytest.raises(RuleValidationError) as err:
            parse_ruleset("rule r { when present(weight) effect const(c) params { c = 1 } }", AGE_SCHEMA)
        assert err.value.diagnostics[0].code == "unknown-feature"


class TestSerialize:
    def test_empty(self):
        assert serialize_ruleset(RuleSet(())) == ""

    def test_age_rule_round_trip(self, age_rules):
        text = serialize_ruleset(age_rules)
        assert parse_ruleset(text, AGE_SCHEMA) == age_rules
        assert serialize_ruleset(parse_ruleset(text, AGE_SCHEMA)) == text

    def test_bounds_preserved_verbatim(self, age_rules):
        text = serialize_ruleset(age_rules)
        assert "T1 = 70 in [50, 90]" in text
        assert "tau = 5 in [0.1, 20]" in text

    def test_frozen_and_description_preserved(self):
        src = 'rule r { describe "line\\nbreak" when present(age) effect const(c) params { c = -2.5e-7 frozen } }'
        rs = parse_ruleset(src, AGE_SCHEMA)
        again = parse_ruleset(serialize_ruleset(rs), AGE_SCHEMA)
        assert again == rs
        assert again.rules[0].param("c").frozen
        assert again.rules[0].description == "line\nbreak"

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_number_format_is_exact(self, x):
        assert float(format_number(x)) == x


@settings(max_examples=150, deadline=None)
@given(st.randoms(use_true_random=False))
def test_round_trip_random_sources(rnd):
    src = random_source(random.Random(rnd.getrandbits(64)))
    rs = parse_ruleset(src, SCHEMA)
    text = serialize_ruleset(rs)
    again = parse_ruleset(text, SCHEMA)
    assert again == rs
    assert serialize_ruleset(again) == text


@settings(max_examples=50, deadline=None)
@given(st.randoms(use_true_random=False))
def test_parse_is_deterministic(rnd):
    src = random_source(random.Random(rnd.getrandbits(64)))
    assert parse_ruleset(src, SCHEMA) == parse_ruleset(src, SCHEMA)


@settings(max_examples=150, deadline=None)
@given(st.randoms(use_true_random=False), st.data())
def test_truncated_sources_are_rejected(rnd, data):
    """Cutting a non-empty source at a token boundary inside a rule never parses silently."""
    src = random_source(random.Random(rnd.getrandbits(64)), max_rules=2)
    rs = parse_ruleset(src, SCHEMA)
    if not rs.rules:
        return
    text = serialize_ruleset(rs)
    body_end = text.rstrip().rfind("}")
    cut = data.draw(st.integers(min_value=1, max_value=body_end))
    prefix = text[:cut]
    # a cut that leaves only whole rules (plus whitespace) is itself valid input
    if prefix.rstrip().endswith("}") and prefix.count("{") == prefix.count("}"):
        return
    with pytest.raises(ParseError):
        parse_rules(prefix)
