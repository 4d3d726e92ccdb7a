"""The ``.nsr`` rule language: parsing, validation and canonical output."""

from nsad.dsl import nodes
from nsad.dsl.check import Diagnostic, RuleValidationError, validate_ruleset
from nsad.dsl.lexer import ParseError, RuleError
from nsad.dsl.nodes import (
    And, Compare, Const, Effect, Gate, Linear, Not, Or, ParamDecl, Present,
    Ramp, Rule, RuleSet, Sigmoid, Term,
)
from nsad.dsl.parser import parse_rules
from nsad.dsl.writer import serialize_ruleset


def parse_ruleset(source: str, schema: dict) -> RuleSet:
    """Parse and validate rule source against a feature schema.

    Raises :class:`ParseError` for grammar violations and
    :class:`RuleValidationError` when the parsed rules break a schema or
    reference invariant.
    """
    rs = RuleSet(tuple(parse_rules(source)), dict(schema))
    problems = validate_ruleset(rs, schema)
    if problems:
        raise RuleValidationError(problems)
    return rs


def load_ruleset(path, schema: dict) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse_ruleset(fh.read(), schema)


__all__ = [
    "And", "Compare", "Const", "Diagnostic", "Effect", "Gate", "Linear", "Not",
    "Or", "ParamDecl", "ParseError", "Present", "Ramp", "Rule", "RuleError",
    "RuleSet", "RuleValidationError", "Sigmoid", "Term", "load_ruleset",
    "nodes", "parse_rules", "parse_ruleset", "serialize_ruleset",
    "validate_ruleset",
]
