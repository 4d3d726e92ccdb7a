from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from nsad.dsl import nodes as n
from nsad.dsl.lexer import RuleError

TAU_MIN = 0.1


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    rule_id: Optional[str] = None
    pos: Optional[n.Pos] = None

    def __str__(self) -> str:
        where = f"{self.pos}: " if self.pos else ""
        return f"{where}[{self.code}] {self.message}"


class RuleValidationError(RuleError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def _check_cond(cond, schema, rule, out):
    if isinstance(cond, n.Present):
        if cond.feature not in schema:
            out.append(Diagnostic("unknown-feature", f"unknown feature {cond.feature!r}", rule.id, cond.pos))
    elif isinstance(cond, n.Compare):
        kind = schema.get(cond.feature)
        if kind is None:
            out.append(Diagnostic("unknown-feature", f"unknown feature {cond.feature!r}", rule.id, cond.pos))
        elif kind == n.CATEGORICAL:
            if cond.op in n.ORDERING_OPS:
                out.append(Diagnostic(
                    "type-mismatch",
                    f"ordering comparison {cond.op!r} on categorical feature {cond.feature!r}",
                    rule.id, cond.pos,
                ))
            elif not isinstance(cond.literal, str):
                out.append(Diagnostic(
                    "type-mismatch",
                    f"categorical feature {cond.feature!r} compared with a number",
                    rule.id, cond.pos,
                ))
        elif isinstance(cond.literal, str):
            out.append(Diagnostic(
                "type-mismatch",
                f"numeric feature {cond.feature!r} compared with a string",
                rule.id, cond.pos,
            ))
    elif isinstance(cond, n.Not):
        _check_cond(cond.operand, schema, rule, out)
    else:
        for c in cond.operands:
            _check_cond(c, schema, rule, out)


def _check_rule(rule: n.Rule, schema, out):
    _check_cond(rule.condition, schema, rule, out)

    declared = {}
    for p in rule.params:
        if p.name in declared:
            out.append(Diagnostic("duplicate-param", f"parameter {p.name!r} declared twice", rule.id, p.pos))
        declared[p.name] = p
        if p.bounds is not None:
            lo, hi = p.bounds
            if not lo <= p.init <= hi:
                out.append(Diagnostic(
                    "bounds",
                    f"initial value {p.init!r} of {p.name!r} outside [{lo!r}, {hi!r}]",
                    rule.id, p.pos,
                ))

    for f in rule.effect.factors():
        if isinstance(f, n.Gate):
            _check_cond(f.cond, schema, rule, out)
        elif not isinstance(f, n.Const):
            kind = schema.get(f.feature)
            if kind is None:
                out.append(Diagnostic("unknown-feature", f"unknown feature {f.feature!r}", rule.id, f.pos))
            elif kind != n.NUMERIC:
                out.append(Diagnostic(
                    "type-mismatch",
                    f"{f.keyword} needs a numeric feature, {f.feature!r} is {kind}",
                    rule.id, f.pos,
                ))
        for ref in f.param_refs:
            if ref not in declared:
                out.append(Diagnostic(
                    "unresolved-param",
                    f"{f.keyword} refers to undeclared parameter {ref!r}",
                    rule.id, f.pos,
                ))
        if isinstance(f, n.Sigmoid) and f.tau in declared:
            p = declared[f.tau]
            if p.bounds is not None and p.bounds[0] <= 0:
                out.append(Diagnostic(
                    "bounds", f"smoothness parameter {f.tau!r} must have a positive lower bound", rule.id, p.pos,
                ))
            elif p.bounds is None and p.init < TAU_MIN:
                out.append(Diagnostic(
                    "bounds", f"smoothness parameter {f.tau!r} below default floor {TAU_MIN}", rule.id, p.pos,
                ))


def validate_ruleset(rs: n.RuleSet, schema=None) -> list:
    """Return every invariant violation found; an empty list means valid."""
    schema = rs.schema if schema is None else schema
    out = []
    seen = set()
    for rule in rs.rules:
        if rule.id in seen:
            out.append(Diagnostic("duplicate-id", f"duplicate rule id {rule.id!r}", rule.id, rule.pos))
        seen.add(rule.id)
        _check_rule(rule, schema, out)
    return out
