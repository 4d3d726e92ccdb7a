from __future__ import annotations

from nsad.dsl import nodes as n
from nsad.dsl.lexer import quote


def format_number(x: float) -> str:
    """Shortest text that parses back to exactly ``x``."""
    text = repr(float(x))
    if text.endswith(".0") and "e" not in text:
        text = text[:-2]
    return text


def format_literal(value) -> str:
    return quote(value) if isinstance(value, str) else format_number(value)


def write_cond(cond, nested: bool = False) -> str:
    if isinstance(cond, n.Present):
        return f"present({cond.feature})"
    if isinstance(cond, n.Compare):
        return f"{cond.feature} {cond.op} {format_literal(cond.literal)}"
    if isinstance(cond, n.Not):
        return "not " + write_cond(cond.operand, nested=True)
    joiner = " and " if isinstance(cond, n.And) else " or "
    # compound children are always bracketed so the tree shape survives reparsing
    text = joiner.join(write_cond(c, nested=True) for c in cond.operands)
    return f"({text})" if nested else text


def write_factor(f) -> str:
    if isinstance(f, n.Const):
        return f"const({f.value})"
    if isinstance(f, n.Gate):
        return f"gate({write_cond(f.cond)}; {f.gamma})"
    return f"{f.keyword}({f.feature}; {', '.join(f.param_refs)})"


def write_effect(effect: n.Effect) -> str:
    return " + ".join(" * ".join(write_factor(f) for f in t.factors) for t in effect.terms)


def write_param(p: n.ParamDecl) -> str:
    text = f"{p.name} = {format_number(p.init)}"
    if p.bounds is not None:
        text += f" in [{format_number(p.bounds[0])}, {format_number(p.bounds[1])}]"
    if p.frozen:
        text += " frozen"
    return text


def write_rule(rule: n.Rule) -> str:
    lines = [f"rule {rule.id} {{"]
    if rule.description:
        lines.append(f"  describe {quote(rule.description)}")
    lines.append(f"  when {write_cond(rule.condition)}")
    lines.append(f"  effect {write_effect(rule.effect)}")
    lines.append("  params {")
    lines.extend(f"    {write_param(p)}" for p in rule.params)
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def serialize_ruleset(rs: n.RuleSet) -> str:
    """Canonical text for a ruleset; the empty ruleset is the empty document."""
    return "\n".join(write_rule(r) for r in rs.rules)
