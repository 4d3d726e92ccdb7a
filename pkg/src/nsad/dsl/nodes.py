"""AST node types for the rule language.

Every node is a frozen dataclass so rulesets compare structurally and can be
shared across threads. Source positions are carried for diagnostics but do
not take part in equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

NUMERIC = "numeric"
CATEGORICAL = "categorical"
FEATURE_KINDS = (NUMERIC, CATEGORICAL)

COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=")
ORDERING_OPS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class Pos:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


_NOPOS = field(default=None, compare=False, repr=False)


# -- conditions ---------------------------------------------------------------


@dataclass(frozen=True)
class Present:
    feature: str
    pos: Optional[Pos] = _NOPOS


@dataclass(frozen=True)
class Compare:
    feature: str
    op: str
    literal: Union[float, str]
    pos: Optional[Pos] = _NOPOS


@dataclass(frozen=True)
class Not:
    operand: "Cond"


@dataclass(frozen=True)
class And:
    operands: tuple


@dataclass(frozen=True)
class Or:
    operands: tuple


Cond = Union[Present, Compare, Not, And, Or]


# -- effect primitives --------------------------------------------------------


@dataclass(frozen=True)
class Sigmoid:
    """alpha * sigma((z_f - threshold) / tau)"""

    feature: str
    alpha: str
    threshold: str
    tau: str
    pos: Optional[Pos] = _NOPOS

    keyword = "sigmoid"

    @property
    def param_refs(self) -> tuple:
        return (self.alpha, self.threshold, self.tau)


@dataclass(frozen=True)
class Ramp:
    """beta * max(0, z_f - threshold)"""

    feature: str
    beta: str
    threshold: str
    pos: Optional[Pos] = _NOPOS

    keyword = "ramp"

    @property
    def param_refs(self) -> tuple:
        return (self.beta, self.threshold)


@dataclass(frozen=True)
class Linear:
    """slope * z_f + intercept"""

    feature: str
    slope: str
    intercept: str
    pos: Optional[Pos] = _NOPOS

    keyword = "linear"

    @property
    def param_refs(self) -> tuple:
        return (self.slope, self.intercept)


@dataclass(frozen=True)
class Gate:
    """gamma * 1[cond]"""

    cond: Cond
    gamma: str
    pos: Optional[Pos] = _NOPOS

    keyword = "gate"

    @property
    def param_refs(self) -> tuple:
        return (self.gamma,)


@dataclass(frozen=True)
class Const:
    value: str
    pos: Optional[Pos] = _NOPOS

    keyword = "const"

    @property
    def param_refs(self) -> tuple:
        return (self.value,)


Factor = Union[Sigmoid, Ramp, Linear, Gate, Const]

# number of parameter slots per primitive
ARITY = {"sigmoid": 3, "ramp": 2, "linear": 2, "gate": 1, "const": 1}


@dataclass(frozen=True)
class Term:
    factors: tuple


@dataclass(frozen=True)
class Effect:
    terms: tuple

    def factors(self):
        for term in self.terms:
            yield from term.factors


# -- rules --------------------------------------------------------------------


@dataclass(frozen=True)
class ParamDecl:
    name: str
    init: float
    bounds: Optional[tuple] = None
    frozen: bool = False
    pos: Optional[Pos] = _NOPOS


@dataclass(frozen=True)
class Rule:
    id: str
    condition: Cond
    effect: Effect
    params: tuple
    description: str = ""
    pos: Optional[Pos] = _NOPOS

    def param(self, name: str) -> ParamDecl:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(f"rule {self.id!r} declares no parameter {name!r}")

    def qualified(self, name: str) -> str:
        return f"{self.id}.{name}"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple = ()
    schema: dict = field(default_factory=dict, hash=False)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)


def cond_features(cond: Cond) -> set:
    """Every feature a condition mentions, including those under present()."""
    if isinstance(cond, (Present, Compare)):
        return {cond.feature}
    if isinstance(cond, Not):
        return cond_features(cond.operand)
    out = set()
    for c in cond.operands:
        out |= cond_features(c)
    return out


def effect_features(effect: Effect) -> list:
    """Numeric features read directly by effect primitives, in first-use order."""
    seen = []
    for f in effect.factors():
        name = getattr(f, "feature", None)
        if name is not None and name not in seen:
            seen.append(name)
    return seen


def effect_param_refs(effect: Effect) -> list:
    seen = []
    for f in effect.factors():
        for ref in f.param_refs:
            if ref not in seen:
                seen.append(ref)
    return seen
