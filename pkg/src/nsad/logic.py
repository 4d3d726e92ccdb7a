"""Three-valued evaluation of rule conditions over partially observed records.

A comparison against a missing feature is *unknown*; ``present`` is always
definite. ``not``/``and``/``or`` follow Kleene's strong logic, and a condition
holds only when it evaluates to TRUE. This makes dropping a feature unable to
switch a rule on, except through a negated ``present``.
"""

from __future__ import annotations

import operator

from nsad.dsl import nodes as n

TRUE, FALSE, UNKNOWN = 1, 0, -1

_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def features_of(record) -> dict:
    return getattr(record, "features", record)


def truth(cond, features: dict) -> int:
    if isinstance(cond, n.Present):
        return TRUE if features.get(cond.feature) is not None else FALSE
    if isinstance(cond, n.Compare):
        value = features.get(cond.feature)
        if value is None:
            return UNKNOWN
        return TRUE if _OPS[cond.op](value, cond.literal) else FALSE
    if isinstance(cond, n.Not):
        t = truth(cond.operand, features)
        return t if t == UNKNOWN else 1 - t
    if isinstance(cond, n.And):
        result = TRUE
        for c in cond.operands:
            t = truth(c, features)
            if t == FALSE:
                return FALSE
            if t == UNKNOWN:
                result = UNKNOWN
        return result
    result = FALSE
    for c in cond.operands:
        t = truth(c, features)
        if t == TRUE:
            return TRUE
        if t == UNKNOWN:
            result = UNKNOWN
    return result


def holds(cond, record) -> bool:
    return truth(cond, features_of(record)) == TRUE
