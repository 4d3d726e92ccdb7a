"""Rule selection and logit adjustment.

For a patient with perception logits ``(y_cn, y_ad)`` the active rules
contribute ``delta = sum_j delta_j`` and the adjusted logits are
``(y_cn - w * delta, y_ad + delta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

from nsad import autodiff
from nsad.dsl import nodes as n
from nsad.dsl.check import TAU_MIN
from nsad.logic import features_of, holds
from nsad.params import ParameterStore
from nsad.records import LogitPair, PatientRecord  # noqa: F401

BALANCE = "w"
BALANCE_INIT = 1.0
BALANCE_BOUNDS = (0.0, 10.0)


@dataclass(frozen=True)
class Adjustment:
    active: tuple  # ((rule_id, delta_j), ...) in declaration order
    delta_total: float
    w: float
    input_logits: LogitPair
    output_logits: LogitPair


def register_rule_params(store: ParameterStore, rs: n.RuleSet) -> None:
    """Add every rule parameter as ``<rule_id>.<name>``.

    Sigmoid smoothness parameters without declared bounds get a lower bound
    of 0.1 so the transition stays well defined.
    """
    for rule in rs.rules:
        taus = {f.tau for f in rule.effect.factors() if isinstance(f, n.Sigmoid)}
        for p in rule.params:
            bounds = p.bounds
            if bounds is None and p.name in taus:
                bounds = (TAU_MIN, float("inf"))
            store.add(rule.qualified(p.name), p.init, bounds=bounds, frozen=p.frozen)


def register_balance(store: ParameterStore, init: float = BALANCE_INIT, frozen: bool = False) -> None:
    store.add(BALANCE, init, bounds=BALANCE_BOUNDS, frozen=frozen)


def is_applicable(rule: n.Rule, record) -> bool:
    features = features_of(record)
    if not holds(rule.condition, features):
        return False
    # an effect can only be evaluated when every feature it reads is observed
    return all(features.get(f) is not None for f in n.effect_features(rule.effect))


def select_rules(rs: n.RuleSet, record) -> list:
    return [r.id for r in rs.rules if is_applicable(r, record)]


def _apply(y: LogitPair, delta: float, w: float) -> LogitPair:
    return LogitPair(y.cn - w * delta, y.ad + delta)


def adjust(rs: n.RuleSet, record, y, params: ParameterStore) -> Adjustment:
    y = LogitPair(*y)
    w = params[BALANCE]
    active = []
    total = 0.0
    for rule in rs.rules:
        if is_applicable(rule, record):
            d = autodiff.eval_effect(rule.effect, record, params, scope=rule.id)
            active.append((rule.id, d))
            total += d
    return Adjustment(tuple(active), total, w, y, _apply(y, total, w))


def adjust_with_grad(rs: n.RuleSet, record, y, params: ParameterStore):
    """Adjustment plus ``name -> (d y~_cn / d p, d y~_ad / d p)``.

    The logits themselves pass straight through: d y~ / d y is the identity.
    """
    y = LogitPair(*y)
    w = params[BALANCE]
    active = []
    total = 0.0
    ddelta: dict = {}
    for rule in rs.rules:
        if not is_applicable(rule, record):
            continue
        d, g = autodiff.eval_with_grad(rule.effect, record, params, scope=rule.id)
        active.append((rule.id, d))
        total += d
        for name, v in g.items():
            ddelta[name] = ddelta.get(name, 0.0) + v
    grad = {name: (-w * v, v) for name, v in ddelta.items()}
    if not params.is_frozen(BALANCE):
        grad[BALANCE] = (-total, 0.0)
    return Adjustment(tuple(active), total, w, y, _apply(y, total, w)), grad
