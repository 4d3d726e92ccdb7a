"""Flattening of a RuleSet into arrays for the batched effect kernel.

Rule applicability and gate indicators do not depend on any trainable
parameter, so they are computed once per dataset (:meth:`RuleProgram.design`)
and training only re-runs the numeric kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsad import kernels
from nsad.dsl import nodes as n
from nsad.logic import features_of, holds
from nsad.reasoner import is_applicable

_KIND = {n.Sigmoid: kernels.SIGMOID, n.Ramp: kernels.RAMP, n.Linear: kernels.LINEAR,
         n.Gate: kernels.GATE, n.Const: kernels.CONST}


@dataclass
class RuleProgram:
    ruleset: n.RuleSet
    rule_ids: list
    param_names: list          # qualified names, kernel slot order
    features: list             # numeric feature columns of the design matrix
    gates: list                # gate conditions, one design column each
    f_kind: np.ndarray
    f_col: np.ndarray
    f_slots: np.ndarray
    term_start: np.ndarray
    term_rule: np.ndarray

    @property
    def n_rules(self) -> int:
        return len(self.rule_ids)

    def design(self, records) -> tuple:
        """(X, active) for a list of records; missing numerics are NaN."""
        nrec = len(records)
        X = np.full((nrec, len(self.features) + len(self.gates)), np.nan)
        active = np.zeros((nrec, self.n_rules), dtype=np.bool_)
        nf = len(self.features)
        for i, rec in enumerate(records):
            feats = features_of(rec)
            for c, name in enumerate(self.features):
                v = feats.get(name)
                if v is not None:
                    X[i, c] = float(v)
            for g, cond in enumerate(self.gates):
                X[i, nf + g] = 1.0 if holds(cond, feats) else 0.0
            for r, rule in enumerate(self.ruleset.rules):
                active[i, r] = is_applicable(rule, feats)
        return X, active

    def theta(self, store) -> np.ndarray:
        return np.array([store[name] for name in self.param_names], dtype=np.float64)

    def evaluate(self, X, active, theta, backend=None):
        """(delta, per-rule contributions, d delta / d theta) per record."""
        k = kernels.get(backend)
        return k.rule_effects(
            X, active, theta, self.f_kind, self.f_col, self.f_slots,
            self.term_start, self.term_rule, self.n_rules,
        )


def compile_ruleset(rs: n.RuleSet) -> RuleProgram:
    param_names, slot_of = [], {}
    features, gates = [], []
    kinds, cols, slots, term_start, term_rule = [], [], [], [0], []

    def slot(rule, ref):
        q = rule.qualified(ref)
        if q not in slot_of:
            slot_of[q] = len(param_names)
            param_names.append(q)
        return slot_of[q]

    for p_rule in rs.rules:
        for p in p_rule.params:
            slot(p_rule, p.name)

    for r, rule in enumerate(rs.rules):
        for term in rule.effect.terms:
            for f in term.factors:
                kinds.append(_KIND[type(f)])
                row = [slot(rule, ref) for ref in f.param_refs]
                slots.append(row + [-1] * (kernels.MAX_SLOTS - len(row)))
                if isinstance(f, n.Gate):
                    gates.append(f.cond)
                    cols.append(-(len(gates)))  # patched below once feature count is known
                elif isinstance(f, n.Const):
                    cols.append(None)
                else:
                    if f.feature not in features:
                        features.append(f.feature)
                    cols.append(features.index(f.feature))
            term_start.append(len(kinds))
            term_rule.append(r)

    nf = len(features)
    fixed = []
    for c in cols:
        if c is None:
            fixed.append(-1)
        elif c < 0:
            fixed.append(nf + (-c - 1))
        else:
            fixed.append(c)

    return RuleProgram(
        ruleset=rs,
        rule_ids=[r.id for r in rs.rules],
        param_names=param_names,
        features=features,
        gates=gates,
        f_kind=np.array(kinds, dtype=np.int64),
        f_col=np.array(fixed, dtype=np.int64),
        f_slots=np.array(slots, dtype=np.int64).reshape(-1, kernels.MAX_SLOTS),
        term_start=np.array(term_start, dtype=np.int64),
        term_rule=np.array(term_rule, dtype=np.int64),
    )
