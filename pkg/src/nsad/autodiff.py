"""Scalar reverse-mode differentiation of rule effect expressions.

Effects are small (a handful of primitives per rule), so a per-record tape of
Python floats is plenty; batched training goes through the compiled kernels in
:mod:`nsad.kernels` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from nsad.dsl import nodes as n
from nsad.logic import features_of, holds
from nsad.params import ParameterStore, apply_update  # noqa: F401  (re-export)


class MissingFeatureError(KeyError):
    """An effect read a feature the record does not have.

    The reasoner never selects such a rule, so this signals a programming error.
    """


def stable_sigmoid(u: float) -> float:
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@dataclass
class Node:
    op: str
    inputs: tuple
    value: float
    partials: tuple
    name: str = ""


@dataclass
class Tape:
    """Append-only list of nodes; inputs always precede their consumers."""

    nodes: list = field(default_factory=list)
    _params: dict = field(default_factory=dict)

    def _push(self, op, inputs, value, partials, name="") -> int:
        self.nodes.append(Node(op, tuple(inputs), value, tuple(partials), name))
        return len(self.nodes) - 1

    def value(self, i: int) -> float:
        return self.nodes[i].value

    def const(self, x: float) -> int:
        return self._push("const", (), float(x), ())

    def param(self, name: str, x: float) -> int:
        # one leaf per name so repeated references accumulate into one adjoint
        if name not in self._params:
            self._params[name] = self._push("param", (), float(x), (), name)
        return self._params[name]

    def add(self, a: int, b: int) -> int:
        return self._push("add", (a, b), self.value(a) + self.value(b), (1.0, 1.0))

    def sub(self, a: int, b: int) -> int:
        return self._push("sub", (a, b), self.value(a) - self.value(b), (1.0, -1.0))

    def mul(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        return self._push("mul", (a, b), va * vb, (vb, va))

    def div(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        q = va / vb
        return self._push("div", (a, b), q, (1.0 / vb, -q / vb))

    def sigmoid(self, a: int) -> int:
        s = stable_sigmoid(self.value(a))
        return self._push("sigmoid", (a,), s, (s * (1.0 - s),))

    def relu(self, a: int) -> int:
        v = self.value(a)
        # subgradient 0 at the kink
        return self._push("relu", (a,), v if v > 0.0 else 0.0, (1.0 if v > 0.0 else 0.0,))

    def backward(self, out: int) -> dict:
        """One reverse sweep; returns d(out)/d(param) for every param leaf."""
        adj = [0.0] * len(self.nodes)
        adj[out] = 1.0
        for i in range(out, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            node = self.nodes[i]
            for j, p in zip(node.inputs, node.partials):
                adj[j] += a * p
        return {name: adj[i] for name, i in self._params.items()}


def _lookup(params, scope, ref):
    name = f"{scope}.{ref}" if scope else ref
    return name, params[name]


def _feature(features, name):
    v = features.get(name)
    if v is None:
        raise MissingFeatureError(name)
    return float(v)


def record_effect(tape: Tape, effect: n.Effect, record, params, scope=None) -> int:
    """Append the graph of ``effect`` to ``tape`` and return the output node."""
    features = features_of(record)

    def p(ref):
        return tape.param(*_lookup(params, scope, ref))

    def factor(f) -> int:
        if isinstance(f, n.Const):
            return p(f.value)
        if isinstance(f, n.Gate):
            return tape.mul(p(f.gamma), tape.const(1.0 if holds(f.cond, features) else 0.0))
        x = tape.const(_feature(features, f.feature))
        if isinstance(f, n.Sigmoid):
            u = tape.div(tape.sub(x, p(f.threshold)), p(f.tau))
            return tape.mul(p(f.alpha), tape.sigmoid(u))
        if isinstance(f, n.Ramp):
            return tape.mul(p(f.beta), tape.relu(tape.sub(x, p(f.threshold))))
        return tape.add(tape.mul(p(f.slope), x), p(f.intercept))

    total = None
    for term in effect.terms:
        prod = None
        for f in term.factors:
            node = factor(f)
            prod = node if prod is None else tape.mul(prod, node)
        total = prod if total is None else tape.add(total, prod)
    return total


def eval_effect(effect: n.Effect, record, params, scope=None) -> float:
    """Value of an effect expression for one record.

    ``params`` is a :class:`ParameterStore` (or any mapping of names to
    floats); ``scope`` is the rule id used to qualify the effect's local
    parameter names.
    """
    tape = Tape()
    return tape.value(record_effect(tape, effect, record, params, scope))


def eval_with_grad(effect: n.Effect, record, params, scope=None):
    """Value plus gradient over every unfrozen parameter the effect touches."""
    tape = Tape()
    out = record_effect(tape, effect, record, params, scope)
    grad = tape.backward(out)
    if isinstance(params, ParameterStore):
        grad = {k: v for k, v in grad.items() if not params.is_frozen(k)}
    return tape.value(out), grad
