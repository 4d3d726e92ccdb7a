"""Synthetic cohorts with a known ground-truth risk function.

Generation order for each sample:

1. clinical features from per-feature mixtures, with per-feature missingness;
2. rule shift ``r = (1 + balance) * delta_truth(z)``, i.e. the AD-minus-CN
   margin shift the adjustment produces with balance factor ``balance``;
3. clean label ``y ~ Bernoulli(sigmoid(r + b))`` with intercept ``b`` solved
   so the post-noise class prior matches the configured one;
4. imaging features ``x | y ~ N((y - 1/2) * separation * u, I)`` for a fixed
   unit direction ``u``, so imaging contributes ``separation * u.x`` to the
   true log-odds;
5. the observed label is the clean label flipped with probability
   ``label_noise``.

The manifest records Bayes-style reference accuracies of the full posterior,
the imaging-only posterior and the rule-only posterior on the realized sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from nsad import reasoner
from nsad.data import Cohort, Schema
from nsad.dsl import parse_ruleset
from nsad.dsl.nodes import CATEGORICAL, NUMERIC
from nsad.params import ParameterStore
from nsad.records import PatientRecord, PatientSample


class SimSpecError(ValueError):
    pass


@dataclass
class FeatureSpec:
    name: str
    kind: str
    # numeric: [[weight, mean, sd], ...]; categorical: {level: probability}
    components: list = field(default_factory=list)
    levels: dict = field(default_factory=dict)
    missing: float = 0.0
    clip: Optional[list] = None
    integer: bool = False


@dataclass
class SimSpec:
    n_samples: int = 2000
    class_prior: float = 0.4
    features: list = field(default_factory=list)
    risk_rules: str = ""
    risk_balance: float = 1.0
    imaging_dim: int = 8
    imaging_separation: float = 1.5
    label_noise: float = 0.0

    def validate(self) -> None:
        if not isinstance(self.n_samples, int) or self.n_samples < 1:
            raise SimSpecError("n_samples must be a positive integer")
        for name, p in (("class_prior", self.class_prior), ("label_noise", self.label_noise)):
            if not 0.0 <= p <= 1.0:
                raise SimSpecError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.class_prior < 1.0:
            raise SimSpecError("class_prior must be strictly between 0 and 1")
        if self.imaging_dim < 1:
            raise SimSpecError("imaging_dim must be at least 1")
        if not self.features:
            raise SimSpecError("spec declares no clinical features")
        names = set()
        for f in self.features:
            if f.name in names:
                raise SimSpecError(f"feature {f.name!r} specified twice")
            names.add(f.name)
            if not 0.0 <= f.missing <= 1.0:
                raise SimSpecError(f"{f.name}: missing rate must lie in [0, 1]")
            if f.kind == NUMERIC:
                if not f.components:
                    raise SimSpecError(f"{f.name}: numeric feature needs mixture components")
                for comp in f.components:
                    if len(comp) != 3 or comp[0] < 0 or comp[2] < 0:
                        raise SimSpecError(f"{f.name}: components are [weight >= 0, mean, sd >= 0]")
                if sum(c[0] for c in f.components) <= 0:
                    raise SimSpecError(f"{f.name}: mixture weights sum to zero")
            elif f.kind == CATEGORICAL:
                probs = list(f.levels.values())
                if not probs or any(p < 0 or p > 1 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
                    raise SimSpecError(f"{f.name}: level probabilities must be in [0, 1] and sum to 1")
            else:
                raise SimSpecError(f"{f.name}: unknown kind {f.kind!r}")

    def schema(self) -> Schema:
        return Schema(
            {f.name: f.kind for f in self.features},
            tuple(f"img_{k}" for k in range(self.imaging_dim)),
        )

    def truth_rules(self):
        return parse_ruleset(self.risk_rules, self.schema().features)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SimSpecError(f"unknown spec keys: {sorted(unknown)}")
        try:
            d["features"] = [FeatureSpec(**f) for f in d.get("features", [])]
            spec = cls(**d)
        except TypeError as exc:
            raise SimSpecError(str(exc)) from None
        spec.validate()
        return spec


def load_spec(path) -> SimSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            return SimSpec.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise SimSpecError(f"{path}: {exc}") from None


def default_spec() -> SimSpec:
    text = resources.files("nsad.resources").joinpath("default_sim.json").read_text(encoding="utf-8")
    return SimSpec.from_dict(json.loads(text))


def _draw_feature(rng, f: FeatureSpec, n: int) -> list:
    if f.kind == NUMERIC:
        comps = np.asarray(f.components, dtype=np.float64)
        w = comps[:, 0] / comps[:, 0].sum()
        which = rng.choice(len(comps), size=n, p=w)
        vals = rng.normal(comps[which, 1], comps[which, 2])
        if f.clip is not None:
            vals = np.clip(vals, f.clip[0], f.clip[1])
        if f.integer:
            vals = np.rint(vals)
        out = [float(v) for v in vals]
    else:
        levels = list(f.levels)
        p = np.asarray([f.levels[k] for k in levels], dtype=np.float64)
        idx = rng.choice(len(levels), size=n, p=p / p.sum())
        out = [levels[i] for i in idx]
    gone = rng.random(n) < f.missing
    return [None if g else v for v, g in zip(out, gone)]


def _sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _solve_intercept(shift: np.ndarray, target: float) -> float:
    """b with mean(sigmoid(shift + b)) == target, by bisection."""
    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(shift + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def truth_store(rules) -> ParameterStore:
    store = ParameterStore()
    reasoner.register_rule_params(store, rules)
    return store


def rule_shift(spec: SimSpec, rules, records) -> np.ndarray:
    store = truth_store(rules)
    scale = 1.0 + spec.risk_balance
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        total = 0.0
        for rule in rules.rules:
            if reasoner.is_applicable(rule, rec):
                total += reasoner.autodiff.eval_effect(rule.effect, rec, store, scope=rule.id)
        out[i] = scale * total
    return out


def simulate_cohort(spec: SimSpec, seed: int) -> Cohort:
    spec.validate()
    rules = spec.truth_rules()
    n = spec.n_samples
    rng = np.random.default_rng(seed)

    columns = {f.name: _draw_feature(rng, f, n) for f in spec.features}
    ids = [f"s{i:05d}" for i in range(n)]
    feats = [{k: columns[k][i] for k in columns if columns[k][i] is not None} for i in range(n)]
    shift = rule_shift(spec, rules, feats)

    e = spec.label_noise
    target = spec.class_prior if e >= 0.5 else (spec.class_prior - e) / (1.0 - 2.0 * e)
    target = min(max(target, 1e-6), 1.0 - 1e-6)
    b = _solve_intercept(shift, target)
    clean = (rng.random(n) < _sigmoid(shift + b)).astype(np.int64)

    direction = rng.normal(size=spec.imaging_dim)
    direction /= np.linalg.norm(direction)
    sep = spec.imaging_separation
    X = rng.normal(size=(n, spec.imaging_dim)) + ((clean - 0.5) * sep)[:, None] * direction[None, :]
    flips = rng.random(n) < e
    labels = np.where(flips, 1 - clean, clean)

    imaging_logodds = sep * (X @ direction)
    pi1 = float(_sigmoid(shift + b).mean())
    full = shift + b + imaging_logodds
    img_only = imaging_logodds + math.log(pi1 / (1.0 - pi1))
    rule_only = shift + b

    def acc(score):
        return float(np.mean((score > 0).astype(np.int64) == labels))

    reference = {
        "bayes_accuracy": acc(full),
        "imaging_only_accuracy": acc(img_only),
        "rules_only_accuracy": acc(rule_only),
    }
    reference["bayes_gap"] = reference["bayes_accuracy"] - reference["imaging_only_accuracy"]

    samples = [
        PatientSample(PatientRecord(ids[i], feats[i], int(labels[i])), X[i].copy())
        for i in range(n)
    ]
    provenance = {
        "kind": "simulated",
        "seed": int(seed),
        "spec": spec.to_dict(),
        "intercept": b,
        "imaging_direction": [float(v) for v in direction],
        "empirical_prior": float(labels.mean()),
        "reference": reference,
    }
    return Cohort(samples, spec.schema(), provenance)
