"""Classification metrics, seed aggregation and the paired t-test.

AD is the positive class throughout. Metrics are fractions in [0, 1]
internally and percentages in the JSON/table output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from nsad import kernels

METRICS = ("accuracy", "precision", "recall", "f1", "auc")
ALPHA = 0.05


@dataclass(frozen=True)
class ConfusionMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: tuple = ()

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _binary(xs, what):
    arr = np.asarray(xs)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must be 0/1")
    return arr.astype(np.int64)


def confusion_metrics(preds, labels) -> ConfusionMetrics:
    p = _binary(preds, "predictions")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    if p.size == 0:
        raise ValueError("no predictions")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision-undefined")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall-undefined")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1-undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ConfusionMetrics((tp + tn) / p.size, precision, recall, f1, tp, fp, fn, tn, tuple(flags))


def auc(scores, labels) -> float:
    """P(score of a random AD case > score of a random CN case), ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels, "labels")
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both classes present")
    return float(kernels.get().auc_pairs(np.ascontiguousarray(pos), np.ascontiguousarray(neg)))


def classification_report(logits, labels) -> dict:
    """All five metrics from (n, 2) logits, deciding AD when its logit is larger."""
    logits = np.asarray(logits, dtype=np.float64)
    preds = (logits[:, 1] > logits[:, 0]).astype(np.int64)
    out = confusion_metrics(preds, labels).as_dict()
    # the AD softmax probability is monotone in the logit margin
    out["auc"] = auc(logits[:, 1] - logits[:, 0], labels)
    return out


# ---------------------------------------------------------------------------
# seed aggregation
# ---------------------------------------------------------------------------


@dataclass
class EvalSummary:
    per_seed: list
    mean: dict
    std: dict
    tests: dict = field(default_factory=dict)  # metric -> TTestResult

    @property
    def n_seeds(self) -> int:
        return len(self.per_seed)


def seed_aggregate(runs) -> EvalSummary:
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("seed aggregation needs at least 2 runs")
    keys = [k for k in METRICS if k in runs[0]] or list(runs[0])
    mean, std = {}, {}
    for k in keys:
        vals = np.array([r[k] for r in runs], dtype=np.float64)
        # shifting by the first run keeps identical runs at exactly zero spread
        d = vals - vals[0]
        mean[k] = float(vals[0] + d.mean())
        std[k] = float(np.sqrt(np.sum((d - d.mean()) ** 2) / (len(vals) - 1)))
    return EvalSummary(runs, mean, std)


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    significant: bool
    mean_diff: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "t": _json_num(self.t), "df": self.df, "p": self.p,
            "significant": self.significant, "mean_diff": self.mean_diff, "degenerate": self.degenerate,
        }


def paired_t_test(a, b, alpha: float = ALPHA) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples differ in length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(np.sum(d) / n)
    sd = float(np.sqrt(np.sum((d - mean) ** 2) / (n - 1)))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, 1.0, False, mean, degenerate=True)
        t = math.copysign(math.inf, mean)
        return TTestResult(t, df, 0.0, True, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided_p(t, df)
    return TTestResult(t, df, p, p < alpha, mean)


def compare(base: EvalSummary, ours: EvalSummary) -> dict:
    """Per-metric paired test of ours against base, paired by seed position."""
    if base.n_seeds != ours.n_seeds:
        raise ValueError("base and ours have different seed counts")
    return {
        k: paired_t_test([r[k] for r in ours.per_seed], [r[k] for r in base.per_seed])
        for k in ours.mean if k in base.mean
    }


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _json_num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _pct(x: float) -> float:
    return round(100.0 * x, 10)


def summary_json(methods: dict, seeds: list) -> str:
    """Stable JSON for ``{method name: EvalSummary}``."""
    doc = {"units": "percent", "seeds": list(seeds), "methods": {}}
    for name, s in methods.items():
        doc["methods"][name] = {
            "mean": {k: _pct(v) for k, v in s.mean.items()},
            "std": {k: _pct(v) for k, v in s.std.items()},
            "per_seed": [{k: _pct(v) for k, v in r.items()} for r in s.per_seed],
            "paired_t_test": {k: t.as_dict() for k, t in s.tests.items()},
        }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def starred(test) -> bool:
    return test is not None and test.significant and test.mean_diff > 0


def format_table(methods: dict) -> str:
    """Aligned methods x metrics table of mean +- std in percent.

    A ``*`` marks a metric whose paired test against the base run is
    significant at 0.05 with a positive mean difference.
    """
    keys = [k for k in METRICS if any(k in s.mean for s in methods.values())]
    header = ["Method"] + [k.upper() if k == "auc" else k.capitalize() for k in keys]
    rows = []
    for name, s in methods.items():
        row = [name]
        for k in keys:
            star = "*" if starred(s.tests.get(k)) else ""
            row.append(f"{100 * s.mean[k]:.2f}{star} ± {100 * s.std[k]:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * wd for wd in widths))
    lines += ["  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"
