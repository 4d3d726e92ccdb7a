"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are importable in one process; the env flag only picks the
default. Each timing is the best of ``--repeat`` runs after one warm-up call
(which also triggers numba compilation).
"""

import argparse
import time
from importlib import resources

import numpy as np

from nsad import kernels
from nsad.dsl import parse_ruleset
from nsad.params import ParameterStore
from nsad.perception import MlpModel
from nsad.program import compile_ruleset
from nsad.reasoner import register_balance, register_rule_params
from nsad.sim import default_spec, simulate_cohort
from nsad.trainer import TrainConfig, pretrain, train_joint


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    cohort = simulate_cohort(default_spec(), 0)
    rules = parse_ruleset(resources.files("nsad.resources").joinpath("default.nsr").read_text(encoding="utf-8"),
                          cohort.schema.features)
    prog = compile_ruleset(rules)
    X, active = prog.design(cohort.records)
    store = ParameterStore()
    model = MlpModel.default(len(cohort.schema.imaging))
    model.register(store, seed=0)
    register_rule_params(store, rules)
    register_balance(store)
    theta = prog.theta(store)
    img = cohort.imaging_matrix()
    flat = np.ascontiguousarray(store.values[model.param_slice(store)])
    dims, w_off, b_off, a_off = model._dims, model._w_off, model._b_off, model._a_off
    rng = np.random.default_rng(0)
    dout = rng.normal(size=(len(cohort), 2))
    n = len(store)
    grad = rng.normal(size=n)
    mask = np.ones(n, dtype=np.bool_)
    scores = rng.normal(size=len(cohort))
    labels = cohort.labels()
    pos, neg = np.ascontiguousarray(scores[labels == 1]), np.ascontiguousarray(scores[labels == 0])

    def run(k):
        acts = k.mlp_forward(flat, dims, w_off, b_off, a_off, img)[1]
        return {
            f"rule_effects ({len(cohort)} x {prog.n_rules} rules)": lambda: k.rule_effects(
                X, active, theta, prog.f_kind, prog.f_col, prog.f_slots, prog.term_start, prog.term_rule, prog.n_rules),
            f"mlp_forward ({len(cohort)} x {tuple(int(d) for d in dims)})": lambda: k.mlp_forward(flat, dims, w_off, b_off, a_off, img),
            "mlp_backward": lambda: k.mlp_backward(flat, dims, w_off, b_off, a_off, acts, dout),
            f"adam_update ({n} params)": lambda: k.adam_update(
                store.values.copy(), grad, np.zeros(n), np.zeros(n), mask, store.lo, store.hi,
                1e-5, 0.9, 0.999, 1e-8, 1.0),
            f"auc_pairs ({len(pos)} x {len(neg)})": lambda: k.auc_pairs(pos, neg),
            "rule_effects, batch of 8": lambda: k.rule_effects(
                X[:8], active[:8], theta, prog.f_kind, prog.f_col, prog.f_slots, prog.term_start, prog.term_rule,
                prog.n_rules),
            "mlp_forward, batch of 8": lambda: k.mlp_forward(flat, dims, w_off, b_off, a_off, img[:8]),
        }
    return run, cohort, rules, model


def _with_backend(backend, fn):
    def call():
        saved = kernels.active
        kernels.active = kernels.get(backend)
        try:
            return fn()
        finally:
            kernels.active = saved
    return call


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.numba_kernels is None:
        raise SystemExit("numba is not installed; nothing to compare")
    run, cohort, rules, model = cases()
    nb, np_ = run(kernels.get("numba")), run(kernels.get("numpy"))
    cfg = TrainConfig(seed=0, epochs_per_stage=1)
    epoch = lambda: train_joint(model, rules, cohort, cfg, pretrain(model, cohort, cfg))  # noqa: E731
    name = "training: 1 stage-1 + 1 stage-2 epoch"
    nb[name], np_[name] = _with_backend("numba", epoch), _with_backend("numpy", epoch)
    width = max(map(len, nb))
    print(f"{'kernel'.ljust(width)}  {'numba (us)':>12}  {'numpy (us)':>12}  {'speedup':>8}")
    for name in nb:
        a, b = best_of(nb[name], args.repeat), best_of(np_[name], args.repeat)
        print(f"{name.ljust(width)}  {1e6 * a:12.1f}  {1e6 * b:12.1f}  {b / a:7.2f}x")


if __name__ == "__main__":
    main()
