import os
import random
import subprocess
import sys

import numpy as np
import pytest

from conftest import store_for
from nsad import kernels
from nsad.dsl import parse_ruleset
from nsad.perception import MlpModel
from nsad.params import ParameterStore
from nsad.program import compile_ruleset
from rulegen import SCHEMA, random_record, random_source

pytestmark = pytest.mark.skipif(kernels.numba_kernels is None, reason="numba not installed")

NB, NP = kernels.get("numba"), kernels.get("numpy")


def close(a, b, tol=1e-12):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b)))


@pytest.mark.parametrize("seed", range(25))
def test_rule_effects_agree(seed):
    rng = random.Random(seed)
    rs = parse_ruleset(random_source(rng, max_rules=6), SCHEMA)
    prog = compile_ruleset(rs)
    X, active = prog.design([random_record(rng) for _ in range(60)])
    theta = prog.theta(store_for(rs))
    args = (X, active, theta, prog.f_kind, prog.f_col, prog.f_slots, prog.term_start, prog.term_rule, prog.n_rules)
    for got, want in zip(NB.rule_effects(*args), NP.rule_effects(*args)):
        close(got, want)


@pytest.mark.parametrize("dims", [(3, 2), (5, 32, 16, 2), (4, 7, 2)])
def test_mlp_agree(dims):
    model = MlpModel(dims)
    store = ParameterStore()
    model.register(store, seed=11)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(37, dims[0]))
    y1, a1 = model.forward_batch(X, store, backend="numba")
    y2, a2 = model.forward_batch(X, store, backend="numpy")
    close(y1, y2)
    close(a1, a2)
    g = rng.normal(size=(37, 2))
    close(model.backward_batch(a1, g, store, backend="numba"), model.backward_batch(a2, g, store, backend="numpy"))


def test_adam_agree():
    rng = np.random.default_rng(3)
    n = 50
    lo = np.where(rng.random(n) < 0.3, -0.01, -np.inf)
    hi = np.where(rng.random(n) < 0.3, 0.01, np.inf)
    mask = rng.random(n) < 0.8
    states = [[np.zeros(n), np.zeros(n), np.zeros(n)] for _ in range(2)]
    for t in range(1, 20):
        g = rng.normal(size=n)
        for k, (vals, m, v) in zip((NB, NP), states):
            k.adam_update(vals, g, m, v, mask, lo, hi, 1e-2, 0.9, 0.999, 1e-8, float(t))
    for a, b in zip(*states):
        close(a, b)
    assert np.all(states[0][0][~mask] == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_auc_agree(seed):
    rng = np.random.default_rng(seed)
    pos = rng.integers(0, 20, size=300).astype(float)
    neg = rng.integers(0, 20, size=5000).astype(float)
    assert NB.auc_pairs(pos, neg) == NP.auc_pairs(pos, neg)


def test_get_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.get("cuda")


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    env.pop("NSAD_DISABLE_NUMBA", None)
    if flag is not None:
        env["NSAD_DISABLE_NUMBA"] = flag
    out = subprocess.run(
        [sys.executable, "-c", "from nsad import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


@pytest.mark.parametrize("flag,want", [(None, "numba"), ("0", "numba"), ("1", "numpy"), ("true", "numpy")])
def test_env_flag(flag, want):
    assert _backend_in_subprocess(flag) == want
