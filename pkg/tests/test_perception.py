import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mlp_oracle
from nsad.data import DataError
from nsad.params import ParameterStore
from nsad.perception import (
    MlpModel, cross_entropy, forward, load_external_logits, softmax, softmax_batch,
    weighted_ce_grad, write_external_logits,
)
from nsad.records import LogitPair

H = 1e-5
SEED_1337_X = [0.5, -1.25, 2.0, 0.75]
# plain-list matrix oracle over the seed-1337 weights, frozen at authoring time
SEED_1337_LOGITS = (-0.35699097452794193, 0.2631824296731587)


def model_store(dims, seed=0):
    m = MlpModel(dims)
    s = ParameterStore()
    m.register(s, seed=seed)
    return m, s


def layers_of(m, s):
    out = []
    for l, (di, do) in enumerate(zip(m.dims[:-1], m.dims[1:])):
        W = [[s[f"mlp.L{l}.W.{o}.{c}"] for c in range(di)] for o in range(do)]
        b = [s[f"mlp.L{l}.b.{o}"] for o in range(do)]
        out.append((W, b))
    return out


class TestForward:
    def test_zero_weights(self):
        m, s = model_store((3, 4, 2))
        s.values[:] = 0.0
        assert forward(m, [1.0, 2.0, 3.0], s) == LogitPair(0.0, 0.0)

    def test_identity_layer(self):
        m, s = model_store((2, 2))
        s.values[:] = 0.0
        s.set("mlp.L0.W.0.0", 1.0)
        s.set("mlp.L0.W.1.1", 1.0)
        assert forward(m, [0.25, -3.5], s) == LogitPair(0.25, -3.5)

    def test_seed_1337_against_matrix_oracle(self):
        m, s = model_store((4, 32, 16, 2), seed=1337)
        y = forward(m, SEED_1337_X, s)
        assert list(y) == pytest.approx(mlp_oracle(layers_of(m, s), SEED_1337_X), abs=1e-14)
        assert list(y) == pytest.approx(SEED_1337_LOGITS, abs=1e-14)

    def test_biases_and_relu_against_oracle(self):
        m, s = model_store((3, 5, 4, 2), seed=4)
        s.values[:] = np.random.default_rng(9).normal(size=len(s))
        x = [0.3, -0.7, 1.1]
        assert list(forward(m, x, s)) == pytest.approx(mlp_oracle(layers_of(m, s), x), abs=1e-14)

    def test_dimension_mismatch(self):
        m, s = model_store((3, 2))
        with pytest.raises(ValueError):
            forward(m, [1.0, 2.0], s)

    def test_deterministic_init(self):
        a = MlpModel((6, 32, 16, 2)).init_values(5)
        b = MlpModel((6, 32, 16, 2)).init_values(5)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, MlpModel((6, 32, 16, 2)).init_values(6))

    def test_glorot_range_and_zero_bias(self):
        m, s = model_store((10, 32, 16, 2), seed=3)
        for l, (di, do) in enumerate(zip(m.dims[:-1], m.dims[1:])):
            limit = math.sqrt(6 / (di + do))
            w = np.array([s[n] for n in s.prefixed(f"mlp.L{l}.W.")])
            assert np.all(np.abs(w) <= limit)
            assert all(s[n] == 0.0 for n in s.prefixed(f"mlp.L{l}.b."))

    def test_default_architecture(self):
        assert MlpModel.default(7).dims == (7, 32, 16, 2)

    def test_param_layout_contiguous(self):
        m, s = model_store((3, 4, 2))
        names = m.param_names()
        assert s.names() == names
        assert names[:12] == [f"mlp.L0.W.{o}.{c}" for o in range(4) for c in range(3)]
        assert names[12:16] == [f"mlp.L0.b.{o}" for o in range(4)]


class TestSoftmax:
    def test_symmetric(self):
        assert softmax((0.0, 0.0)) == (0.5, 0.5)

    @given(st.floats(-700, 700))
    def test_shift_invariance(self, c):
        assert softmax((c, c)) == (0.5, 0.5)

    def test_case_probability(self):
        assert softmax((1.03, -0.88))[1] == pytest.approx(1 / (1 + math.exp(1.91)), abs=1e-15)
        assert softmax((1.03, -0.88))[1] == pytest.approx(0.12898085214623567, abs=1e-15)

    @given(st.floats(-700, 700), st.floats(-700, 700))
    def test_sums_to_one(self, a, b):
        p = softmax((a, b))
        assert abs(p[0] + p[1] - 1.0) <= 1e-12
        assert all(0.0 <= x <= 1.0 for x in p)
        pb = softmax_batch([[a, b]])[0]
        assert abs(pb.sum() - 1.0) <= 1e-12


class TestCrossEntropy:
    def test_certain(self):
        assert cross_entropy([((0.0, 1.0), 1)]) == 0.0

    def test_half(self):
        assert cross_entropy([((0.5, 0.5), 0)]) == pytest.approx(math.log(2))

    def test_two_sample_batch(self):
        loss = cross_entropy([((0.1, 0.9), 1), ((0.8, 0.2), 0)])
        assert loss == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-15)
        assert loss == pytest.approx(0.1642, abs=1e-4)

    def test_weights(self):
        assert cross_entropy([((0.5, 0.5), 1)], (1.0, 3.0)) == pytest.approx(3 * math.log(2))

    def test_floor(self):
        assert cross_entropy([((1.0, 0.0), 1)]) == pytest.approx(-math.log(1e-12))

    def test_empty(self):
        with pytest.raises(ValueError):
            cross_entropy([])

    def test_batch_form_agrees(self):
        logits = np.array([[0.3, -0.2], [1.5, 2.5], [-4.0, 0.0]])
        labels = [0, 1, 1]
        cw = (0.7, 1.3)
        loss, _ = weighted_ce_grad(logits, labels, cw)
        probs = softmax_batch(logits)
        assert loss == pytest.approx(cross_entropy(list(zip(probs, labels)), cw), rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.integers(1, 32), min_size=0, max_size=2),
    st.integers(1, 6),
    st.integers(0, 2**31),
)
def test_backprop_matches_finite_differences(hidden, d_in, seed):
    """Networks of at most three layers and 32 units."""
    rng = np.random.default_rng(seed)
    m, s = model_store((d_in, *hidden, 2), seed=seed)
    s.values[:] = rng.normal(scale=0.7, size=len(s))
    X = rng.normal(size=(5, d_in))
    labels = rng.integers(0, 2, size=5)
    cw = (0.8, 1.2)

    def loss():
        return weighted_ce_grad(m.forward_batch(X, s)[0], labels, cw)[0]

    if np.any(np.abs(_relu_inputs(m, s, X)) < 1e-4):
        return  # a ReLU kink sits inside the difference stencil
    logits, acts = m.forward_batch(X, s)
    _, dlogits = weighted_ce_grad(logits, labels, cw)
    grad = m.backward_batch(acts, dlogits, s)
    for i in range(len(s)):
        base = s.values[i]
        s.values[i] = base + H
        up = loss()
        s.values[i] = base - H
        down = loss()
        s.values[i] = base
        fd = (up - down) / (2 * H)
        assert abs(grad[i] - fd) <= 1e-4 * max(abs(grad[i]), abs(fd), 1e-3), s.names()[i]


def _relu_inputs(m, s, X):
    pre = []
    h = X
    flat = s.values
    off = 0
    for l, (di, do) in enumerate(zip(m.dims[:-1], m.dims[1:])):
        W = flat[off:off + di * do].reshape(do, di)
        off += di * do
        b = flat[off:off + do]
        off += do
        z = h @ W.T + b
        if l < len(m.dims) - 2:
            pre.append(z.ravel())
            h = np.maximum(z, 0.0)
    return np.concatenate(pre) if pre else np.zeros(0)


class TestExternalLogits:
    def test_header_only(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("id,logit_cn,logit_ad\n")
        assert load_external_logits(p) == {}

    def test_case_row(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("id,logit_cn,logit_ad\ns001,1.03,-0.88\n")
        assert load_external_logits(p) == {"s001": LogitPair(1.03, -0.88)}

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("id,logit_cn,logit_ad\ns001,1,2\ns001,3,4\n")
        with pytest.raises(DataError, match="s001"):
            load_external_logits(p)

    @pytest.mark.parametrize("body", ["s1,1\n", "s1,a,2\n", "s1,1,inf\n", ",1,2\n"])
    def test_malformed(self, tmp_path, body):
        p = tmp_path / "l.csv"
        p.write_text("id,logit_cn,logit_ad\n" + body)
        with pytest.raises(DataError):
            load_external_logits(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("id,cn,ad\n")
        with pytest.raises(DataError):
            load_external_logits(p)

    def test_write_round_trip(self, tmp_path):
        p = tmp_path / "l.csv"
        data = {"a": LogitPair(0.1, -2.5e-9), "b": LogitPair(3.0, 4.0)}
        write_external_logits(p, data)
        assert load_external_logits(p) == data
