"""Feature-vector classifier standing in for the imaging backbone.

A small ReLU MLP maps an imaging feature vector to ``(cn, ad)`` logits. Its
weights live in the shared :class:`~nsad.params.ParameterStore` under
``mlp.*`` so the optimizer treats them exactly like rule parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from nsad import kernels
from nsad.params import ParameterStore
from nsad.records import AD, CN, DataError, LogitPair, PatientSample  # noqa: F401

LOG_FLOOR = 1e-12
DEFAULT_HIDDEN = (32, 16)


@dataclass(frozen=True)
class MlpModel:
    dims: tuple  # (input, hidden..., 2)
    prefix: str = "mlp"

    @classmethod
    def default(cls, input_dim: int, hidden=DEFAULT_HIDDEN) -> "MlpModel":
        return cls((input_dim, *hidden, 2))

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or dims[-1] != 2 or min(dims) < 1:
            raise ValueError(f"bad layer dims {self.dims!r}; need (input, ..., 2)")
        object.__setattr__(self, "dims", dims)
        w_off, b_off, a_off = [], [], [0]
        off = 0
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w_off.append(off)
            off += d_in * d_out
            b_off.append(off)
            off += d_out
        for d in dims[:-1]:
            a_off.append(a_off[-1] + d)
        object.__setattr__(self, "_w_off", np.array(w_off, dtype=np.int64))
        object.__setattr__(self, "_b_off", np.array(b_off, dtype=np.int64))
        object.__setattr__(self, "_a_off", np.array(a_off, dtype=np.int64))
        object.__setattr__(self, "_dims", np.array(dims, dtype=np.int64))
        object.__setattr__(self, "size", off)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def param_names(self) -> list:
        names = []
        for layer, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            base = f"{self.prefix}.L{layer}"
            names += [f"{base}.W.{o}.{c}" for o in range(d_out) for c in range(d_in)]
            names += [f"{base}.b.{o}" for o in range(d_out)]
        return names

    def init_values(self, seed: int) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        flat = np.zeros(self.size)
        for layer, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            limit = math.sqrt(6.0 / (d_in + d_out))
            start = self._w_off[layer]
            flat[start:start + d_in * d_out] = rng.uniform(-limit, limit, size=d_in * d_out)
        return flat

    def register(self, store: ParameterStore, seed: int = 0, values=None) -> None:
        flat = self.init_values(seed) if values is None else np.asarray(values, dtype=np.float64)
        store.add_many(self.param_names(), flat)

    def param_slice(self, store: ParameterStore) -> slice:
        start = store.index(f"{self.prefix}.L0.W.0.0")
        return slice(start, start + self.size)

    def check_store(self, store: ParameterStore) -> None:
        """Raise unless ``store`` holds exactly this architecture's weights, contiguously."""
        names = self.param_names()
        have = store.prefixed(self.prefix + ".")
        if have != names:
            raise ValueError(
                f"parameter store does not match MLP {self.dims}: "
                f"{len(have)} {self.prefix}.* entries, expected {len(names)}"
            )
        sl = self.param_slice(store)
        if store.names()[sl] != names:
            raise ValueError("MLP parameters are not contiguous in the store")

    # -- batched passes ------------------------------------------------------

    def forward_batch(self, X, params: ParameterStore, backend=None):
        """Logits (n, 2) and the activation cache needed by :meth:`backward_batch`."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected features of width {self.input_dim}, got shape {X.shape}")
        flat = np.ascontiguousarray(params.values[self.param_slice(params)])
        k = kernels.get(backend)
        return k.mlp_forward(flat, self._dims, self._w_off, self._b_off, self._a_off, X)

    def backward_batch(self, acts, dlogits, params: ParameterStore, backend=None) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. the flat weight vector, given d loss / d logits."""
        flat = np.ascontiguousarray(params.values[self.param_slice(params)])
        k = kernels.get(backend)
        return k.mlp_backward(
            flat, self._dims, self._w_off, self._b_off, self._a_off, acts,
            np.ascontiguousarray(dlogits, dtype=np.float64),
        )


def forward(model: MlpModel, features, params: ParameterStore, backend=None) -> LogitPair:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got shape {x.shape}")
    out, _ = model.forward_batch(x[None, :], params, backend)
    return LogitPair(float(out[0, 0]), float(out[0, 1]))


def softmax(y) -> tuple:
    cn, ad = float(y[0]), float(y[1])
    m = max(cn, ad)
    ecn, ead = math.exp(cn - m), math.exp(ad - m)
    s = ecn + ead
    return ecn / s, ead / s


def softmax_batch(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    e = np.exp(Y - Y.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(batch, class_weights=(1.0, 1.0)) -> float:
    """Mean of ``-w[label] * log(p[label])`` over ``(probs, label)`` pairs."""
    batch = list(batch)
    if not batch:
        raise ValueError("cross_entropy of an empty batch")
    total = 0.0
    for probs, label in batch:
        total -= class_weights[label] * math.log(max(probs[label], LOG_FLOOR))
    return total / len(batch)


def weighted_ce_grad(logits, labels, class_weights=(1.0, 1.0)):
    """Batch loss and d loss / d logits for softmax + weighted cross-entropy."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("cross_entropy of an empty batch")
    P = softmax_batch(logits)
    rows = np.arange(n)
    p_true = P[rows, labels]
    cw = np.asarray(class_weights, dtype=np.float64)[labels]
    loss = float(np.sum(-cw * np.log(np.maximum(p_true, LOG_FLOOR))) / n)
    onehot = np.zeros_like(P)
    onehot[rows, labels] = 1.0
    # the floor cuts the gradient where it is active
    live = (p_true >= LOG_FLOOR).astype(np.float64)
    dlogits = (cw * live / n)[:, None] * (P - onehot)
    return loss, dlogits


def load_external_logits(path) -> dict:
    """Read ``id,logit_cn,logit_ad`` rows into ``{id: LogitPair}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != ["id", "logit_cn", "logit_ad"]:
            raise DataError(f"{path}: header must be id,logit_cn,logit_ad, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            sid = row[0].strip()
            try:
                pair = LogitPair(float(row[1]), float(row[2]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: logits must be decimal numbers") from None
            if not sid or not pair.is_finite():
                raise DataError(f"{path}:{lineno}: malformed row")
            if sid in out:
                raise DataError(f"{path}:{lineno}: duplicate id {sid!r}")
            out[sid] = pair
    return out


def write_external_logits(path, logits: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "logit_cn", "logit_ad"])
        for sid, pair in logits.items():
            w.writerow([sid, repr(float(pair[0])), repr(float(pair[1]))])
