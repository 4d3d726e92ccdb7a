"""Numeric inner loops of training and evaluation.

Each kernel exists twice: an explicit-loop form compiled with numba's
``@njit`` and a vectorized numpy form. The numba form is used when numba
imports and ``NSAD_DISABLE_NUMBA`` is unset (or ``0``); otherwise the numpy
form is. Both are deterministic; they agree to rounding, not bitwise.

Factor kinds in compiled rule programs:
    0 sigmoid(x; alpha, T, tau)   1 ramp(x; beta, T)   2 linear(x; a, b)
    3 gate(indicator; gamma)      4 const(c)
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

SIGMOID, RAMP, LINEAR, GATE, CONST = 0, 1, 2, 3, 4
MAX_SLOTS = 3


def _flag_disabled() -> bool:
    return os.environ.get("NSAD_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------------------
# loop forms (compiled by numba)
# ---------------------------------------------------------------------------


def _factor_loop(kind, x, th, slots, out_partials):
    """Value of one factor; writes d value / d slot into out_partials[0:3]."""
    out_partials[0] = 0.0
    out_partials[1] = 0.0
    out_partials[2] = 0.0
    if kind == SIGMOID:
        a = th[slots[0]]
        t = th[slots[1]]
        tau = th[slots[2]]
        diff = x - t
        u = diff / tau
        if u >= 0.0:
            s = 1.0 / (1.0 + np.exp(-u))
        else:
            e = np.exp(u)
            s = e / (1.0 + e)
        ds = a * s * (1.0 - s)
        out_partials[0] = s
        out_partials[1] = -ds / tau
        out_partials[2] = -ds * u / tau
        return a * s
    if kind == RAMP:
        b = th[slots[0]]
        diff = x - th[slots[1]]
        if diff > 0.0:
            out_partials[0] = diff
            out_partials[1] = -b
            return b * diff
        return 0.0
    if kind == LINEAR:
        out_partials[0] = x
        out_partials[1] = 1.0
        return th[slots[0]] * x + th[slots[1]]
    if kind == GATE:
        out_partials[0] = x
        return th[slots[0]] * x
    out_partials[0] = 1.0
    return th[slots[0]]


def _rule_effects_loop(X, active, theta, f_kind, f_col, f_slots, term_start, term_rule, n_rules):
    n = X.shape[0]
    n_terms = term_rule.shape[0]
    n_params = theta.shape[0]
    delta = np.zeros(n)
    contrib = np.zeros((n, n_rules))
    grad = np.zeros((n, n_params))
    max_f = 1
    for t in range(n_terms):
        max_f = max(max_f, term_start[t + 1] - term_start[t])
    vals = np.empty(max_f)
    parts = np.empty((max_f, MAX_SLOTS))
    prefix = np.empty(max_f + 1)
    suffix = np.empty(max_f + 1)
    for i in range(n):
        for t in range(n_terms):
            r = term_rule[t]
            if not active[i, r]:
                continue
            k0 = term_start[t]
            m = term_start[t + 1] - k0
            for j in range(m):
                k = k0 + j
                col = f_col[k]
                x = X[i, col] if col >= 0 else 0.0
                vals[j] = _factor_numba(f_kind[k], x, theta, f_slots[k], parts[j])
            prefix[0] = 1.0
            for j in range(m):
                prefix[j + 1] = prefix[j] * vals[j]
            suffix[m] = 1.0
            for j in range(m - 1, -1, -1):
                suffix[j] = suffix[j + 1] * vals[j]
            contrib[i, r] += prefix[m]
            for j in range(m):
                others = prefix[j] * suffix[j + 1]
                k = k0 + j
                for q in range(MAX_SLOTS):
                    p = f_slots[k, q]
                    if p >= 0:
                        grad[i, p] += others * parts[j, q]
        acc = 0.0
        for r in range(n_rules):
            acc += contrib[i, r]
        delta[i] = acc
    return delta, contrib, grad


def _mlp_forward_loop(flat, dims, w_off, b_off, a_off, X):
    n = X.shape[0]
    n_layers = dims.shape[0] - 1
    acts = np.zeros((n, a_off[n_layers] + dims[n_layers]))
    for i in range(n):
        for j in range(dims[0]):
            acts[i, j] = X[i, j]
        for layer in range(n_layers):
            d_in = dims[layer]
            d_out = dims[layer + 1]
            src = a_off[layer]
            dst = a_off[layer + 1]
            wo = w_off[layer]
            bo = b_off[layer]
            last = layer == n_layers - 1
            for o in range(d_out):
                s = flat[bo + o]
                for c in range(d_in):
                    s += flat[wo + o * d_in + c] * acts[i, src + c]
                if not last and s < 0.0:
                    s = 0.0
                acts[i, dst + o] = s
    out = acts[:, a_off[n_layers]:a_off[n_layers] + dims[n_layers]].copy()
    return out, acts


def _mlp_backward_loop(flat, dims, w_off, b_off, a_off, acts, dout):
    n = acts.shape[0]
    n_layers = dims.shape[0] - 1
    grad = np.zeros(flat.shape[0])
    width = 0
    for layer in range(n_layers + 1):
        width = max(width, dims[layer])
    cur = np.zeros(width)
    prev = np.zeros(width)
    for i in range(n):
        for o in range(dims[n_layers]):
            cur[o] = dout[i, o]
        for layer in range(n_layers - 1, -1, -1):
            d_in = dims[layer]
            d_out = dims[layer + 1]
            src = a_off[layer]
            wo = w_off[layer]
            bo = b_off[layer]
            for c in range(d_in):
                prev[c] = 0.0
            for o in range(d_out):
                g = cur[o]
                if g == 0.0:
                    continue
                grad[bo + o] += g
                for c in range(d_in):
                    grad[wo + o * d_in + c] += g * acts[i, src + c]
                    prev[c] += g * flat[wo + o * d_in + c]
            if layer > 0:
                for c in range(d_in):
                    cur[c] = prev[c] if acts[i, src + c] > 0.0 else 0.0
    return grad


def _adam_update_loop(values, grad, m, v, mask, lo, hi, lr, beta1, beta2, eps, t):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k in range(values.shape[0]):
        if not mask[k]:
            continue
        g = grad[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        p = values[k] - lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
        if p < lo[k]:
            p = lo[k]
        elif p > hi[k]:
            p = hi[k]
        values[k] = p


def _auc_pairs_loop(pos, neg):
    wins = 0.0
    for a in range(pos.shape[0]):
        for b in range(neg.shape[0]):
            if pos[a] > neg[b]:
                wins += 1.0
            elif pos[a] == neg[b]:
                wins += 0.5
    return wins / (pos.shape[0] * neg.shape[0])


# ---------------------------------------------------------------------------
# numpy forms
# ---------------------------------------------------------------------------


def _stable_sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _factor_numpy(kind, x, theta, slots):
    """Vector of factor values plus a list of (slot, partial-vector) pairs."""
    if kind == SIGMOID:
        a, t, tau = theta[slots[0]], theta[slots[1]], theta[slots[2]]
        u = (x - t) / tau
        s = _stable_sigmoid(u)
        ds = a * s * (1.0 - s)
        return a * s, [(slots[0], s), (slots[1], -ds / tau), (slots[2], -ds * u / tau)]
    if kind == RAMP:
        b = theta[slots[0]]
        diff = x - theta[slots[1]]
        on = diff > 0.0
        hinge = np.where(on, diff, 0.0)
        return b * hinge, [(slots[0], hinge), (slots[1], np.where(on, -b, 0.0))]
    if kind == LINEAR:
        return theta[slots[0]] * x + theta[slots[1]], [(slots[0], x), (slots[1], np.ones_like(x))]
    if kind == GATE:
        return theta[slots[0]] * x, [(slots[0], x)]
    c = theta[slots[0]]
    return np.full_like(x, c), [(slots[0], np.ones_like(x))]


def rule_effects_numpy(X, active, theta, f_kind, f_col, f_slots, term_start, term_rule, n_rules):
    n = X.shape[0]
    contrib = np.zeros((n, n_rules))
    grad = np.zeros((n, theta.shape[0]))
    zeros = np.zeros(n)
    with np.errstate(invalid="ignore"):
        for t in range(term_rule.shape[0]):
            r = term_rule[t]
            on = active[:, r].astype(bool)
            if not on.any():
                continue
            ks = range(term_start[t], term_start[t + 1])
            vals, parts = [], []
            for k in ks:
                x = X[:, f_col[k]] if f_col[k] >= 0 else zeros
                val, p = _factor_numpy(f_kind[k], x, theta, f_slots[k])
                vals.append(np.where(on, val, 0.0))
                parts.append(p)
            m = len(vals)
            prefix = [np.ones(n)]
            for j in range(m):
                prefix.append(prefix[j] * vals[j])
            suffix = [None] * (m + 1)
            suffix[m] = np.ones(n)
            for j in range(m - 1, -1, -1):
                suffix[j] = suffix[j + 1] * vals[j]
            contrib[:, r] += np.where(on, prefix[m], 0.0)
            for j in range(m):
                others = prefix[j] * suffix[j + 1]
                for slot, partial in parts[j]:
                    grad[:, slot] += np.where(on, others * partial, 0.0)
    delta = np.zeros(n)
    for r in range(n_rules):
        delta += contrib[:, r]
    return delta, contrib, grad


def mlp_forward_numpy(flat, dims, w_off, b_off, a_off, X):
    n_layers = len(dims) - 1
    a = np.asarray(X, dtype=np.float64)
    acts = [a]
    for layer in range(n_layers):
        d_in, d_out = dims[layer], dims[layer + 1]
        W = flat[w_off[layer]:w_off[layer] + d_out * d_in].reshape(d_out, d_in)
        b = flat[b_off[layer]:b_off[layer] + d_out]
        a = a @ W.T + b
        if layer < n_layers - 1:
            a = np.maximum(a, 0.0)
        acts.append(a)
    return a.copy(), np.hstack(acts)


def mlp_backward_numpy(flat, dims, w_off, b_off, a_off, acts, dout):
    n_layers = len(dims) - 1
    grad = np.zeros_like(flat)
    cur = np.asarray(dout, dtype=np.float64)
    for layer in range(n_layers - 1, -1, -1):
        d_in, d_out = dims[layer], dims[layer + 1]
        a_in = acts[:, a_off[layer]:a_off[layer] + d_in]
        W = flat[w_off[layer]:w_off[layer] + d_out * d_in].reshape(d_out, d_in)
        grad[w_off[layer]:w_off[layer] + d_out * d_in] = (cur.T @ a_in).ravel()
        grad[b_off[layer]:b_off[layer] + d_out] = cur.sum(axis=0)
        if layer > 0:
            cur = (cur @ W) * (a_in > 0.0)
    return grad


def adam_update_numpy(values, grad, m, v, mask, lo, hi, lr, beta1, beta2, eps, t):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    g = grad[mask]
    mk = beta1 * m[mask] + (1.0 - beta1) * g
    vk = beta2 * v[mask] + (1.0 - beta2) * g * g
    m[mask] = mk
    v[mask] = vk
    p = values[mask] - lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)
    values[mask] = np.minimum(np.maximum(p, lo[mask]), hi[mask])


def auc_pairs_numpy(pos, neg, chunk: int = 2048):
    wins = 0.0
    for s in range(0, pos.shape[0], chunk):
        block = pos[s:s + chunk, None]
        wins += np.count_nonzero(block > neg[None, :]) + 0.5 * np.count_nonzero(block == neg[None, :])
    return wins / (pos.shape[0] * neg.shape[0])


numpy_kernels = SimpleNamespace(
    name="numpy",
    rule_effects=rule_effects_numpy,
    mlp_forward=mlp_forward_numpy,
    mlp_backward=mlp_backward_numpy,
    adam_update=adam_update_numpy,
    auc_pairs=auc_pairs_numpy,
)

if numba is not None:
    _factor_numba = numba.njit(cache=True)(_factor_loop)
    numba_kernels = SimpleNamespace(
        name="numba",
        rule_effects=numba.njit(cache=True)(_rule_effects_loop),
        mlp_forward=numba.njit(cache=True)(_mlp_forward_loop),
        mlp_backward=numba.njit(cache=True)(_mlp_backward_loop),
        adam_update=numba.njit(cache=True)(_adam_update_loop),
        auc_pairs=numba.njit(cache=True)(_auc_pairs_loop),
    )
else:  # pragma: no cover
    numba_kernels = None

active = numpy_kernels if (numba_kernels is None or _flag_disabled()) else numba_kernels
BACKEND = active.name


def get(backend: str | None = None) -> SimpleNamespace:
    """Kernel namespace by name; ``None`` means the one selected at import."""
    if backend is None:
        return active
    if backend == "numba":
        if numba_kernels is None:
            raise RuntimeError("numba is not installed")
        return numba_kernels
    if backend == "numpy":
        return numpy_kernels
    raise ValueError(f"unknown kernel backend {backend!r}")
