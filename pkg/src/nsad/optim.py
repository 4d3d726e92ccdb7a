"""Adam with bias correction, projected onto parameter bounds, plus a step LR schedule."""

from __future__ import annotations

import numpy as np

from nsad import kernels
from nsad.params import ParameterError, ParameterStore


class AdamState:
    """Moments for every unfrozen entry of a store, kept in store order."""

    def __init__(self, params: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, gamma: float = 0.5, step_size: int = 10):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.gamma = gamma
        self.step_size = step_size
        self.t = 0
        self._size = len(params)
        self._trainable = ~params.frozen.copy()
        self._m = np.zeros(self._size)
        self._v = np.zeros(self._size)
        self._names = params.names()

    @property
    def m(self) -> dict:
        return {nm: float(x) for nm, x, on in zip(self._names, self._m, self._trainable) if on}

    @property
    def v(self) -> dict:
        return {nm: float(x) for nm, x, on in zip(self._names, self._v, self._trainable) if on}

    def _check(self, params: ParameterStore):
        if len(params) != self._size:
            raise ParameterError("parameter store changed size since the optimizer was created")

    def step_dense(self, grad: np.ndarray, params: ParameterStore, lr=None, backend=None) -> None:
        """Update every trainable entry from a full-length gradient vector."""
        self._check(params)
        self.t += 1
        k = kernels.get(backend)
        k.adam_update(
            params.values, np.ascontiguousarray(grad, dtype=np.float64), self._m, self._v,
            self._trainable, params.lo, params.hi,
            self.lr if lr is None else lr, self.beta1, self.beta2, self.eps, float(self.t),
        )


def adam_step(state: AdamState, grads: dict, params: ParameterStore, lr=None, backend=None) -> None:
    """One Adam update for the named gradients; other entries are left alone."""
    state._check(params)
    g = np.zeros(len(params))
    mask = np.zeros(len(params), dtype=np.bool_)
    for name, value in grads.items():
        i = params.index(name)
        if not state._trainable[i] or params.frozen[i]:
            raise ParameterError(f"gradient given for frozen parameter {name!r}")
        g[i] = value
        mask[i] = True
    state.t += 1
    k = kernels.get(backend)
    k.adam_update(
        params.values, g, state._m, state._v, mask, params.lo, params.hi,
        state.lr if lr is None else lr, state.beta1, state.beta2, state.eps, float(state.t),
    )


def scheduled_lr(state: AdamState, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return state.lr * state.gamma ** (epoch // state.step_size)
