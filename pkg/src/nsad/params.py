"""Flat registry of every trainable scalar in a model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class ParameterError(KeyError):
    pass


@dataclass(frozen=True)
class ParamEntry:
    name: str
    value: float
    bounds: Optional[tuple]
    frozen: bool


class ParameterStore:
    """Insertion-ordered parameters backed by contiguous float64 arrays.

    ``values``, ``lo``, ``hi`` and ``frozen`` are aligned arrays so kernels can
    work on the whole store (or a slice of it) without per-name lookups.
    Missing bounds are stored as infinities.
    """

    def __init__(self):
        self._index: dict = {}
        self._names: list = []
        self.values = np.zeros(0)
        self.lo = np.zeros(0)
        self.hi = np.zeros(0)
        self.frozen = np.zeros(0, dtype=bool)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self._names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.index(name)])

    def names(self) -> list:
        return list(self._names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ParameterError(f"unknown parameter {name!r}") from None

    def add(self, name: str, value: float, bounds=None, frozen: bool = False) -> int:
        return self.add_many([name], [value], bounds=bounds, frozen=frozen)

    def add_many(self, names: Iterable[str], values, bounds=None, frozen: bool = False) -> int:
        """Register several parameters sharing bounds/frozen; returns the first index."""
        names = list(names)
        start = len(self._names)
        for name in names:
            if name in self._index:
                raise ParameterError(f"parameter {name!r} already registered")
            if " " in name:
                raise ParameterError(f"parameter name {name!r} contains whitespace")
            self._index[name] = len(self._names)
            self._names.append(name)
        k = len(names)
        lo, hi = (-np.inf, np.inf) if bounds is None else (float(bounds[0]), float(bounds[1]))
        vals = np.clip(np.asarray(values, dtype=np.float64).reshape(k), lo, hi)
        self.values = np.concatenate([self.values, vals])
        self.lo = np.concatenate([self.lo, np.full(k, lo)])
        self.hi = np.concatenate([self.hi, np.full(k, hi)])
        self.frozen = np.concatenate([self.frozen, np.full(k, bool(frozen))])
        return start

    def entry(self, name: str) -> ParamEntry:
        i = self.index(name)
        lo, hi = float(self.lo[i]), float(self.hi[i])
        bounds = None if (lo == -np.inf and hi == np.inf) else (lo, hi)
        return ParamEntry(name, float(self.values[i]), bounds, bool(self.frozen[i]))

    def entries(self) -> list:
        return [self.entry(name) for name in self._names]

    def is_frozen(self, name: str) -> bool:
        return bool(self.frozen[self.index(name)])

    def set(self, name: str, value: float) -> None:
        i = self.index(name)
        self.values[i] = min(max(float(value), self.lo[i]), self.hi[i])

    def set_frozen(self, name: str, frozen: bool = True) -> None:
        self.frozen[self.index(name)] = frozen

    def unfrozen_names(self) -> list:
        return [nm for nm, f in zip(self._names, self.frozen) if not f]

    def prefixed(self, prefix: str) -> list:
        return [nm for nm in self._names if nm.startswith(prefix)]

    def apply_update(self, deltas: dict) -> None:
        """Add each delta to its parameter, then clamp to bounds."""
        idx = []
        for name in deltas:
            i = self.index(name)
            if self.frozen[i]:
                raise ParameterError(f"parameter {name!r} is frozen")
            idx.append(i)
        for i, d in zip(idx, deltas.values()):
            self.values[i] = min(max(self.values[i] + float(d), self.lo[i]), self.hi[i])

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        out._index = dict(self._index)
        out._names = list(self._names)
        out.values = self.values.copy()
        out.lo = self.lo.copy()
        out.hi = self.hi.copy()
        out.frozen = self.frozen.copy()
        return out

    def as_dict(self) -> dict:
        return {nm: float(v) for nm, v in zip(self._names, self.values)}


def apply_update(params: ParameterStore, deltas: dict) -> None:
    params.apply_update(deltas)
