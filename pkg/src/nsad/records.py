from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

CN, AD = 0, 1
CLASS_NAMES = ("CN", "AD")


class LogitPair(NamedTuple):
    cn: float
    ad: float

    def is_finite(self) -> bool:
        return math.isfinite(self.cn) and math.isfinite(self.ad)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class PatientRecord:
    """Clinical/demographic features for one patient.

    ``features`` holds floats for numeric features and strings for
    categorical ones; a feature that is absent (or None) is missing.
    """

    id: str
    features: dict = field(default_factory=dict)
    label: Optional[int] = None

    def __post_init__(self):
        clean = {k: v for k, v in self.features.items() if v is not None}
        for k, v in clean.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise DataError(f"record {self.id!r}: feature {k!r} is not finite")
        object.__setattr__(self, "features", clean)

    def without(self, *names: str) -> "PatientRecord":
        return PatientRecord(self.id, {k: v for k, v in self.features.items() if k not in names}, self.label)


@dataclass(frozen=True)
class PatientSample:
    record: PatientRecord
    imaging_features: np.ndarray
    external_logits: Optional[LogitPair] = None

    @property
    def id(self) -> str:
        return self.record.id

    @property
    def label(self):
        return self.record.label
