"""Cohort ingestion: schema files, records CSV, label consolidation, splits."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from nsad.dsl.nodes import CATEGORICAL, FEATURE_KINDS, NUMERIC
from nsad.perception import load_external_logits
from nsad.records import AD, CN, DataError, PatientRecord, PatientSample

RAW_CATEGORIES = {"CN": CN, "SMC": CN, "EMCI": CN, "LMCI": AD, "AD": AD}
RESERVED = ("id", "diagnosis")
TRAIN_PERCENT = 80


def consolidate_label(raw: str) -> int:
    """Fold the five diagnostic categories into CN (0) / AD (1)."""
    try:
        return RAW_CATEGORIES[raw.strip()]
    except KeyError:
        raise DataError(f"unknown diagnostic category {raw!r}") from None


@dataclass(frozen=True)
class Schema:
    features: dict = field(default_factory=dict)  # name -> numeric | categorical
    imaging: tuple = ()                           # imaging feature columns, in order

    @property
    def numeric(self) -> list:
        return [k for k, v in self.features.items() if v == NUMERIC]

    @property
    def categorical(self) -> list:
        return [k for k, v in self.features.items() if v == CATEGORICAL]

    def columns(self) -> list:
        return list(self.features) + list(self.imaging)


def parse_schema(text: str, source: str = "<schema>") -> Schema:
    features, imaging = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "feature" and len(parts) == 3 and parts[2] in FEATURE_KINDS:
            name = parts[1]
        elif parts[0] == "imaging" and len(parts) == 2:
            name = parts[1]
        else:
            raise DataError(f"{source}:{lineno}: expected 'feature <name> numeric|categorical' or 'imaging <name>'")
        if name in features or name in imaging or name in RESERVED:
            raise DataError(f"{source}:{lineno}: column {name!r} declared twice or reserved")
        if parts[0] == "feature":
            features[name] = parts[2]
        else:
            imaging.append(name)
    return Schema(features, tuple(imaging))


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read(), str(path))


def format_schema(schema: Schema) -> str:
    lines = [f"feature {k} {v}" for k, v in schema.features.items()]
    lines += [f"imaging {k}" for k in schema.imaging]
    return "\n".join(lines) + "\n"


def is_train(sample_id: str) -> bool:
    """Deterministic 80/20 split keyed on a hash of the sample id."""
    h = int.from_bytes(hashlib.sha256(sample_id.encode("utf-8")).digest()[:8], "big")
    return h % 100 < TRAIN_PERCENT


@dataclass
class Cohort:
    samples: list
    schema: Schema
    provenance: dict = field(default_factory=lambda: {"kind": "ingested"})

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    @property
    def records(self) -> list:
        return [s.record for s in self.samples]

    def imaging_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, len(self.schema.imaging)))
        return np.vstack([s.imaging_features for s in self.samples])

    def labels(self) -> np.ndarray:
        if any(s.label is None for s in self.samples):
            raise DataError("cohort has unlabeled samples")
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def get(self, sample_id: str) -> PatientSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def subset(self, keep) -> "Cohort":
        return Cohort([s for s in self.samples if keep(s)], self.schema, self.provenance)

    def split(self) -> tuple:
        return self.subset(lambda s: is_train(s.id)), self.subset(lambda s: not is_train(s.id))

    def feature_means(self) -> dict:
        """Mean of each numeric feature over samples where it is observed."""
        out = {}
        for name in self.schema.numeric:
            vals = [s.record.features[name] for s in self.samples if name in s.record.features]
            out[name] = sum(vals) / len(vals) if vals else math.nan
        return out


def _parse_value(kind, cell, where):
    cell = cell.strip()
    if cell == "":
        return None
    if kind == CATEGORICAL:
        return cell
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{where}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {cell!r}")
    return v


def _read_labels(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != ["id", "diagnosis"]:
            raise DataError(f"{path}: header must be id,diagnosis")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            sid = row[0].strip()
            if sid in out:
                raise DataError(f"{path}:{lineno}: duplicate id {sid!r}")
            out[sid] = row[1]
    return out


def load_cohort(records_path, schema: Schema, labels_path=None, logits_path=None) -> Cohort:
    with open(records_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(enumerate(reader, start=2))
    if header is None:
        raise DataError(f"{records_path}: empty file, expected a header row")
    header = [h.strip() for h in header]
    if header[:2] != list(RESERVED):
        raise DataError(f"{records_path}: header must start with id,diagnosis")
    columns = header[2:]
    for col in columns:
        if col not in schema.features and col not in schema.imaging:
            raise DataError(f"{records_path}: column {col!r} is not declared in the schema")
    missing_img = [c for c in schema.imaging if c not in columns]
    if missing_img:
        raise DataError(f"{records_path}: imaging columns missing: {', '.join(missing_img)}")

    labels_override = _read_labels(labels_path) if labels_path else None
    logits = load_external_logits(logits_path) if logits_path else None

    samples = []
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{records_path}:{lineno}"
        if len(row) != len(header):
            raise DataError(f"{where}: expected {len(header)} columns, got {len(row)}")
        sid = row[0].strip()
        if not sid:
            raise DataError(f"{where}: empty id")
        raw_dx = row[1].strip()
        if labels_override is not None:
            if sid not in labels_override:
                raise DataError(f"{where}: id {sid!r} has no row in {labels_path}")
            raw_dx = labels_override[sid].strip()
        label = consolidate_label(raw_dx) if raw_dx else None
        feats, img = {}, {}
        for col, cell in zip(columns, row[2:]):
            if col in schema.features:
                v = _parse_value(schema.features[col], cell, f"{where} column {col}")
                if v is not None:
                    feats[col] = v
            else:
                v = _parse_value(NUMERIC, cell, f"{where} column {col}")
                if v is None:
                    raise DataError(f"{where}: imaging column {col} is empty")
                img[col] = v
        ext = None
        if logits is not None:
            if sid not in logits:
                raise DataError(f"{where}: id {sid!r} has no row in {logits_path}")
            ext = logits[sid]
        samples.append(PatientSample(
            PatientRecord(sid, feats, label),
            np.array([img[c] for c in schema.imaging], dtype=np.float64),
            ext,
        ))

    ids = {s.id for s in samples}
    if labels_override is not None and set(labels_override) - ids:
        raise DataError(f"{labels_path}: ids not present in records: {sorted(set(labels_override) - ids)[:5]}")
    if logits is not None and set(logits) - ids:
        raise DataError(f"{logits_path}: ids not present in records: {sorted(set(logits) - ids)[:5]}")
    return Cohort(samples, schema, {"kind": "ingested", "records": str(records_path)})


def _cell(v) -> str:
    if v is None:
        return ""
    return v if isinstance(v, str) else repr(float(v))


def write_records(path, cohort: Cohort) -> None:
    schema = cohort.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(RESERVED) + schema.columns())
        for s in cohort.samples:
            dx = "" if s.label is None else ("AD" if s.label == AD else "CN")
            row = [s.id, dx]
            row += [_cell(s.record.features.get(k)) for k in schema.features]
            row += [_cell(x) for x in s.imaging_features]
            w.writerow(row)
