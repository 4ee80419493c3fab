"""Flow schema, CSV ingestion with sanitization, dataset assembly and
synthetic flow generation.

A dataset is stored densely: one float64 matrix plus a string label per
row.  Rows that fail sanitization (a cell that cannot be parsed, or one
that parses to inf/nan, which CICFlowMeter emits as literal "Infinity"
and "NaN" tokens) are dropped and counted; a parse never aborts on a bad
row.  All constructed datasets therefore contain only finite values.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    EmptyInput,
    InvalidSpec,
    LengthMismatch,
    MissingColumn,
    NonFinite,
    SchemaMismatch,
)
from .seeding import normalize_key, rng_from

# Feature columns of the published CIC-IDS2017 flow CSVs, whitespace
# trimmed.  The raw files list "Fwd Header Length" twice; the duplicate is
# dropped here because schema names must be unique (the parser matches by
# name and takes the first occurrence anyway).  Tool versions vary between
# 78 and 85 columns, so the schema is a parameter, not a constant.
CICIDS2017_FEATURES = (
    "Destination Port", "Flow Duration", "Total Fwd Packets",
    "Total Backward Packets", "Total Length of Fwd Packets",
    "Total Length of Bwd Packets", "Fwd Packet Length Max",
    "Fwd Packet Length Min", "Fwd Packet Length Mean",
    "Fwd Packet Length Std", "Bwd Packet Length Max",
    "Bwd Packet Length Min", "Bwd Packet Length Mean",
    "Bwd Packet Length Std", "Flow Bytes/s", "Flow Packets/s",
    "Flow IAT Mean", "Flow IAT Std", "Flow IAT Max", "Flow IAT Min",
    "Fwd IAT Total", "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max",
    "Fwd IAT Min", "Bwd IAT Total", "Bwd IAT Mean", "Bwd IAT Std",
    "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags", "Bwd PSH Flags",
    "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Length",
    "Bwd Header Length", "Fwd Packets/s", "Bwd Packets/s",
    "Min Packet Length", "Max Packet Length", "Packet Length Mean",
    "Packet Length Std", "Packet Length Variance", "FIN Flag Count",
    "SYN Flag Count", "RST Flag Count", "PSH Flag Count", "ACK Flag Count",
    "URG Flag Count", "CWE Flag Count", "ECE Flag Count", "Down/Up Ratio",
    "Average Packet Size", "Avg Fwd Segment Size", "Avg Bwd Segment Size",
    "Fwd Avg Bytes/Bulk", "Fwd Avg Packets/Bulk", "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk", "Bwd Avg Packets/Bulk", "Bwd Avg Bulk Rate",
    "Subflow Fwd Packets", "Subflow Fwd Bytes", "Subflow Bwd Packets",
    "Subflow Bwd Bytes", "Init_Win_bytes_forward", "Init_Win_bytes_backward",
    "act_data_pkt_fwd", "min_seg_size_forward", "Active Mean", "Active Std",
    "Active Max", "Active Min", "Idle Mean", "Idle Std", "Idle Max",
    "Idle Min",
)


@dataclass(frozen=True)
class FlowSchema:
    """Ordered feature names plus the label column of a flow CSV."""

    feature_names: tuple[str, ...]
    label_column: str = "Label"

    def __post_init__(self):
        names = tuple(self.feature_names)
        object.__setattr__(self, "feature_names", names)
        if len(names) < 1:
            raise InvalidSpec("schema needs at least one feature")
        if len(set(names)) != len(names):
            raise InvalidSpec("feature names must be unique")
        if self.label_column in names:
            raise InvalidSpec(
                f"label column {self.label_column!r} is also a feature"
            )

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def cicids2017_schema() -> FlowSchema:
    """Schema matching the published CIC-IDS2017 flow CSV header."""
    return FlowSchema(CICIDS2017_FEATURES, label_column="Label")


@dataclass(frozen=True)
class FlowRecord:
    """One network flow: a finite feature vector and its class label."""

    features: np.ndarray
    label: str

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise LengthMismatch("flow features must be a 1-D vector")
        if not np.all(np.isfinite(feats)):
            raise NonFinite("flow features must be finite")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class ParseReport:
    """Sanitization outcome of one CSV parse."""

    rows_read: int
    rows_kept: int
    nonfinite_dropped: int
    malformed_dropped: int
    messages: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "nonfinite_dropped": self.nonfinite_dropped,
            "malformed_dropped": self.malformed_dropped,
        }


@dataclass(frozen=True)
class SanitizePolicy:
    """Controls for the per-row sanitization during parsing."""

    max_reported_rows: int = 25  # per-row messages kept in the report


@dataclass(frozen=True)
class FlowDataset:
    """Immutable collection of flows sharing one schema.

    ``features`` is an (n, F) float64 matrix; ``targets``, when present,
    is an (n,) vector of 0.0/1.0 regression targets.
    """

    schema: FlowSchema
    features: np.ndarray
    labels: tuple[str, ...]
    targets: np.ndarray | None = None
    report: ParseReport | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.schema.n_features:
            raise SchemaMismatch(
                f"feature matrix shape {feats.shape} does not match "
                f"schema with {self.schema.n_features} features"
            )
        if not np.all(np.isfinite(feats)):
            raise NonFinite("dataset contains non-finite feature values")
        if len(self.labels) != feats.shape[0]:
            raise LengthMismatch("one label per row required")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.targets is not None:
            t = np.asarray(self.targets, dtype=np.float64)
            if t.shape != (feats.shape[0],):
                raise LengthMismatch("one target per row required")
            object.__setattr__(self, "targets", t)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @cached_property
    def class_counts(self) -> dict[str, int]:
        return dict(Counter(self.labels))

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(self.features[i].copy(), self.labels[i])


@dataclass(frozen=True)
class FeatureSummary:
    """Per-feature means and population standard deviations."""

    means: np.ndarray
    stds: np.ndarray
    nonfinite_dropped: int = 0

    def __post_init__(self):
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if m.shape != s.shape or m.ndim != 1:
            raise LengthMismatch("means and stds must be 1-D of equal length")
        if not np.all(np.isfinite(m)) or np.any(s < 0):
            raise NonFinite("summary statistics must be finite, stds >= 0")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)


def _normalize_name(name: str) -> str:
    return name.strip().casefold()


def _read_text(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8", errors="replace")
    if isinstance(source, bytes):
        return source.decode("utf-8", errors="replace")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def parse_flow_csv(
    source,
    schema: FlowSchema,
    policy: SanitizePolicy = SanitizePolicy(),
) -> FlowDataset:
    """Parse a flow CSV into a dataset, dropping rows that fail sanitization.

    ``source`` may be a path, raw bytes, or an open file object.  Header
    columns are matched to schema names after whitespace trimming, case
    insensitively; column order need not match schema order.  Rows with
    unparseable cells are dropped as malformed; rows whose cells parse to
    inf or nan are dropped as non-finite.  Both counts appear in the
    attached :class:`ParseReport`.

    Raises :class:`MissingColumn` when a schema column is absent and
    :class:`EmptyInput` when no data row survives.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("CSV has no header row")

    positions: dict[str, int] = {}
    for idx, raw in enumerate(header):
        positions.setdefault(_normalize_name(raw), idx)

    missing = [
        name for name in schema.feature_names
        if _normalize_name(name) not in positions
    ]
    if _normalize_name(schema.label_column) not in positions:
        missing.append(schema.label_column)
    if missing:
        raise MissingColumn(f"columns absent from header: {missing}")

    feat_idx = [positions[_normalize_name(n)] for n in schema.feature_names]
    label_idx = positions[_normalize_name(schema.label_column)]
    needed = max(max(feat_idx), label_idx) + 1

    rows: list[list[float]] = []
    labels: list[str] = []
    rows_read = 0
    nonfinite = 0
    malformed = 0
    messages: list[str] = []

    def note(msg: str):
        if len(messages) < policy.max_reported_rows:
            messages.append(msg)

    for lineno, row in enumerate(reader, start=2):
        if not row or all(cell.strip() == "" for cell in row):
            continue
        rows_read += 1
        if len(row) < needed:
            malformed += 1
            note(f"line {lineno}: expected at least {needed} columns, got {len(row)}")
            continue
        try:
            values = [float(row[j].strip()) for j in feat_idx]
        except ValueError as exc:
            malformed += 1
            note(f"line {lineno}: {exc}")
            continue
        if not all(np.isfinite(values)):
            nonfinite += 1
            note(f"line {lineno}: non-finite feature value")
            continue
        rows.append(values)
        labels.append(row[label_idx].strip())

    if not rows:
        raise EmptyInput(
            f"no rows survived sanitization ({rows_read} read, "
            f"{malformed} malformed, {nonfinite} non-finite)"
        )

    report = ParseReport(
        rows_read=rows_read,
        rows_kept=len(rows),
        nonfinite_dropped=nonfinite,
        malformed_dropped=malformed,
        messages=tuple(messages),
    )
    return FlowDataset(
        schema=schema,
        features=np.array(rows, dtype=np.float64),
        labels=tuple(labels),
        report=report,
    )


def serialize_flow_csv(dataset: FlowDataset, sink) -> None:
    """Write a dataset back to CSV; floats use shortest round-trip repr."""
    own = isinstance(sink, (str, os.PathLike))
    fh = open(sink, "w", newline="") if own else sink
    try:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.schema.feature_names)
                        + [dataset.schema.label_column])
        for i in range(len(dataset)):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [dataset.labels[i]]
            )
    finally:
        if own:
            fh.close()


def subset(dataset: FlowDataset, indices) -> FlowDataset:
    """Row subset preserving schema and targets."""
    idx = np.asarray(indices, dtype=np.intp)
    return FlowDataset(
        schema=dataset.schema,
        features=dataset.features[idx],
        labels=tuple(dataset.labels[i] for i in idx),
        targets=None if dataset.targets is None else dataset.targets[idx],
    )


def filter_label(dataset: FlowDataset, label: str) -> FlowDataset:
    """Rows whose label equals ``label`` exactly."""
    idx = [i for i, lab in enumerate(dataset.labels) if lab == label]
    if not idx:
        raise EmptyInput(f"no rows labeled {label!r}")
    return subset(dataset, idx)


def binary_dataset(
    benign: FlowDataset, attack: FlowDataset, seed
) -> FlowDataset:
    """Stack benign (target 0.0) and attack (target 1.0) rows, shuffled.

    The shuffle is deterministic in ``seed``.  Targets are regression
    targets, exactly 0.0 and 1.0, not class labels.
    """
    if benign.schema != attack.schema:
        raise SchemaMismatch("benign and attack datasets use different schemas")
    if len(benign) == 0 or len(attack) == 0:
        raise EmptyInput("both benign and attack datasets must be non-empty")
    feats = np.vstack([benign.features, attack.features])
    labels = benign.labels + attack.labels
    targets = np.concatenate([
        np.zeros(len(benign)), np.ones(len(attack))
    ])
    perm = rng_from(*normalize_key(seed)).permutation(feats.shape[0])
    return FlowDataset(
        schema=benign.schema,
        features=feats[perm],
        labels=tuple(labels[i] for i in perm),
        targets=targets[perm],
    )


def feature_summary(dataset: FlowDataset) -> FeatureSummary:
    """Arithmetic mean and population std of every feature column."""
    if len(dataset) == 0:
        raise EmptyInput("cannot summarize an empty dataset")
    dropped = dataset.report.nonfinite_dropped if dataset.report else 0
    return FeatureSummary(
        means=dataset.features.mean(axis=0),
        stds=dataset.features.std(axis=0),
        nonfinite_dropped=dropped,
    )


def abs_diff_covariates(flow, summary: FeatureSummary) -> np.ndarray:
    """Elementwise absolute distance of a flow from the summary means."""
    feats = flow.features if isinstance(flow, FlowRecord) else np.asarray(flow)
    if feats.shape != summary.means.shape:
        raise LengthMismatch(
            f"flow has {feats.shape} features, summary has {summary.means.shape}"
        )
    return np.abs(feats - summary.means)


@dataclass(frozen=True)
class ClassSpec:
    """Per-feature normal parameters for one synthetic class."""

    means: np.ndarray
    stds: np.ndarray
    truncate_at_zero: np.ndarray  # bool per feature

    def __post_init__(self):
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        t = np.asarray(self.truncate_at_zero, dtype=bool)
        if not (m.shape == s.shape == t.shape) or m.ndim != 1:
            raise InvalidSpec("class spec vectors must be 1-D of equal length")
        if np.any(s < 0):
            raise InvalidSpec("negative std in synthetic spec")
        if not np.all(np.isfinite(m)) or not np.all(np.isfinite(s)):
            raise InvalidSpec("non-finite parameter in synthetic spec")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)
        object.__setattr__(self, "truncate_at_zero", t)


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic flow distributions: class name -> per-feature normals."""

    schema: FlowSchema
    classes: dict[str, ClassSpec]

    def __post_init__(self):
        for name, cls in self.classes.items():
            if len(cls.means) != self.schema.n_features:
                raise InvalidSpec(
                    f"class {name!r} spec length does not match schema"
                )

    @classmethod
    def from_json_dict(cls, spec: dict, label_column: str = "Label"):
        """Build from ``{class: {feature: {mean, std, truncate_at_zero}}}``.

        Feature order follows the first class; every class must define the
        same feature set.
        """
        if not spec:
            raise InvalidSpec("synthetic spec has no classes")
        first = next(iter(spec.values()))
        feature_names = tuple(first.keys())
        schema = FlowSchema(feature_names, label_column=label_column)
        classes = {}
        for label, feats in spec.items():
            if tuple(sorted(feats.keys())) != tuple(sorted(feature_names)):
                raise InvalidSpec(
                    f"class {label!r} does not define the same features as "
                    f"the first class"
                )
            classes[label] = ClassSpec(
                means=[float(feats[n].get("mean", 0.0)) for n in feature_names],
                stds=[float(feats[n].get("std", 0.0)) for n in feature_names],
                truncate_at_zero=[
                    bool(feats[n].get("truncate_at_zero", False))
                    for n in feature_names
                ],
            )
        return cls(schema=schema, classes=classes)

    @classmethod
    def from_json(cls, text: str, label_column: str = "Label"):
        return cls.from_json_dict(json.loads(text), label_column=label_column)


def synthesize_flows(spec: SyntheticSpec, n: int, seed) -> FlowDataset:
    """Draw ``n`` flows per class from the spec's per-feature normals.

    Features flagged ``truncate_at_zero`` are clipped at zero after
    sampling (count-like features); the rest are unrestricted.  The output
    is deterministic in ``seed``: classes are generated in spec order from
    one stream.
    """
    if n < 1:
        raise InvalidSpec("need n >= 1 synthetic rows per class")
    rng = rng_from(*normalize_key(seed))
    blocks = []
    labels: list[str] = []
    for label, cls in spec.classes.items():
        z = rng.standard_normal((n, spec.schema.n_features))
        block = cls.means + cls.stds * z
        block[:, cls.truncate_at_zero] = np.clip(
            block[:, cls.truncate_at_zero], 0.0, None
        )
        blocks.append(block)
        labels.extend([label] * n)
    return FlowDataset(
        schema=spec.schema,
        features=np.vstack(blocks),
        labels=tuple(labels),
    )
