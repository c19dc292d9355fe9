"""Feature datasets, synthetic cluster generation, and the incremental class stream.

Datasets are plain float64 feature matrices with integer labels. A stream
partitions the label set into T equally sized state batches; during training,
state t may only read rows whose class belongs to state t (the memoryless
rule), which an :class:`AccessAudit` enforces and records.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, IntegrityError

BINARY_MAGIC = b"LFSB"
BINARY_VERSION = 1


@dataclass(frozen=True)
class LabeledFeatureSet:
    """Immutable feature matrix (rows = samples) with one integer label per row."""

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise DataFormatError("features must be a 2-D matrix with at least one column")
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise DataFormatError(
                f"label count {labels.shape} does not match {feats.shape[0]} feature rows"
            )
        if feats.shape[0] == 0:
            raise DataFormatError("dataset is empty")
        if not np.isfinite(feats).all():
            raise DataFormatError("features contain NaN or infinite values")
        if (labels < 0).any():
            raise DataFormatError("labels must be non-negative integers")
        if self.split not in ("train", "test"):
            raise DataFormatError(f"unknown split {self.split!r}")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)


def check_train_test_consistency(train: LabeledFeatureSet, test: LabeledFeatureSet) -> None:
    """Every class present in test must also be present in train."""
    missing = np.setdiff1d(test.class_ids(), train.class_ids())
    if missing.size:
        raise DataFormatError(
            f"test classes {missing.tolist()} never appear in the training split"
        )
    if train.dim != test.dim:
        raise DataFormatError(f"train dim {train.dim} != test dim {test.dim}")


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------


def _csv_header(d: int) -> list[str]:
    return [f"f{i}" for i in range(d)] + ["label"]


def load_dataset(path, fmt: str = "csv", split: str = "train") -> LabeledFeatureSet:
    """Load a dataset from ``path`` in ``csv`` or ``packed-binary`` format."""
    if fmt == "csv":
        return _load_csv(path, split)
    if fmt in ("packed", "packed-binary"):
        return _load_packed(path, split)
    raise ConfigError(f"unknown dataset format {fmt!r}")


def _load_csv(path, split: str) -> LabeledFeatureSet:
    rows: list[list[float]] = []
    labels: list[int] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        d = len(header) - 1
        if d < 1 or header != _csv_header(d):
            raise DataFormatError(f"{path}: bad header, expected f0,...,f{{d-1}},label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {d + 1} columns, found {len(row)}"
                )
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric feature value"
                ) from None
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-integer label") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return LabeledFeatureSet(np.array(rows, dtype=np.float64), np.array(labels), split=split)


def _load_packed(path, split: str) -> LabeledFeatureSet:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    header = struct.Struct("<4sIQI")
    if len(blob) < header.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, d = header.unpack_from(blob, 0)
    if magic != BINARY_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    need = header.size + n * d * 8 + n * 8
    if len(blob) != need:
        raise DataFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    offset = header.size
    feats = np.frombuffer(blob, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    offset += n * d * 8
    labels = np.frombuffer(blob, dtype="<i8", count=n, offset=offset)
    return LabeledFeatureSet(feats.copy(), labels.copy(), split=split)


def save_dataset(dataset: LabeledFeatureSet, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_csv_header(dataset.dim))
            for row, label in zip(dataset.features, dataset.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
    elif fmt in ("packed", "packed-binary"):
        with open(path, "wb") as fh:
            fh.write(
                struct.pack(
                    "<4sIQI", BINARY_MAGIC, BINARY_VERSION, dataset.num_samples, dataset.dim
                )
            )
            fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def generate_synthetic(
    num_classes: int,
    samples_per_class: int,
    dim: int,
    spread: float,
    seed: int,
    split: str = "train",
) -> LabeledFeatureSet:
    """Gaussian clusters with seeded means shared between train and test splits.

    Class means depend only on (num_classes, dim, seed); per-sample noise is
    drawn from a split-specific stream so the two splits cover the same
    clusters without sharing rows.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if dim < 2:
        raise ConfigError("dim must be >= 2")
    if samples_per_class < 1:
        raise ConfigError("samples_per_class must be >= 1")
    if spread <= 0:
        raise ConfigError("spread must be positive")
    means_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    means = means_rng.normal(0.0, 1.0, size=(num_classes, dim))
    noise_key = 1 if split == "train" else 2
    noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), noise_key]))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class)
    noise = noise_rng.normal(0.0, 1.0, size=(labels.size, dim))
    feats = means[labels] + spread * noise
    return LabeledFeatureSet(feats, labels, split=split)


# ---------------------------------------------------------------------------
# Incremental stream
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncrementalStream:
    """Seeded partition of the class set into T contiguous state batches.

    ``class_order`` lists original dataset labels; position in that order is
    the class's *incremental id*, the label space the model head and the
    weight bank use. State of incremental id i is ``i // classes_per_state``.
    """

    class_order: np.ndarray
    num_states: int

    def __post_init__(self):
        order = np.ascontiguousarray(np.asarray(self.class_order, dtype=np.int64))
        if self.num_states < 1:
            raise ConfigError("num_states must be >= 1")
        if order.size == 0 or order.size % self.num_states != 0:
            raise ConfigError(
                f"{order.size} classes cannot be split into {self.num_states} equal states"
            )
        if np.unique(order).size != order.size:
            raise ConfigError("class_order contains duplicates")
        order.setflags(write=False)
        object.__setattr__(self, "class_order", order)
        index = {int(c): i for i, c in enumerate(order)}
        object.__setattr__(self, "_index", index)

    @property
    def classes_per_state(self) -> int:
        return self.class_order.size // self.num_states

    @property
    def total_classes(self) -> int:
        return self.class_order.size

    def incremental_id(self, original_label: int) -> int:
        try:
            return self._index[int(original_label)]
        except KeyError:
            raise ConfigError(f"label {original_label} is not part of the stream") from None

    def original_label(self, incremental_id: int) -> int:
        return int(self.class_order[incremental_id])

    def state_of_incremental(self, incremental_id: int) -> int:
        if not 0 <= incremental_id < self.total_classes:
            raise ConfigError(f"incremental id {incremental_id} out of range")
        return incremental_id // self.classes_per_state

    def state_of_class(self, original_label: int) -> int:
        return self.state_of_incremental(self.incremental_id(original_label))

    def classes_of_state(self, state: int) -> np.ndarray:
        if not 0 <= state < self.num_states:
            raise ConfigError(f"state {state} out of range [0, {self.num_states})")
        n = self.classes_per_state
        return self.class_order[state * n : (state + 1) * n]

    def classes_seen(self, state: int) -> int:
        """N_t: number of classes in states 0..state inclusive."""
        if not 0 <= state < self.num_states:
            raise ConfigError(f"state {state} out of range [0, {self.num_states})")
        return (state + 1) * self.classes_per_state

    def map_labels(self, labels: np.ndarray) -> np.ndarray:
        """Translate original dataset labels to incremental ids."""
        return np.array([self.incremental_id(l) for l in labels], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "class_order": self.class_order.tolist(),
            "num_states": self.num_states,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IncrementalStream":
        return cls(np.array(obj["class_order"], dtype=np.int64), int(obj["num_states"]))


def partition_stream(dataset: LabeledFeatureSet, num_states: int, seed: int) -> IncrementalStream:
    """Seeded uniform shuffle of the class ids, split into equal contiguous blocks."""
    classes = dataset.class_ids()
    if num_states < 1:
        raise ConfigError("num_states must be >= 1")
    if classes.size % num_states != 0:
        raise ConfigError(
            f"{classes.size} classes are not divisible into {num_states} states"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    order = classes.copy()
    rng.shuffle(order)
    return IncrementalStream(order, num_states)


# ---------------------------------------------------------------------------
# Access auditing and training views
# ---------------------------------------------------------------------------


@dataclass
class AccessAudit:
    """Counts of training rows read, keyed by (state of the row's class, reading state).

    With ``memoryless=True`` any read of a class outside its own state's
    training phase raises immediately; the counters still record everything
    for the run's audit log.
    """

    memoryless: bool = True
    counts: dict = field(default_factory=dict)

    def record(self, class_state: int, read_state: int, rows: int) -> None:
        if rows == 0:
            return
        if self.memoryless and class_state != read_state:
            raise IntegrityError(
                f"memoryless violation: state {read_state} read {rows} rows of a "
                f"state-{class_state} class"
            )
        key = (int(class_state), int(read_state))
        self.counts[key] = self.counts.get(key, 0) + int(rows)

    def cross_state_reads(self) -> int:
        return sum(v for (cs, rs), v in self.counts.items() if cs != rs)

    def total_reads(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> dict:
        return {
            "memoryless": self.memoryless,
            "cross_state_reads": self.cross_state_reads(),
            "counts": [
                {"class_state": cs, "read_state": rs, "rows": v}
                for (cs, rs), v in sorted(self.counts.items())
            ],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class TrainingView:
    """Materialized slice of a dataset with labels in incremental-id space."""

    features: np.ndarray
    labels: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]


def state_training_view(
    stream: IncrementalStream,
    dataset: LabeledFeatureSet,
    state: int,
    audit: AccessAudit,
) -> TrainingView:
    """Training rows of exactly the classes introduced in ``state``."""
    if not 0 <= state < stream.num_states:
        raise ConfigError(f"state {state} out of range [0, {stream.num_states})")
    new_classes = stream.classes_of_state(state)
    mask = np.isin(dataset.labels, new_classes)
    feats = dataset.features[mask]
    labels = stream.map_labels(dataset.labels[mask])
    for cls in new_classes:
        audit.record(state, state, int(np.sum(dataset.labels == cls)))
    feats.setflags(write=False)
    labels.setflags(write=False)
    return TrainingView(feats, labels)


def subset_view(
    stream: IncrementalStream,
    dataset: LabeledFeatureSet,
    row_indices: np.ndarray,
    read_state: int,
    audit: AccessAudit,
) -> TrainingView:
    """Arbitrary rows by index, audited against the state doing the reading.

    Used by the bounded-memory analysis variant; under a memoryless audit any
    past-class row here raises.
    """
    idx = np.asarray(row_indices, dtype=np.int64)
    feats = dataset.features[idx]
    originals = dataset.labels[idx]
    labels = stream.map_labels(originals)
    for cls in np.unique(originals):
        audit.record(
            stream.state_of_class(int(cls)), read_state, int(np.sum(originals == cls))
        )
    feats.setflags(write=False)
    labels.setflags(write=False)
    return TrainingView(feats, labels)


def cumulative_test_view(
    stream: IncrementalStream, dataset: LabeledFeatureSet, state: int
) -> TrainingView:
    """Test rows of every class seen through ``state``.

    Test data is never memory-restricted, so no audit is involved.
    """
    if not 0 <= state < stream.num_states:
        raise ConfigError(f"state {state} out of range [0, {stream.num_states})")
    seen = stream.class_order[: stream.classes_seen(state)]
    mask = np.isin(dataset.labels, seen)
    feats = dataset.features[mask]
    labels = stream.map_labels(dataset.labels[mask])
    feats.setflags(write=False)
    labels.setflags(write=False)
    return TrainingView(feats, labels)
