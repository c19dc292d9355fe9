"""Frozen per-class initial classifier weights and per-state prediction means.

When a state finishes training, the head rows of its new classes are copied
into the bank and never touched again; the state's mean top-1 raw logit over
its own training samples is stored alongside for score calibration. A sha256
digest over the frozen entries makes later mutation detectable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, ShapeError
from .neuralnet import Model, forward

BANK_MAGIC = b"WBNK"
BANK_VERSION = 1


@dataclass(frozen=True)
class BankEntry:
    class_id: int
    origin_state: int
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass
class WeightBank:
    """Append-only store of initial classifiers, keyed by incremental class id."""

    feature_dim: int
    entries: dict = field(default_factory=dict)
    state_means: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    def recorded_states(self) -> list:
        return sorted(self.state_means)

    def origin_of(self, class_id: int) -> int:
        try:
            return self.entries[int(class_id)].origin_state
        except KeyError:
            raise IntegrityError(f"class {class_id} is not recorded in the bank") from None

    def content_digest(self, up_to_state: int | None = None) -> str:
        """sha256 over the frozen entries with origin_state <= up_to_state.

        Stable across later states by construction; used to prove immutability
        and to seal the persisted bank file.
        """
        h = hashlib.sha256()
        for class_id in sorted(self.entries):
            entry = self.entries[class_id]
            if up_to_state is not None and entry.origin_state > up_to_state:
                continue
            h.update(struct.pack("<qq", entry.class_id, entry.origin_state))
            h.update(struct.pack("<d", entry.bias))
            h.update(np.ascontiguousarray(entry.weights, dtype="<f8").tobytes())
        return h.hexdigest()


def record_state(bank: WeightBank, model: Model, state_view) -> WeightBank:
    """Freeze the trained head rows of the state's new classes and its mean top-1 logit.

    The state index comes from the model; its new classes are the head rows
    beyond every class already banked. Re-recording any class is an error.
    """
    state = model.state_index
    if model.feature_dim != bank.feature_dim:
        raise ShapeError(
            f"model feature dim {model.feature_dim} != bank dim {bank.feature_dim}"
        )
    if state in bank.state_means:
        raise IntegrityError(f"state {state} is already recorded")
    already = bank.num_classes
    if model.num_classes <= already:
        raise IntegrityError(
            f"model has {model.num_classes} classes but {already} are already banked"
        )
    for class_id in range(already):
        if class_id not in bank.entries:
            raise IntegrityError(f"bank is missing class {class_id}")
    for class_id in range(already, model.num_classes):
        bank.entries[class_id] = BankEntry(
            class_id,
            state,
            model.head_weights[class_id].copy(),
            float(model.head_bias[class_id]),
        )
    _, logits = forward(model, state_view.features)
    bank.state_means[state] = float(np.mean(logits.max(axis=1)))
    return bank


def assemble_initial_matrix(bank: WeightBank, up_to_state: int):
    """Initial-weights matrix for all classes of states 0..up_to_state.

    Returns (weights, biases, origins) with rows ordered by class id; row i is
    the classifier of class i exactly as trained in its origin state.
    """
    for state in range(up_to_state + 1):
        if state not in bank.state_means:
            raise IntegrityError(f"bank has no record for state {state}")
    ids = sorted(c for c, e in bank.entries.items() if e.origin_state <= up_to_state)
    if ids != list(range(len(ids))):
        raise IntegrityError("bank entries do not form a contiguous class range")
    weights = np.stack([bank.entries[i].weights for i in ids])
    biases = np.array([bank.entries[i].bias for i in ids])
    origins = np.array([bank.entries[i].origin_state for i in ids], dtype=np.int64)
    return weights, biases, origins


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_bank(bank: WeightBank, path) -> None:
    payload = bytearray()
    payload += struct.pack(
        "<III", bank.num_classes, len(bank.state_means), bank.feature_dim
    )
    for class_id in sorted(bank.entries):
        entry = bank.entries[class_id]
        payload += struct.pack("<qqd", entry.class_id, entry.origin_state, entry.bias)
        payload += np.ascontiguousarray(entry.weights, dtype="<f8").tobytes()
    for state in sorted(bank.state_means):
        payload += struct.pack("<qd", state, bank.state_means[state])
    digest = hashlib.sha256(bytes(payload)).digest()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", BANK_MAGIC, BANK_VERSION))
        fh.write(digest)
        fh.write(payload)


def load_bank(path) -> WeightBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.Struct("<4sI")
    if len(blob) < head.size + 32:
        raise IntegrityError(f"{path}: truncated bank file")
    magic, version = head.unpack_from(blob, 0)
    if magic != BANK_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != BANK_VERSION:
        raise IntegrityError(f"{path}: unsupported bank version {version}")
    digest = blob[head.size : head.size + 32]
    payload = blob[head.size + 32 :]
    if hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"{path}: bank digest mismatch")
    offset = 0
    n_entries, n_states, dim = struct.unpack_from("<III", payload, offset)
    offset += 12
    bank = WeightBank(feature_dim=dim)
    entry_head = struct.Struct("<qqd")
    for _ in range(n_entries):
        class_id, origin, bias = entry_head.unpack_from(payload, offset)
        offset += entry_head.size
        weights = np.frombuffer(payload, dtype="<f8", count=dim, offset=offset).copy()
        offset += dim * 8
        bank.entries[class_id] = BankEntry(class_id, origin, weights, bias)
    state_head = struct.Struct("<qd")
    for _ in range(n_states):
        state, mean = state_head.unpack_from(payload, offset)
        offset += state_head.size
        bank.state_means[state] = mean
    return bank
