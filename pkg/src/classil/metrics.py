"""Accuracy, averaged incremental accuracy, the G_IL gap aggregate, and the
six-way error typology."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .scoring import ScoreMatrix


def topk_accuracy(scores: ScoreMatrix, labels: np.ndarray, k: int) -> float:
    """Percent of samples whose true label ranks among the k highest scores."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != scores.scores.shape[0]:
        raise ConfigError("label count does not match score rows")
    top = scores.topk(k)
    hits = (top == labels[:, None]).any(axis=1)
    return float(np.mean(hits) * 100.0)


def average_incremental_accuracy(per_state: list) -> float:
    """Arithmetic mean over the incremental states (the initial state excluded)."""
    if not per_state:
        raise ConfigError("no incremental-state accuracies to average")
    return float(np.mean(np.asarray(per_state, dtype=np.float64)))


@dataclass(frozen=True)
class GilInput:
    """(configuration accuracy, Full accuracy) pairs plus the measure's upper bound."""

    pairs: tuple
    upper_bound: float = 100.0

    def __post_init__(self):
        pairs = tuple((float(a), float(f)) for a, f in self.pairs)
        if not pairs:
            raise ConfigError("G_IL needs at least one (accuracy, Full) pair")
        for acc, full in pairs:
            if full >= self.upper_bound:
                raise ConfigError(
                    f"Full accuracy {full} must be below the upper bound {self.upper_bound}"
                )
        object.__setattr__(self, "pairs", pairs)


def g_il(inp: GilInput) -> float:
    """Mean relative gap to Full: mean of (acc - full) / (upper - full).

    Inputs are percentages; zero is best, negative means below Full.
    """
    gaps = [(acc - full) / (inp.upper_bound - full) for acc, full in inp.pairs]
    return float(np.mean(gaps))


@dataclass(frozen=True)
class ErrorTypology:
    """Top-1 outcome split for past-class and new-class test samples.

    Percentages are per group: correct, confused within the group, confused
    with the other group. A group with no test samples reports None.
    """

    past: tuple | None  # (c_p, e_pp, e_pn)
    new: tuple | None   # (c_n, e_nn, e_np)

    def to_json(self) -> dict:
        past = None
        if self.past is not None:
            past = {"c_p": self.past[0], "e_pp": self.past[1], "e_pn": self.past[2]}
        new = None
        if self.new is not None:
            new = {"c_n": self.new[0], "e_nn": self.new[1], "e_np": self.new[2]}
        return {"past": past, "new": new}


def error_typology(
    scores: ScoreMatrix,
    labels: np.ndarray,
    past_classes,
    new_classes,
) -> ErrorTypology:
    past = np.asarray(sorted(past_classes), dtype=np.int64)
    new = np.asarray(sorted(new_classes), dtype=np.int64)
    if np.intersect1d(past, new).size:
        raise ConfigError("past and new class sets overlap")
    all_classes = np.union1d(past, new)
    if not np.array_equal(all_classes, np.arange(scores.num_classes)):
        raise ConfigError("past + new must cover exactly the scored classes")
    labels = np.asarray(labels, dtype=np.int64)
    preds = scores.top1()

    def group(members: np.ndarray, other: np.ndarray):
        mask = np.isin(labels, members)
        total = int(mask.sum())
        if total == 0:
            return None
        correct = int(np.sum(mask & (preds == labels)))
        wrong_within = int(np.sum(mask & (preds != labels) & np.isin(preds, members)))
        wrong_other = int(np.sum(mask & np.isin(preds, other)))
        return (
            100.0 * correct / total,
            100.0 * wrong_within / total,
            100.0 * wrong_other / total,
        )

    return ErrorTypology(past=group(past, new), new=group(new, past))


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass
class StateMetrics:
    state: int
    num_classes: int
    top1: float
    top5: float
    typology: ErrorTypology

    def to_json(self) -> dict:
        return {
            "state": self.state,
            "num_classes": self.num_classes,
            "top1": self.top1,
            "top5": self.top5,
            "typology": self.typology.to_json(),
        }


@dataclass
class MetricsReport:
    """Per-state accuracies plus the incremental averages for one method."""

    method: str
    backbone: str
    eval_config: dict
    per_state: list = field(default_factory=list)

    @property
    def average_incremental_top1(self) -> float | None:
        vals = [s.top1 for s in self.per_state if s.state >= 1]
        return average_incremental_accuracy(vals) if vals else None

    @property
    def average_incremental_top5(self) -> float | None:
        vals = [s.top5 for s in self.per_state if s.state >= 1]
        return average_incremental_accuracy(vals) if vals else None

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "backbone": self.backbone,
            "eval_config": self.eval_config,
            "per_state": [s.to_json() for s in self.per_state],
            "average_incremental_top1": self.average_incremental_top1,
            "average_incremental_top5": self.average_incremental_top5,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        report = cls(obj["method"], obj["backbone"], obj["eval_config"])
        for s in obj["per_state"]:
            typ = s["typology"]
            past = typ["past"]
            new = typ["new"]
            report.per_state.append(
                StateMetrics(
                    s["state"],
                    s["num_classes"],
                    s["top1"],
                    s["top5"],
                    ErrorTypology(
                        past=None if past is None else (past["c_p"], past["e_pp"], past["e_pn"]),
                        new=None if new is None else (new["c_n"], new["e_nn"], new["e_np"]),
                    ),
                )
            )
        return report
