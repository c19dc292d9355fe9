"""Prediction scores from a classifier source, a normalization, and a calibration.

A score for test image x and class i of origin state j is

    (f_t(x) . row_i + bias_i) * mu(M_t) / mu(M_j)

where f_t comes from the *current* model's extractor, row_i is the (possibly
normalized) classifier of class i, and the mu ratio is the mc calibration
(all ones when calibration is off). Scores are raw affine outputs, not
softmax probabilities; top-k is taken directly over them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import normalize
from .errors import ConfigError, IntegrityError, ShapeError
from .neuralnet import Model, forward
from .weightbank import WeightBank, assemble_initial_matrix

SOURCE_CURRENT = "current_head"
SOURCE_BANK = "initial_bank"
CALIBRATION_NONE = "none"
CALIBRATION_MC = "mc"


@dataclass(frozen=True)
class EvalConfig:
    """Which classifier to score with, how to normalize it, and whether to calibrate.

    The named method grid only pairs normalization with the initial bank;
    normalizing the current head is permitted here but is not one of the
    method variants the experiment runner exposes.
    """

    classifier_source: str = SOURCE_CURRENT
    normalization: str = "none"
    calibration: str = CALIBRATION_NONE

    def __post_init__(self):
        if self.classifier_source not in (SOURCE_CURRENT, SOURCE_BANK):
            raise ConfigError(f"unknown classifier source {self.classifier_source!r}")
        normalize.NormalizationKind.parse(self.normalization)
        if self.calibration not in (CALIBRATION_NONE, CALIBRATION_MC):
            raise ConfigError(f"unknown calibration {self.calibration!r}")

    def to_json(self) -> dict:
        return {
            "classifier_source": self.classifier_source,
            "normalization": self.normalization,
            "calibration": self.calibration,
        }


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-sample, per-class scores over the N_t seen classes."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ShapeError("scores must be 2-D (samples x classes)")
        if not np.isfinite(s).all():
            raise ConfigError("scores contain NaN or infinite values")
        object.__setattr__(self, "scores", s)

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def top1(self) -> np.ndarray:
        """Highest-scoring class per sample; score ties go to the lower class id."""
        return np.argmax(self.scores, axis=1)

    def topk(self, k: int) -> np.ndarray:
        """Indices of the k best classes per sample, ties broken by lower class id."""
        if not 1 <= k <= self.num_classes:
            raise ConfigError(f"k={k} out of range [1, {self.num_classes}]")
        return np.argsort(-self.scores, axis=1, kind="stable")[:, :k]


def build_classifier(
    config: EvalConfig, model: Model, bank: WeightBank | None, state: int
):
    """Resolve (weights, biases, per-class calibration ratios) for scoring.

    The bank is required whenever the source is ``initial_bank`` or the
    calibration is ``mc`` (origin states and state means live there).
    """
    needs_bank = config.classifier_source == SOURCE_BANK or config.calibration == CALIBRATION_MC
    if needs_bank and bank is None:
        raise ConfigError(f"{config} requires a weight bank")

    if config.classifier_source == SOURCE_BANK:
        weights, biases, origins = assemble_initial_matrix(bank, state)
    else:
        weights = model.head_weights.copy()
        biases = model.head_bias.copy()
        origins = None

    if weights.shape[0] != model.num_classes:
        raise ShapeError(
            f"classifier has {weights.shape[0]} rows, model sees {model.num_classes} classes"
        )

    weights = normalize.apply(config.normalization, weights)

    ratios = np.ones(weights.shape[0])
    if config.calibration == CALIBRATION_MC:
        if origins is None:
            _, _, origins = assemble_initial_matrix(bank, state)
        if state not in bank.state_means:
            raise IntegrityError(f"bank has no mean for state {state}")
        mu_t = bank.state_means[state]
        for origin in np.unique(origins):
            mu_j = bank.state_means.get(int(origin))
            if mu_j is None:
                raise IntegrityError(f"bank has no mean for state {origin}")
            if mu_t <= 0 or mu_j <= 0:
                warnings.warn(
                    f"non-positive state mean (state {state}: {mu_t:.4g}, "
                    f"state {origin}: {mu_j:.4g}); calibration ratio forced to 1",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            ratios[origins == origin] = mu_t / mu_j
    return weights, biases, ratios


def score(
    config: EvalConfig,
    model: Model,
    bank: WeightBank | None,
    state: int,
    test_features: np.ndarray,
) -> ScoreMatrix:
    """Score a test batch with the classifier resolved from ``config``."""
    weights, biases, ratios = build_classifier(config, model, bank, state)
    features, _ = forward(model, test_features)
    return ScoreMatrix((features @ weights.T + biases) * ratios)
