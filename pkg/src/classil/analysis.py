"""Diagnostics behind the method: classifier magnitude profiles across states,
cross-state feature drift measured by cosine similarity, and weight
distribution statistics.

The bounded-memory and independent-training comparison chains live here too.
They exist only to put the memoryless similarity curve in context and are
never reachable from the main engine; the buffered variant runs under a
non-memoryless audit of its own.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import datahub, neuralnet
from .errors import ConfigError
from .normalize import standardize


@dataclass(frozen=True)
class MagnitudeProfile:
    """Per incremental state: mean |w| over new-class rows and past-class rows."""

    mode: str
    rows: tuple  # (state, new_mean, past_mean or None)

    def to_csv_rows(self) -> list:
        out = []
        for state, new_mean, past_mean in self.rows:
            out.append(
                {
                    "state": state,
                    "new_mean": new_mean,
                    "past_mean": "" if past_mean is None else past_mean,
                }
            )
        return out


def magnitude_profile(
    head_matrices: dict, classes_per_state: int, mode: str = "raw"
) -> MagnitudeProfile:
    """Aggregate |w| per state, split into that state's new classes vs all past ones.

    ``head_matrices`` maps state t to the class-by-dimension matrix in effect
    at t (current heads for the raw profile, assembled initial weights for the
    standardized one). The aggregate is the mean over rows of each row's mean
    absolute value; the initial state is excluded.
    """
    if mode not in ("raw", "standardized"):
        raise ConfigError(f"unknown magnitude mode {mode!r}")
    states = sorted(s for s in head_matrices if s >= 1)
    if not states:
        raise ConfigError("magnitude profile needs at least one incremental state")
    rows = []
    for t in states:
        matrix = np.asarray(head_matrices[t], dtype=np.float64)
        expected = (t + 1) * classes_per_state
        if matrix.shape[0] != expected:
            raise ConfigError(
                f"state {t}: expected {expected} classifier rows, found {matrix.shape[0]}"
            )
        if mode == "standardized":
            matrix = np.stack([standardize(row) for row in matrix])
        per_row = np.mean(np.abs(matrix), axis=1)
        origins = np.arange(matrix.shape[0]) // classes_per_state
        new_mean = float(per_row[origins == t].mean())
        past_rows = per_row[origins < t]
        past_mean = float(past_rows.mean()) if past_rows.size else None
        rows.append((t, new_mean, past_mean))
    return MagnitudeProfile(mode, tuple(rows))


@dataclass(frozen=True)
class SimilarityProfile:
    """Mean cosine similarity of probe features against a reference state."""

    reference_state: int
    rows: tuple  # (state, mean_cosine, excluded)


def feature_similarity(
    models: list, reference_state: int, probe_features: np.ndarray
) -> SimilarityProfile:
    """cos(f_ref(x), f_s(x)) averaged over the probe set, for every state s.

    Probe rows mapping to a zero-norm feature vector under either model are
    excluded and counted.
    """
    if not 0 <= reference_state < len(models):
        raise ConfigError(f"reference state {reference_state} out of range")
    ref_feats, _ = neuralnet.forward(models[reference_state], probe_features)
    ref_norms = np.linalg.norm(ref_feats, axis=1)
    rows = []
    for s, model in enumerate(models):
        feats, _ = neuralnet.forward(model, probe_features)
        norms = np.linalg.norm(feats, axis=1)
        valid = (norms > 0) & (ref_norms > 0)
        excluded = int(np.sum(~valid))
        if excluded:
            warnings.warn(
                f"state {s}: excluded {excluded} zero-norm feature vectors",
                RuntimeWarning,
                stacklevel=2,
            )
        if not valid.any():
            raise ConfigError(f"state {s}: no valid probe features")
        cosines = np.sum(ref_feats[valid] * feats[valid], axis=1) / (
            ref_norms[valid] * norms[valid]
        )
        rows.append((s, float(cosines.mean()), excluded))
    return SimilarityProfile(reference_state, tuple(rows))


@dataclass(frozen=True)
class DistributionStats:
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    histogram: tuple
    bin_edges: tuple


def distribution_stats(matrix: np.ndarray, bins: int = 16) -> list:
    """Moment estimates and a histogram for each classifier row."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] < 8:
        raise ConfigError("distribution stats need a 2-D matrix with d >= 8")
    out = []
    for row in mat:
        mu = float(row.mean())
        sigma = float(row.std())
        if sigma == 0.0:
            skew, kurt = 0.0, 0.0
        else:
            centered = row - mu
            skew = float(np.mean(centered**3) / sigma**3)
            kurt = float(np.mean(centered**4) / sigma**4 - 3.0)
        counts, edges = np.histogram(row, bins=bins)
        out.append(
            DistributionStats(mu, sigma, skew, kurt, tuple(counts.tolist()), tuple(edges))
        )
    return out


# ---------------------------------------------------------------------------
# Comparison chains for the feature-similarity analysis
# ---------------------------------------------------------------------------


def train_comparison_chain(
    train_set,
    stream,
    make_spec,
    hidden_sizes,
    seed: int,
    mode: str = "finetune",
    memory_fraction: float = 0.0,
):
    """Train a chain of per-state models for similarity comparisons.

    ``make_spec(state)`` returns the TrainSpec for each state. Modes:

    * ``finetune`` - the usual chain, optionally with a random exemplar buffer
      holding ``memory_fraction`` of the full training set (no herding); the
      buffered variant reads past-class rows, so it runs under a
      non-memoryless audit.
    * ``independent`` - a fresh seeded model per state, no fine-tuning chain;
      the lower-bound reference.
    """
    if mode not in ("finetune", "independent"):
        raise ConfigError(f"unknown chain mode {mode!r}")
    if not 0.0 <= memory_fraction < 1.0:
        raise ConfigError("memory_fraction must be in [0, 1)")
    if mode == "independent" and memory_fraction:
        raise ConfigError("independent training cannot use an exemplar buffer")

    audit = datahub.AccessAudit(memoryless=(memory_fraction == 0.0))
    budget = int(memory_fraction * train_set.num_samples)
    buffer_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 40]))
    buffer_indices: list = []

    models = []
    previous = None
    n = stream.classes_per_state
    for t in range(stream.num_states):
        view = datahub.state_training_view(stream, train_set, t, audit)
        if mode == "independent" or previous is None:
            model = neuralnet.init_model(
                train_set.dim, hidden_sizes, n * (t + 1), seed + t, state_index=t
            )
        else:
            model = neuralnet.extend_head(previous, n, seed)
        if t > 0 and buffer_indices:
            replay = datahub.subset_view(
                stream, train_set, np.array(buffer_indices), t, audit
            )
            view = datahub.TrainingView(
                np.vstack([view.features, replay.features]),
                np.concatenate([view.labels, replay.labels]),
            )
        model, _ = neuralnet.train_state(model, view, make_spec(t))
        models.append(model)
        if mode == "finetune":
            previous = model
        if budget:
            seen_mask = np.isin(train_set.labels, stream.class_order[: n * (t + 1)])
            candidates = np.flatnonzero(seen_mask)
            take = min(budget, candidates.size)
            buffer_indices = buffer_rng.choice(candidates, size=take, replace=False).tolist()
    return models, audit
