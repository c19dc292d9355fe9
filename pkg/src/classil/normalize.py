"""Per-classifier weight normalizations: standardize, L2, min-max, mean.

Each operates on a single classifier's weight vector; ``apply`` maps one over
every row of a class-by-dimension matrix independently. Biases are never
normalized. Constant rows are rejected rather than silently zeroed, since a
constant classifier indicates a broken training run.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError, DegenerateInputError


class NormalizationKind(str, Enum):
    NONE = "none"
    STANDARDIZE = "standardize"
    L2 = "l2"
    MIN_MAX = "min_max"
    MEAN = "mean"

    @classmethod
    def parse(cls, name: str) -> "NormalizationKind":
        try:
            return cls(name)
        except ValueError:
            raise ConfigError(
                f"unknown normalization {name!r}; expected one of "
                f"{[k.value for k in cls]}"
            ) from None


def _as_vector(w) -> np.ndarray:
    v = np.asarray(w, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DegenerateInputError("normalization requires a 1-D vector of length >= 2")
    return v


def standardize(w) -> np.ndarray:
    """(w - mean) / population std; zero mean, unit std output."""
    v = _as_vector(w)
    # min == max, not sigma == 0: the mean of identical values can differ from
    # them by an ulp, leaving a spurious nonzero sigma
    if v.min() == v.max():
        raise DegenerateInputError("cannot standardize a constant vector")
    return (v - v.mean()) / v.std()


def l2_normalize(w) -> np.ndarray:
    v = _as_vector(w)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateInputError("cannot L2-normalize a zero vector")
    return v / norm


def min_max_normalize(w) -> np.ndarray:
    """(w - min) / (max - min); output spans [0, 1]."""
    v = _as_vector(w)
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise DegenerateInputError("cannot min-max normalize a constant vector")
    return (v - lo) / (hi - lo)


def mean_normalize(w) -> np.ndarray:
    """(w - mean) / (max - min); zero mean, unit range width."""
    v = _as_vector(w)
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise DegenerateInputError("cannot mean-normalize a constant vector")
    return (v - v.mean()) / (hi - lo)


_FUNCS = {
    NormalizationKind.STANDARDIZE: standardize,
    NormalizationKind.L2: l2_normalize,
    NormalizationKind.MIN_MAX: min_max_normalize,
    NormalizationKind.MEAN: mean_normalize,
}


def apply(kind: NormalizationKind, matrix: np.ndarray) -> np.ndarray:
    """Apply ``kind`` to each class row independently.

    Statistics are per row (per classifier), never pooled across classes.
    """
    kind = NormalizationKind.parse(kind) if not isinstance(kind, NormalizationKind) else kind
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise DegenerateInputError("apply expects a 2-D class-by-dimension matrix")
    if kind is NormalizationKind.NONE:
        return mat.copy()
    func = _FUNCS[kind]
    out = np.empty_like(mat)
    for i, row in enumerate(mat):
        try:
            out[i] = func(row)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"class {i}: {exc}") from None
    return out
