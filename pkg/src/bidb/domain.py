"""Vector types and the elementary vector math used across the package.

Vectors are plain 1-D ``float64`` numpy arrays; the ``as_*`` helpers
validate length and finiteness at module boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EmptyAggregateError

FEATURE_DIM = 2048
EMBEDDING_DIM = 512
ATTRIBUTE_DIM = 30

# Row-major reading of the descriptor table. Three descriptors appear twice;
# each occurrence keeps its own slot so the vocabulary has 30 entries.
DEFAULT_DESCRIPTORS: tuple[str, ...] = (
    "proportioned", "rectangular", "stocky",
    "short legs", "muscular", "average",
    "tall", "sturdy", "big",
    "long legs", "lean", "short torso",
    "pear-shaped", "petite", "broad shoulders",
    "heavy set", "long", "long torso",
    "round (apple)", "built", "fit",
    "skinny", "masculine", "small",
    "pear-shaped", "petite", "broad shoulders",
    "short", "feminine", "curvy",
)


@dataclass(frozen=True)
class DescriptorVocabulary:
    """Ordered descriptor names; position ``i`` is attribute index ``i``."""

    names: tuple[str, ...] = DEFAULT_DESCRIPTORS

    def __post_init__(self):
        if len(self.names) == 0:
            raise DimensionError("descriptor vocabulary must be nonempty")
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return len(self.names)

    def column_names(self) -> list[str]:
        return [f"attr_{i}" for i in range(len(self.names))]


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{name} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise DimensionError(f"{name} has non-finite entries")
    return v


def as_feature(x) -> np.ndarray:
    return as_vector(x, FEATURE_DIM, "feature vector")


def as_embedding(x) -> np.ndarray:
    return as_vector(x, EMBEDDING_DIM, "embedding vector")


def as_attributes(x, vocabulary: DescriptorVocabulary | None = None) -> np.ndarray:
    dim = len(vocabulary) if vocabulary is not None else ATTRIBUTE_DIM
    return as_vector(x, dim, "attribute vector")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.dot(a, b))


def rescale_pow2(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` by a power of two so its largest magnitude lies in [0.5, 1).

    The scaling is exact, so direction is preserved bit for bit; it keeps the
    squared norms used by :func:`cosine` clear of underflow and overflow.
    """
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    if peak == 0.0:
        return v
    _, exp = math.frexp(peak)
    return np.ldexp(v, -exp)


def cosine_prepared(a: np.ndarray, aa: float, b: np.ndarray, bb: float) -> float:
    """Cosine from pow2-rescaled vectors and their squared norms."""
    c = float(np.dot(a, b)) / math.sqrt(aa * bb)
    return min(1.0, max(-1.0, c))


def cosine(a, b) -> float:
    """Cosine similarity clamped to [-1, 1].

    Raises :class:`DegenerateVectorError` when either input has zero norm.
    Computed as ``a.b / sqrt(|a|^2 |b|^2)``, which is exactly 1.0 for
    ``a == b``.
    """
    a, b = _pair(a, b)
    a, b = rescale_pow2(a), rescale_pow2(b)
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return cosine_prepared(a, aa, b, bb)


def mean_vector(vs: Sequence) -> np.ndarray:
    """Elementwise mean with correctly rounded per-coordinate sums.

    ``math.fsum`` is exact up to the final rounding, so the result does not
    depend on the order of ``vs`` at all.
    """
    if len(vs) == 0:
        raise EmptyAggregateError("cannot average an empty list of vectors")
    if isinstance(vs, np.ndarray) and vs.ndim == 2:
        stacked = np.asarray(vs, dtype=np.float64)
        if not np.all(np.isfinite(stacked)):
            raise DimensionError("vectors have non-finite entries")
    else:
        rows = [as_vector(v) for v in vs]
        if len({r.shape[0] for r in rows}) != 1:
            raise DimensionError("vectors must share one length")
        stacked = np.stack(rows)
    n = stacked.shape[0]
    sums = np.array([math.fsum(col) for col in stacked.T.tolist()], dtype=np.float64)
    return sums / n
