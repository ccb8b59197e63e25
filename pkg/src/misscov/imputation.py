"""K-nearest-neighbor imputation under the heterogeneous Euclidean-overlap metric.

Candidates are sample columns pooled from training trials (label-agnostic).
Missing vector coordinates are encoded as NaN at this level; trials convert
to and from their explicit masks at the boundary.
"""

from __future__ import annotations

import math

import numpy as np

from .covariance import Trial
from .errors import NumericInputError, PoolExhaustedError, ShapeError


def heom_distance(x, y, ranges) -> float:
    """Heterogeneous Euclidean-overlap distance between partially observed vectors.

    Per dimension: ``|x_a - y_a| / range_a`` when both coordinates are
    observed, 1 otherwise; the distance is the Euclidean norm of these.
    Missing coordinates are NaN. Totally defined, symmetric, and zero for
    identical fully observed vectors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.asarray(ranges, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or r.shape != x.shape:
        raise ShapeError("vectors and ranges must be 1-d and of equal length")
    if np.any(r <= 0.0) or not np.all(np.isfinite(r)):
        raise NumericInputError("ranges must be positive and finite")
    both = np.isfinite(x) & np.isfinite(y)
    diff = (x[both] - y[both]) / r[both]
    return math.sqrt(float(diff @ diff) + float(x.size - both.sum()))


class NeighborPool:
    """Immutable pool of candidate sample vectors with per-dimension ranges.

    ``candidates`` is ``(m, p)`` with NaN marking unobserved coordinates.
    Ranges are max - min over the observed values of each dimension; any
    dimension with fewer than two distinct observed values gets range 1
    (constant-channel guard).
    """

    __slots__ = ("_candidates", "_observed", "_ranges", "_k")

    def __init__(self, candidates, k: int = 5):
        arr = np.array(candidates, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"candidates must be a non-empty (m, p) matrix, got {arr.shape}")
        if not isinstance(k, int) or k < 1:
            raise NumericInputError(f"k must be a positive integer, got {k!r}")
        observed = np.isfinite(arr)
        ranges = np.ones(arr.shape[1])
        for a in range(arr.shape[1]):
            vals = arr[observed[:, a], a]
            if vals.size >= 2:
                span = float(vals.max() - vals.min())
                if span > 0.0:
                    ranges[a] = span
        arr.flags.writeable = False
        observed.flags.writeable = False
        ranges.flags.writeable = False
        self._candidates = arr
        self._observed = observed
        self._ranges = ranges
        self._k = k

    @classmethod
    def from_trials(cls, trials, k: int = 5) -> "NeighborPool":
        """Pool every sample column of the given trials, preserving trial order."""
        columns = []
        for trial in trials:
            cols = np.where(trial.observed, trial.values, np.nan).T
            columns.append(cols)
        return cls(np.concatenate(columns, axis=0), k=k)

    @property
    def candidates(self) -> np.ndarray:
        return self._candidates

    @property
    def observed(self) -> np.ndarray:
        return self._observed

    @property
    def ranges(self) -> np.ndarray:
        return self._ranges

    @property
    def k(self) -> int:
        return self._k

    @property
    def size(self) -> int:
        return self._candidates.shape[0]

    @property
    def dim(self) -> int:
        return self._candidates.shape[1]


def _distances_to_pool(query, pool):
    """HEOM distances from one NaN-encoded query vector to every pool candidate."""
    both = np.isfinite(query)[None, :] & pool.observed
    with np.errstate(invalid="ignore"):
        diff = np.where(both, (pool.candidates - query[None, :]) / pool.ranges[None, :], 0.0)
    d2 = np.einsum("ij,ij->i", diff, diff) + (query.size - both.sum(axis=1))
    return np.sqrt(d2)


def _impute_value(distances, pool, channel, k):
    usable = np.flatnonzero(pool.observed[:, channel])
    if usable.size < k:
        raise PoolExhaustedError(
            f"channel {channel}: only {usable.size} usable candidates in the pool, need {k}",
            channel=channel,
        )
    du = distances[usable]
    nearest = usable[np.argsort(du, kind="stable")[:k]]
    dn = distances[nearest]
    if dn[0] == 0.0:
        return float(pool.candidates[nearest[0], channel])
    w = 1.0 / dn**2
    w /= w.sum()
    return float(w @ pool.candidates[nearest, channel])


def knn_impute(trial: Trial, pool: NeighborPool) -> Trial:
    """Fill every missing entry of a trial from its nearest pool candidates.

    For each missing entry the K nearest candidates observed at that channel
    (HEOM distance to the sample, ties at the K-th distance broken by lowest
    pool index) are combined with normalized inverse-square-distance weights;
    an exact-distance-zero candidate is copied verbatim. Observed entries are
    never modified; the result is fully observed.
    """
    if pool.dim != trial.n_channels:
        raise ShapeError("pool dimension does not match the trial channel count")
    if trial.fully_observed:
        return trial
    values = trial.values.copy()
    observed = trial.observed
    for j in np.flatnonzero(~observed.all(axis=0)):
        query = np.where(observed[:, j], values[:, j], np.nan)
        distances = _distances_to_pool(query, pool)
        for c in np.flatnonzero(~observed[:, j]):
            values[c, j] = _impute_value(distances, pool, int(c), pool.k)
    return Trial(values)
