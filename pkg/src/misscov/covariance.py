"""Maximum-likelihood covariance estimation for zero-mean Gaussian trials.

Complete trials get the sample covariance matrix (SCM). Trials with
per-sample missing entries get an expectation-maximization estimator: the
E-step fills each sample's second-moment contribution with the conditional
expectations of the missing coordinates given the observed ones, and the
M-step averages those contributions back in original channel order.

Samples sharing a missingness pattern are processed as one group so the
per-iteration work is a handful of dense factorizations and products per
pattern rather than per sample. The grouped reduction is deterministic
(patterns are visited in lexicographic order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, cho_factor, cho_solve, solve_triangular

from .errors import (
    ConditioningError,
    DegenerateEstimateError,
    IncompleteInputError,
    NumericInputError,
    ShapeError,
)
from .spd import SPDMatrix, _spd_values

_LOG_2PI = float(np.log(2.0 * np.pi))

# Ridge policy: whenever an observed-block or final estimate has condition
# number beyond COND_LIMIT (or a nonpositive eigenvalue), add
# ridge * trace/dim on the diagonal.
COND_LIMIT = 1e12
DEFAULT_RIDGE = 1e-9


class Trial:
    """One channels x samples recording segment with an observedness mask.

    ``values`` is a ``(p, n)`` float matrix; ``observed`` a boolean mask of
    the same shape (True = observed). Entries at unobserved positions are
    sentinels and are never read. Every sample column must retain at least
    one observed entry. Both arrays are copied and frozen at construction.
    """

    __slots__ = ("_values", "_observed")

    def __init__(self, values, observed=None):
        vals = np.array(values, dtype=float, order="C")
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ShapeError(f"trial values must be a non-empty 2-d matrix, got shape {vals.shape}")
        if observed is None:
            obs = np.ones(vals.shape, dtype=bool)
        else:
            obs = np.array(observed, dtype=bool, order="C")
            if obs.shape != vals.shape:
                raise ShapeError(f"mask shape {obs.shape} does not match values shape {vals.shape}")
        if not np.all(np.isfinite(vals[obs])):
            raise NumericInputError("trial has non-finite entries at observed positions")
        if not obs.any(axis=0).all():
            j = int(np.flatnonzero(~obs.any(axis=0))[0])
            raise IncompleteInputError(f"sample column {j} is fully missing")
        vals.flags.writeable = False
        obs.flags.writeable = False
        self._values = vals
        self._observed = obs

    @classmethod
    def complete(cls, values) -> "Trial":
        """Trial with every entry observed."""
        return cls(values)

    @classmethod
    def from_nan_values(cls, values) -> "Trial":
        """Trial whose mask is derived from NaN entries in ``values``."""
        vals = np.asarray(values, dtype=float)
        return cls(vals, np.isfinite(vals))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def observed(self) -> np.ndarray:
        return self._observed

    @property
    def n_channels(self) -> int:
        return self._values.shape[0]

    @property
    def n_samples(self) -> int:
        return self._values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self._observed.all())

    def equals(self, other: "Trial") -> bool:
        """Equality of masks and of values at observed positions (sentinels ignored)."""
        return (
            self._values.shape == other._values.shape
            and np.array_equal(self._observed, other._observed)
            and np.array_equal(self._values[self._observed], other._values[other._observed])
        )

    def __repr__(self):
        missing = int((~self._observed).sum())
        return f"Trial(p={self.n_channels}, n={self.n_samples}, missing={missing})"


@dataclass(frozen=True, eq=False)
class SamplePartition:
    """Observed/missing split of one sample, in permuted (observed-first) order.

    ``order`` lists original channel indices, observed ones first then missing
    ones, each block ascending; applying it to the sample stacks
    ``(x^obs, x^mis)``.
    """

    index: int
    order: np.ndarray
    n_observed: int
    x_observed: np.ndarray

    @classmethod
    def from_trial(cls, trial: Trial, index: int) -> "SamplePartition":
        col_obs = trial.observed[:, index]
        obs_idx = np.flatnonzero(col_obs)
        mis_idx = np.flatnonzero(~col_obs)
        order = np.concatenate([obs_idx, mis_idx])
        order.flags.writeable = False
        x_obs = trial.values[obs_idx, index].copy()
        x_obs.flags.writeable = False
        return cls(index=index, order=order, n_observed=obs_idx.size, x_observed=x_obs)


def sample_partitions(trial: Trial) -> list[SamplePartition]:
    """Per-sample partitions of a trial, in sample order."""
    return [SamplePartition.from_trial(trial, i) for i in range(trial.n_samples)]


def _ridged(block, ridge):
    """Apply the ridge policy to a symmetric block; raise if it cannot be fixed."""
    lam = np.linalg.eigvalsh(block)
    if lam[0] > 0.0 and lam[-1] <= COND_LIMIT * lam[0]:
        return block
    fixed = block + (ridge * np.trace(block) / block.shape[0]) * np.eye(block.shape[0])
    if np.linalg.eigvalsh(fixed)[0] <= 0.0:
        raise ConditioningError("block is numerically singular beyond the jitter policy")
    return fixed


def _safe_cholesky(block, ridge):
    try:
        return cholesky(_ridged(block, ridge), lower=True)
    except LinAlgError as exc:
        raise ConditioningError("Cholesky factorization failed beyond the jitter policy") from exc


def _finalize_covariance(s, ridge=DEFAULT_RIDGE) -> SPDMatrix:
    """Turn a symmetric PSD accumulator into a validated SPD estimate (ridge policy)."""
    lam = np.linalg.eigvalsh(s)
    if not np.all(np.isfinite(lam)) or lam[-1] <= 0.0:
        raise DegenerateEstimateError("estimate has no positive spectrum; data are degenerate")
    if lam[0] <= 0.0 or lam[-1] > COND_LIMIT * lam[0]:
        s = s + (ridge * np.trace(s) / s.shape[0]) * np.eye(s.shape[0])
        if np.linalg.eigvalsh(s)[0] <= 0.0:
            raise DegenerateEstimateError("estimate is not positive definite after the ridge policy")
    return SPDMatrix(s)


def scm(trial: Trial, *, ridge: float = DEFAULT_RIDGE) -> SPDMatrix:
    """Sample covariance matrix ``values @ values.T / n`` of a complete trial.

    Raises :class:`~misscov.errors.IncompleteInputError` when any entry is
    missing (use :func:`em_covariance` then). Rank-deficient results are
    lifted to SPD by the ridge policy.
    """
    if not trial.fully_observed:
        raise IncompleteInputError(
            "trial has missing entries; the SCM needs complete data (use em_covariance)"
        )
    return _finalize_covariance(trial.values @ trial.values.T / trial.n_samples, ridge)


def conditional_moments(x, observed, sigma, *, ridge: float = DEFAULT_RIDGE):
    """Conditional mean and second moment of missing coordinates given observed ones.

    For a zero-mean Gaussian with covariance ``sigma`` and a sample observed
    on coordinates ``o`` with values ``x[o]``:

    ``mean_m  = S_mo S_oo^{-1} x^o``
    ``smm     = S_mm - S_mo S_oo^{-1} S_om + mean_m mean_m^T``

    Blocks are taken in observed-first permuted order; outputs are indexed by
    the missing coordinates in ascending original order. With nothing missing
    both outputs are empty.
    """
    x = np.asarray(x, dtype=float)
    obs = np.asarray(observed, dtype=bool)
    s = _spd_values(sigma)
    if x.shape != (s.shape[0],) or obs.shape != x.shape:
        raise ShapeError("sample, mask and covariance dimensions disagree")
    if not obs.any():
        raise IncompleteInputError("at least one coordinate must be observed")
    if not np.all(np.isfinite(x[obs])):
        raise NumericInputError("observed values must be finite")
    if obs.all():
        return np.zeros(0), np.zeros((0, 0))
    o = np.flatnonzero(obs)
    m = np.flatnonzero(~obs)
    s_oo = s[np.ix_(o, o)]
    s_mo = s[np.ix_(m, o)]
    s_mm = s[np.ix_(m, m)]
    try:
        cho = cho_factor(_ridged(s_oo, ridge), lower=True)
    except LinAlgError as exc:
        raise ConditioningError("observed-block solve failed beyond the jitter policy") from exc
    k = cho_solve(cho, s_mo.T).T
    mean_m = k @ x[o]
    cond_cov = s_mm - k @ s_mo.T
    cond_cov = (cond_cov + cond_cov.T) / 2.0
    return mean_m, cond_cov + np.outer(mean_m, mean_m)


def estep_B(partition: SamplePartition, sigma, *, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-sample second-moment contribution, in the partition's permuted order.

    Blocks: ``x^o x^oT`` (observed), the cross terms ``x^o mean_m^T`` /
    ``mean_m x^oT``, and the conditional second moment of the missing part.
    The result is symmetric by construction.
    """
    s = _spd_values(sigma)
    p = s.shape[0]
    if partition.order.shape != (p,):
        raise ShapeError("partition and covariance dimensions disagree")
    q = partition.n_observed
    x_o = partition.x_observed
    b = np.empty((p, p))
    b[:q, :q] = np.outer(x_o, x_o)
    if q == p:
        return b
    x_full = np.zeros(p)
    obs_mask = np.zeros(p, dtype=bool)
    x_full[partition.order[:q]] = x_o
    obs_mask[partition.order[:q]] = True
    mean_m, smm = conditional_moments(x_full, obs_mask, sigma, ridge=ridge)
    cross = np.outer(x_o, mean_m)
    b[:q, q:] = cross
    b[q:, :q] = cross.T
    b[q:, q:] = smm
    return b


def mstep(partitions, b_list, *, ridge: float = DEFAULT_RIDGE) -> SPDMatrix:
    """Average the per-sample contributions back in original channel order.

    Each ``B_i`` (permuted order) is scattered through the inverse of its
    partition's permutation and the sum is divided by the sample count.
    """
    if len(partitions) != len(b_list) or not partitions:
        raise ShapeError("one contribution per sample is required")
    p = partitions[0].order.size
    s = np.zeros((p, p))
    for part, b in zip(partitions, b_list):
        b = np.asarray(b, dtype=float)
        if b.shape != (p, p):
            raise ShapeError("contribution shape disagrees with the partition dimension")
        s[np.ix_(part.order, part.order)] += b
    return _finalize_covariance(s / len(partitions), ridge)


@dataclass(frozen=True)
class _PatternGroup:
    obs: np.ndarray
    mis: np.ndarray
    cols: np.ndarray


def _pattern_groups(observed) -> list[_PatternGroup]:
    patterns, inverse = np.unique(observed.T, axis=0, return_inverse=True)
    groups = []
    for g in range(patterns.shape[0]):
        groups.append(
            _PatternGroup(
                obs=np.flatnonzero(patterns[g]),
                mis=np.flatnonzero(~patterns[g]),
                cols=np.flatnonzero(inverse == g),
            )
        )
    return groups


def _group_observed_values(values, group):
    p, n = values.shape
    if group.obs.size == p and group.cols.size == n:
        return values
    return values[np.ix_(group.obs, group.cols)]


def _em_update(values, groups, sigma, ridge):
    """One E+M step: expected second moments under ``sigma``, averaged."""
    p, n = values.shape
    s = np.zeros((p, p))
    for grp in groups:
        x_o = _group_observed_values(values, grp)
        s_obs = x_o @ x_o.T
        if grp.mis.size == 0:
            s[np.ix_(grp.obs, grp.obs)] += s_obs
            continue
        s_oo = sigma[np.ix_(grp.obs, grp.obs)]
        s_mo = sigma[np.ix_(grp.mis, grp.obs)]
        s_mm = sigma[np.ix_(grp.mis, grp.mis)]
        try:
            cho = cho_factor(_ridged(s_oo, ridge), lower=True)
        except LinAlgError as exc:
            raise ConditioningError("observed-block solve failed beyond the jitter policy") from exc
        k = cho_solve(cho, s_mo.T).T
        cond_cov = s_mm - k @ s_mo.T
        cond_cov = (cond_cov + cond_cov.T) / 2.0
        mu = k @ x_o
        cross = mu @ x_o.T
        s[np.ix_(grp.obs, grp.obs)] += s_obs
        s[np.ix_(grp.mis, grp.obs)] += cross
        s[np.ix_(grp.obs, grp.mis)] += cross.T
        s[np.ix_(grp.mis, grp.mis)] += grp.cols.size * cond_cov + mu @ mu.T
    return s / n


def _grouped_loglik(values, groups, sigma, ridge):
    total = 0.0
    for grp in groups:
        x_o = _group_observed_values(values, grp)
        q = grp.obs.size
        lo = _safe_cholesky(sigma[np.ix_(grp.obs, grp.obs)], ridge)
        logdet = 2.0 * float(np.sum(np.log(np.diag(lo))))
        z = solve_triangular(lo, x_o, lower=True)
        quad = float(np.sum(z * z))
        total += -0.5 * (grp.cols.size * (q * _LOG_2PI + logdet) + quad)
    return float(total)


def observed_loglik(trial: Trial, sigma, *, ridge: float = DEFAULT_RIDGE) -> float:
    """Observed-data Gaussian log-likelihood of a trial under ``sigma``.

    Sums, over samples, the zero-mean Gaussian log-density of the observed
    sub-vector under the matching principal block of ``sigma`` (constants
    included). This marginalizes the complete-data likelihood over the
    missing coordinates and is the ascent quantity of :func:`em_covariance`.
    """
    s = _spd_values(sigma)
    if s.shape[0] != trial.n_channels:
        raise ShapeError("covariance dimension does not match the trial channel count")
    return _grouped_loglik(trial.values, _pattern_groups(trial.observed), s, ridge)


def _pairwise_available(values, observed):
    """Covariance from pairwise-complete samples; unit variance for unseen channels."""
    p, _ = values.shape
    filled = np.where(observed, values, 0.0)
    counts = observed.astype(float) @ observed.astype(float).T
    sums = filled @ filled.T
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(counts > 0.0, sums / np.maximum(counts, 1.0), 0.0)
    never = ~observed.any(axis=1)
    est[never, :] = 0.0
    est[:, never] = 0.0
    est[never, never] = 1.0
    return est


def _clip_to_spd(s, floor_ratio=1e-6):
    w, v = np.linalg.eigh(s)
    if w[-1] <= 0.0:
        raise DegenerateEstimateError("initialization matrix has no positive spectrum")
    w = np.maximum(w, floor_ratio * w[-1])
    return (v * w) @ v.T


def _initial_sigma(values, observed, ridge):
    """EM initialization: SCM of fully observed columns when at least p exist,
    otherwise the pairwise-available covariance clipped to SPD."""
    p, n = values.shape
    full_cols = np.flatnonzero(observed.all(axis=0))
    if full_cols.size >= p:
        x = values if full_cols.size == n else values[:, full_cols]
        return x @ x.T / full_cols.size
    return _clip_to_spd(_pairwise_available(values, observed))


@dataclass
class EMResult:
    """Outcome of :func:`em_covariance`.

    ``delta_history`` holds the relative Frobenius change of the estimate at
    each iteration (the convergence-monitored quantity); ``loglik_history``
    the observed-data log-likelihood at the initializer and after every
    update, so it has one more entry than ``delta_history``.
    """

    sigma: SPDMatrix
    iterations: int
    converged: bool
    delta_history: list[float]
    loglik_history: list[float]


def em_covariance(
    trial: Trial,
    *,
    tol: float = 1e-6,
    max_iter: int = 100,
    ridge: float = DEFAULT_RIDGE,
) -> EMResult:
    """Covariance of a trial with missing entries, by expectation-maximization.

    Alternates conditional-expectation of the missing coordinates (given the
    current estimate) with the closed-form averaged update, starting from the
    SCM of fully observed columns (or a pairwise-available fallback), until
    the relative Frobenius change drops to ``tol`` or ``max_iter`` is hit.
    The observed-data log-likelihood is non-decreasing along the iterates.

    On a fully observed trial the E-step degenerates and the estimate equals
    :func:`scm` exactly after one iteration.
    """
    values = trial.values
    groups = _pattern_groups(trial.observed)
    if trial.fully_observed:
        s = values @ values.T / trial.n_samples
        ll = _grouped_loglik(values, groups, s, ridge)
        return EMResult(
            sigma=_finalize_covariance(s, ridge),
            iterations=1,
            converged=True,
            delta_history=[0.0],
            loglik_history=[ll, ll],
        )
    sigma = _initial_sigma(values, trial.observed, ridge)
    deltas: list[float] = []
    logliks = [_grouped_loglik(values, groups, sigma, ridge)]
    converged = False
    for _ in range(max_iter):
        new = _em_update(values, groups, sigma, ridge)
        denom = np.linalg.norm(sigma)
        delta = float(np.linalg.norm(new - sigma) / denom) if denom > 0.0 else np.inf
        deltas.append(delta)
        logliks.append(_grouped_loglik(values, groups, new, ridge))
        sigma = new
        if delta <= tol:
            converged = True
            break
    return EMResult(
        sigma=_finalize_covariance(sigma, ridge),
        iterations=len(deltas),
        converged=converged,
        delta_history=deltas,
        loglik_history=logliks,
    )
