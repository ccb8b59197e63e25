"""Channel-selection masks and the Riemannian mean of partially observed covariances.

A mask is the identity with the columns of the missing channels removed;
applying it to a covariance extracts the principal submatrix on the kept
channels. The masked mean of a set of (submatrix, mask) observations is the
full-size SPD matrix minimizing

    f(S) = 1/2 * sum_i w_i * d_AF(C_i, M_i^T S M_i)^2

where ``C_i`` is the i-th observed submatrix and ``d_AF`` the
affine-invariant distance. The minimization runs Riemannian gradient descent
on the SPD manifold: analytic Euclidean gradient scattered through the masks,
metric correction, geodesic retraction, Armijo backtracking. Terms sharing a
mask are processed with batched eigendecompositions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConditioningError,
    ConvergenceError,
    EmptyMaskError,
    NumericInputError,
    ShapeError,
    UnidentifiableChannelError,
)
from .spd import SPDMatrix, _expm_sym, _spd_values, _sqrt_invsqrt, _stack_and_weights, _sym

ARMIJO_SLOPE = 1e-4
ARMIJO_SHRINK = 0.5
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class Mask:
    """Ordered selection of retained channel indices out of ``p``.

    As a matrix this is the ``p x p`` identity with the columns of the
    missing channels removed.
    """

    p: int
    kept: tuple[int, ...]

    def __post_init__(self):
        if self.p < 1:
            raise ShapeError(f"ambient dimension must be positive, got {self.p}")
        kept = tuple(int(i) for i in self.kept)
        object.__setattr__(self, "kept", kept)
        if any(i < 0 or i >= self.p for i in kept):
            raise ShapeError(f"kept indices must lie in [0, {self.p}), got {kept}")
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise ShapeError("kept indices must be strictly increasing")

    @classmethod
    def full(cls, p: int) -> "Mask":
        return cls(p, tuple(range(p)))

    @classmethod
    def from_channel_flags(cls, flags) -> "Mask":
        """Mask keeping the channels flagged True."""
        flags = np.asarray(flags, dtype=bool)
        return cls(flags.size, tuple(int(i) for i in np.flatnonzero(flags)))

    @property
    def n_kept(self) -> int:
        return len(self.kept)

    @property
    def r(self) -> int:
        """Number of removed channels."""
        return self.p - len(self.kept)

    @property
    def is_full(self) -> bool:
        return len(self.kept) == self.p

    def matrix(self) -> np.ndarray:
        return np.eye(self.p)[:, list(self.kept)]


def apply_mask(sigma, mask: Mask) -> SPDMatrix:
    """Principal submatrix of ``sigma`` on the mask's kept channels (``M^T S M``)."""
    s = _spd_values(sigma)
    if s.shape[0] != mask.p:
        raise ShapeError(f"mask ambient dimension {mask.p} does not match matrix dimension {s.shape[0]}")
    if mask.n_kept == 0:
        raise EmptyMaskError("mask retains no channel")
    if mask.is_full:
        return SPDMatrix(s)
    idx = list(mask.kept)
    return SPDMatrix(s[np.ix_(idx, idx)])


def embed_masked(block, mask: Mask) -> SPDMatrix:
    """Full-size SPD matrix whose kept-channel block is ``block`` and whose
    complement is the identity (those entries are ignored by masked operations)."""
    b = _spd_values(block)
    if b.shape[0] != mask.n_kept:
        raise ShapeError("block dimension does not match the mask's kept channel count")
    full = np.eye(mask.p)
    full[np.ix_(list(mask.kept), list(mask.kept))] = b
    return SPDMatrix(full)


@dataclass(frozen=True)
class MaskedMeanInfo:
    """Convergence diagnostics of a masked mean computation."""

    iterations: int
    grad_norm: float
    objective: float
    objective_history: tuple[float, ...]


@dataclass(frozen=True)
class _MaskGroup:
    kept: np.ndarray
    blocks: np.ndarray      # (m, q, q) observed submatrices
    inv_sqrts: np.ndarray   # (m, q, q) their inverse square roots
    weights: np.ndarray


def _group_terms(blocks, masks, weights):
    by_mask: dict[tuple[int, ...], list[int]] = {}
    for i, mask in enumerate(masks):
        by_mask.setdefault(mask.kept, []).append(i)
    groups = []
    for kept in sorted(by_mask):
        idx = by_mask[kept]
        stack = np.stack([blocks[i] for i in idx])
        ew, ev = np.linalg.eigh(stack)
        if ew[..., 0].min() <= 0.0:
            raise ConditioningError("an observed submatrix is numerically singular")
        inv_sqrts = (ev / np.sqrt(ew)[..., None, :]) @ ev.swapaxes(-1, -2)
        groups.append(
            _MaskGroup(
                kept=np.asarray(kept, dtype=int),
                blocks=stack,
                inv_sqrts=_sym(inv_sqrts),
                weights=np.asarray([weights[i] for i in idx]),
            )
        )
    return groups


def _whitened_eigh(group, s):
    sub = s[np.ix_(group.kept, group.kept)]
    w = _sym(group.inv_sqrts @ sub @ group.inv_sqrts)
    ew, ev = np.linalg.eigh(w)
    if ew[..., 0].min() <= 0.0:
        raise ConditioningError("iterate became numerically singular on a masked block")
    return ew, ev


def _objective(groups, s):
    total = 0.0
    for grp in groups:
        sub = s[np.ix_(grp.kept, grp.kept)]
        w = _sym(grp.inv_sqrts @ sub @ grp.inv_sqrts)
        ew = np.linalg.eigvalsh(w)
        if ew[..., 0].min() <= 0.0:
            raise ConditioningError("iterate became numerically singular on a masked block")
        total += 0.5 * float(grp.weights @ np.sum(np.log(ew) ** 2, axis=-1))
    return total


def _objective_and_gradient(groups, s, p):
    """Objective value and symmetric Euclidean gradient at ``s``.

    Per term, with R the inverse square root of the observed block and
    W = R (M^T S M) R: the gradient of half the squared distance with respect
    to the submatrix is R W^{-1} log(W) R, scattered into the kept positions.
    """
    total = 0.0
    grad = np.zeros((p, p))
    for grp in groups:
        ew, ev = _whitened_eigh(grp, s)
        logw = np.log(ew)
        total += 0.5 * float(grp.weights @ np.sum(logw**2, axis=-1))
        core = (ev * (logw / ew)[..., None, :]) @ ev.swapaxes(-1, -2)
        terms = grp.inv_sqrts @ core @ grp.inv_sqrts
        grad[np.ix_(grp.kept, grp.kept)] += np.einsum("i,ijk->jk", grp.weights, terms)
    return total, _sym(grad)


def _pairwise_init(blocks, masks, weights, p):
    num = np.zeros((p, p))
    den = np.zeros((p, p))
    for block, mask, w in zip(blocks, masks, weights):
        idx = np.ix_(list(mask.kept), list(mask.kept))
        num[idx] += w * block
        den[idx] += w
    init = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    w, v = np.linalg.eigh(_sym(init))
    w = np.maximum(w, 1e-6 * max(w[-1], np.finfo(float).tiny))
    return _sym((v * w) @ v.T)


def _masked_mean_engine(blocks, masks, weights, p, tol, max_iter):
    covered = np.zeros(p, dtype=bool)
    for mask in masks:
        covered[list(mask.kept)] = True
    if not covered.all():
        missing = np.flatnonzero(~covered).tolist()
        raise UnidentifiableChannelError(f"channels {missing} are kept by no mask")
    groups = _group_terms(blocks, masks, weights)
    s = _pairwise_init(blocks, masks, weights, p)
    f, grad = _objective_and_gradient(groups, s, p)
    history = [f]
    iterations = 0
    while True:
        gs, gis = _sqrt_invsqrt(s)
        direction = _sym(gs @ grad @ gs)
        gn = float(np.linalg.norm(direction))
        if gn <= tol:
            return s, MaskedMeanInfo(iterations, gn, f, tuple(history))
        if iterations >= max_iter:
            raise ConvergenceError(
                f"masked mean did not converge in {max_iter} iterations "
                f"(gradient norm {gn:.3e}, tol {tol:.3e})",
                last_iterate=s,
                residual_norm=gn,
            )
        step = 1.0
        for _ in range(_MAX_BACKTRACKS):
            cand = _sym(gs @ _expm_sym(-step * direction) @ gs)
            f_cand = _objective(groups, cand)
            if f_cand <= f - ARMIJO_SLOPE * step * gn**2:
                break
            step *= ARMIJO_SHRINK
        else:
            raise ConvergenceError(
                "backtracking found no descent step; gradient norm "
                f"{gn:.3e} at objective {f:.6e}",
                last_iterate=s,
                residual_norm=gn,
            )
        s = cand
        f, grad = _objective_and_gradient(groups, s, p)
        history.append(f)
        iterations += 1


def _check_masks(masks, n_terms, p=None):
    if len(masks) != n_terms:
        raise ShapeError("one mask per matrix is required")
    for mask in masks:
        if not isinstance(mask, Mask):
            raise ShapeError("masks must be Mask instances")
        if mask.n_kept == 0:
            raise EmptyMaskError("every mask must keep at least one channel")
        if p is not None and mask.p != p:
            raise ShapeError("all masks must share the ambient dimension of the matrices")
    if len({m.p for m in masks}) != 1:
        raise ShapeError("all masks must share one ambient dimension")


def masked_karcher_mean(
    mats,
    masks,
    weights=None,
    *,
    tol: float = 1e-6,
    max_iter: int = 200,
    return_info: bool = False,
):
    """Riemannian mean of full-size SPD matrices observed through channel masks.

    Minimizes the weighted sum of squared affine-invariant distances between
    each matrix's kept-channel block and the corresponding block of the mean,
    over full-size SPD matrices. Returns the stationary point found (gradient
    norm at most ``tol`` in the manifold metric). Every channel must be kept
    by at least one mask. With all masks full this coincides with
    :func:`misscov.spd.karcher_mean`.

    With ``return_info=True`` also returns a :class:`MaskedMeanInfo` carrying
    the final objective value and the per-iteration objective history (which
    is non-increasing).
    """
    stack, w = _stack_and_weights(mats, weights)
    p = stack.shape[-1]
    _check_masks(list(masks), stack.shape[0], p)
    blocks = []
    for full, mask in zip(stack, masks):
        idx = list(mask.kept)
        blocks.append(full if mask.is_full else full[np.ix_(idx, idx)])
    s, info = _masked_mean_engine(blocks, list(masks), w, p, tol, max_iter)
    result = SPDMatrix(s)
    if return_info:
        return result, info
    return result


def masked_karcher_mean_from_submatrices(
    blocks,
    masks,
    weights=None,
    *,
    tol: float = 1e-6,
    max_iter: int = 200,
    return_info: bool = False,
):
    """Same as :func:`masked_karcher_mean`, from the observed submatrices directly.

    ``blocks[i]`` must be SPD of dimension ``masks[i].n_kept``; the ambient
    dimension is taken from the masks.
    """
    masks = list(masks)
    _check_masks(masks, len(blocks))
    p = masks[0].p
    raw = []
    for block, mask in zip(blocks, masks):
        b = _spd_values(block)
        if b.shape[0] != mask.n_kept:
            raise ShapeError("block dimension does not match its mask's kept channel count")
        raw.append(b)
    if weights is None:
        w = np.full(len(raw), 1.0 / len(raw))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(raw),):
            raise ShapeError("one weight per block is required")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise NumericInputError("weights must be nonnegative and sum to 1")
        w = w / w.sum()
    s, info = _masked_mean_engine(raw, masks, w, p, tol, max_iter)
    result = SPDMatrix(s)
    if return_info:
        return result, info
    return result


def masked_mean_objective(sigma, mats, masks, weights=None) -> float:
    """Objective value of the masked-mean problem at a candidate ``sigma``.

    Useful for reporting the quality of a returned stationary point and for
    derivative checks.
    """
    stack, w = _stack_and_weights(mats, weights)
    p = stack.shape[-1]
    _check_masks(list(masks), stack.shape[0], p)
    blocks = []
    for full, mask in zip(stack, masks):
        idx = list(mask.kept)
        blocks.append(full if mask.is_full else full[np.ix_(idx, idx)])
    groups = _group_terms(blocks, list(masks), w)
    return _objective(groups, _spd_values(sigma))
