"""Affine-invariant geometry of symmetric positive-definite matrices.

Matrix functions (square root, logarithm, exponential) go through the
symmetric eigendecomposition with the scalar function mapped over the
eigenvalues, which is exact for symmetric input. On top of these the module
provides the affine-invariant distance and weighted Fréchet (Karcher) means
computed by tangent-space fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConditioningError,
    ConvergenceError,
    NotPositiveDefiniteError,
    NumericInputError,
    ShapeError,
)

# Construction rejects asymmetry above this relative level instead of silently
# symmetrizing, so upstream numerical bugs surface early.
REL_ASYMMETRY_LIMIT = 1e-8


def _validated_symmetric(values, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericInputError(f"{name} contains non-finite entries")
    asym = np.abs(arr - arr.T).max(initial=0.0)
    scale = max(np.abs(arr).max(initial=0.0), 1.0)
    if asym > REL_ASYMMETRY_LIMIT * scale:
        raise NumericInputError(
            f"{name} is asymmetric beyond tolerance (max |A - A^T| = {asym:.3e})"
        )
    sym = (arr + arr.T) / 2.0
    sym.flags.writeable = False
    return sym


class SymmetricMatrix:
    """Real symmetric matrix, not necessarily definite (tangent vectors, matrix logs)."""

    __slots__ = ("_values",)

    def __init__(self, values):
        self._values = _validated_symmetric(values, "symmetric matrix")

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._values, dtype=dtype)

    def __repr__(self):
        return f"SymmetricMatrix(dim={self.dim})"


class SPDMatrix:
    """Validated symmetric positive-definite matrix.

    Construction symmetrizes via (A + A^T)/2, rejects asymmetry above
    ``REL_ASYMMETRY_LIMIT`` (relative) and rejects any matrix whose smallest
    eigenvalue is not strictly positive. Values are immutable after
    construction and safe to share across threads.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        sym = _validated_symmetric(values, "SPD matrix")
        if np.linalg.eigvalsh(sym)[0] <= 0.0:
            raise NotPositiveDefiniteError("matrix is not positive definite")
        self._values = sym

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._values, dtype=dtype)

    def __repr__(self):
        return f"SPDMatrix(dim={self.dim})"


def as_spd(x) -> SPDMatrix:
    """Coerce an array-like to a validated :class:`SPDMatrix` (no-op if already one)."""
    return x if isinstance(x, SPDMatrix) else SPDMatrix(x)


def _spd_values(x) -> np.ndarray:
    return x.values if isinstance(x, SPDMatrix) else SPDMatrix(x).values


def _sym(a):
    return (a + a.swapaxes(-1, -2)) / 2.0


def _eig_apply(a, fn):
    # a assumed symmetric; exact symmetry of the result is restored afterwards
    # because (V*f(w)) @ V.T rounds asymmetrically.
    w, v = np.linalg.eigh(a)
    return _sym((v * fn(w)) @ v.T)


def _sqrt_invsqrt(a):
    """Square root and inverse square root of a raw SPD array, in one decomposition."""
    w, v = np.linalg.eigh(a)
    if w[0] <= 0.0:
        raise ConditioningError("matrix is not positive definite within working precision")
    s = np.sqrt(w)
    return _sym((v * s) @ v.T), _sym((v / s) @ v.T)


def _expm_sym(a):
    return _eig_apply(a, np.exp)


def spd_sqrt(sigma) -> SPDMatrix:
    """Principal matrix square root S with S @ S = sigma."""
    return SPDMatrix(_eig_apply(_spd_values(sigma), np.sqrt))


def spd_invsqrt(sigma) -> SPDMatrix:
    """Inverse square root S with S @ sigma @ S = identity."""
    return SPDMatrix(_eig_apply(_spd_values(sigma), lambda w: 1.0 / np.sqrt(w)))


def spd_log(sigma) -> SymmetricMatrix:
    """Matrix logarithm of an SPD matrix (a symmetric, possibly indefinite matrix)."""
    return SymmetricMatrix(_eig_apply(_spd_values(sigma), np.log))


def spd_exp(s) -> SPDMatrix:
    """Matrix exponential of a symmetric matrix; inverse of :func:`spd_log`."""
    values = s.values if isinstance(s, SymmetricMatrix) else _validated_symmetric(s, "symmetric matrix")
    return SPDMatrix(_eig_apply(values, np.exp))


def air_distance(sigma1, sigma2) -> float:
    """Affine-invariant Riemannian distance between two SPD matrices.

    Parameters
    ----------
    sigma1, sigma2 : SPDMatrix or array-like
        SPD matrices of equal dimension.

    Returns
    -------
    float
        ``||log(sigma1^{-1/2} sigma2 sigma1^{-1/2})||_F``. Symmetric in its
        arguments, zero iff the inputs are equal, and invariant under
        congruence ``S -> A S A^T`` for any invertible ``A``.
    """
    a = _spd_values(sigma1)
    b = _spd_values(sigma2)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 0.0
    _, isq = _sqrt_invsqrt(a)
    w = np.linalg.eigvalsh(_sym(isq @ b @ isq))
    if w[0] <= 0.0:
        raise ConditioningError("whitened matrix is not positive definite within working precision")
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


@dataclass(frozen=True)
class MeanInfo:
    """Convergence diagnostics of a mean computation."""

    iterations: int
    residual_norm: float


def _stack_and_weights(mats, weights):
    if len(mats) == 0:
        raise ShapeError("mean of an empty collection is undefined")
    stack = np.stack([_spd_values(m) for m in mats])
    if stack.shape[-1] != stack.shape[-2] or len({m.shape for m in stack}) != 1:
        raise ShapeError("matrices must share one square shape")
    if weights is None:
        w = np.full(len(mats), 1.0 / len(mats))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(mats),):
            raise ShapeError("one weight per matrix is required")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise NumericInputError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise NumericInputError(f"weights must sum to 1, got {w.sum()!r}")
    return stack, w / w.sum()


def _tangent_residual(g, stack, w):
    """Weighted tangent-space residual T = sum_i w_i log(g^-1/2 S_i g^-1/2) at g."""
    gs, gis = _sqrt_invsqrt(g)
    y = _sym(gis @ stack @ gis)
    ew, ev = np.linalg.eigh(y)
    if ew[..., 0].min() <= 0.0:
        raise ConditioningError("an input matrix is numerically singular relative to the iterate")
    logs = (ev * np.log(ew)[..., None, :]) @ ev.swapaxes(-1, -2)
    t = _sym(np.einsum("i,ijk->jk", w, logs))
    return float(np.linalg.norm(t)), t, gs


def karcher_mean(
    mats: Sequence,
    weights=None,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
    step: float = 1.0,
    return_info: bool = False,
):
    """Weighted Fréchet mean of SPD matrices under the affine-invariant distance.

    Starting from the weighted arithmetic mean, iterates
    ``G <- G^{1/2} exp(step * T) G^{1/2}`` with the weighted tangent residual
    ``T = sum_i w_i log(G^{-1/2} S_i G^{-1/2})`` until ``||T||_F <= tol``.
    The step is halved whenever a candidate increases the residual.

    Parameters
    ----------
    mats : sequence of SPDMatrix or array-like
        Matrices to average, equal dimensions.
    weights : sequence of float, optional
        Nonnegative, summing to 1. Uniform when omitted.
    tol : float
        Tolerance on the Frobenius norm of the tangent residual.
    max_iter : int
        Cap on candidate evaluations before raising
        :class:`~misscov.errors.ConvergenceError`.
    step : float
        Initial step size of the fixed-point update.
    return_info : bool
        Also return a :class:`MeanInfo` with iteration count and final residual.
    """
    stack, w = _stack_and_weights(mats, weights)
    g = np.einsum("i,ijk->jk", w, stack)
    res, t, gs = _tangent_residual(g, stack, w)
    iterations = 0
    st = float(step)
    while res > tol:
        if iterations >= max_iter:
            raise ConvergenceError(
                f"Karcher mean did not converge in {max_iter} iterations "
                f"(residual {res:.3e}, tol {tol:.3e})",
                last_iterate=g,
                residual_norm=res,
            )
        cand = _sym(gs @ _expm_sym(st * t) @ gs)
        iterations += 1
        res_c, t_c, gs_c = _tangent_residual(cand, stack, w)
        if res_c >= res:
            st *= 0.5
            continue
        g, res, t, gs = cand, res_c, t_c, gs_c
    result = SPDMatrix(g)
    if return_info:
        return result, MeanInfo(iterations=iterations, residual_norm=res)
    return result
