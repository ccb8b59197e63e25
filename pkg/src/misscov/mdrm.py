"""Minimum-distance-to-Riemannian-mean classification, plain and masked.

Training computes the per-class Fréchet mean of the covariance features;
prediction assigns a query to the class with the nearest mean under the
affine-invariant distance. In the masked variant the class means are
computed by the masked Riemannian mean and queries are compared inside the
subspace selected by their mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, ShapeError
from .masked_mean import Mask, apply_mask, masked_karcher_mean
from .spd import SPDMatrix, air_distance, as_spd, karcher_mean


@dataclass(frozen=True)
class LabeledCovDataset:
    """Covariance features with integer class labels in ``{1..Z}``.

    ``masks``, when given, pairs one channel mask with each item (used by the
    masked training variant).
    """

    items: tuple
    masks: tuple | None = None

    def __post_init__(self):
        items = tuple((as_spd(mat), int(label)) for mat, label in self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise ShapeError("dataset must be non-empty")
        dims = {mat.dim for mat, _ in items}
        if len(dims) != 1:
            raise ShapeError(f"all matrices must share one dimension, got {sorted(dims)}")
        labels = sorted({label for _, label in items})
        if labels != list(range(1, len(labels) + 1)):
            raise ShapeError(f"labels must be contiguous 1..Z, got {labels}")
        if self.masks is not None:
            masks = tuple(self.masks)
            object.__setattr__(self, "masks", masks)
            if len(masks) != len(items):
                raise ShapeError("one mask per item is required")
            if any(not isinstance(m, Mask) for m in masks):
                raise ShapeError("masks must be Mask instances")

    @property
    def n_classes(self) -> int:
        return len({label for _, label in self.items})

    @property
    def dim(self) -> int:
        return self.items[0][0].dim

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([label for _, label in self.items], dtype=int)


@dataclass(frozen=True)
class ClassMeans:
    """Per-class mean covariances, ordered by class label, plus fit diagnostics."""

    labels: tuple[int, ...]
    means: tuple[SPDMatrix, ...]
    fit_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != len(self.means) or len(self.labels) < 2:
            raise ShapeError("at least two classes with one mean each are required")
        if len({m.dim for m in self.means}) != 1:
            raise ShapeError("class means must share one dimension")

    @property
    def dim(self) -> int:
        return self.means[0].dim

    def mean_for(self, label: int) -> SPDMatrix:
        return self.means[self.labels.index(label)]


def mdrm_fit(
    data: LabeledCovDataset,
    masked: bool = False,
    *,
    tol: float | None = None,
    max_iter: int | None = None,
) -> ClassMeans:
    """Per-class Fréchet means of a labeled covariance dataset (uniform weights).

    With ``masked=True`` each class mean is the masked Riemannian mean using
    the dataset's per-item masks. Convergence failures are re-raised with the
    offending class label attached.
    """
    if data.n_classes < 2:
        raise ShapeError("classification needs at least two classes")
    if masked and data.masks is None:
        raise ShapeError("masked fitting requires per-item masks")
    kwargs = {}
    if tol is not None:
        kwargs["tol"] = tol
    if max_iter is not None:
        kwargs["max_iter"] = max_iter
    labels = sorted({label for _, label in data.items})
    means = []
    info = {}
    for z in labels:
        member_idx = [i for i, (_, label) in enumerate(data.items) if label == z]
        mats = [data.items[i][0] for i in member_idx]
        try:
            if masked:
                class_masks = [data.masks[i] for i in member_idx]
                mean, mean_info = masked_karcher_mean(mats, class_masks, return_info=True, **kwargs)
            else:
                mean, mean_info = karcher_mean(mats, return_info=True, **kwargs)
        except ConvergenceError as exc:
            err = ConvergenceError(
                f"class {z}: {exc}",
                last_iterate=exc.last_iterate,
                residual_norm=exc.residual_norm,
            )
            err.class_label = z
            raise err from exc
        means.append(mean)
        info[z] = mean_info
    return ClassMeans(labels=tuple(labels), means=tuple(means), fit_info=info)


def mdrm_distances(sigma, means: ClassMeans, mask: Mask | None = None) -> np.ndarray:
    """Affine-invariant distance from a query to every class mean, in label order.

    With a mask, the class means are reduced to the mask's kept channels and
    the query is compared in that subspace; the query may be given either at
    full size or already reduced.
    """
    query = as_spd(sigma)
    if mask is None:
        if query.dim != means.dim:
            raise ShapeError(f"query dimension {query.dim} does not match means dimension {means.dim}")
        targets: Sequence[SPDMatrix] = means.means
    else:
        if mask.p != means.dim:
            raise ShapeError("mask ambient dimension does not match the class means")
        if query.dim == means.dim:
            query = apply_mask(query, mask)
        elif query.dim != mask.n_kept:
            raise ShapeError(
                f"query dimension {query.dim} matches neither the ambient dimension "
                f"{means.dim} nor the mask's kept count {mask.n_kept}"
            )
        targets = [apply_mask(m, mask) for m in means.means]
    return np.asarray([air_distance(query, t) for t in targets])


def mdrm_predict(sigma, means: ClassMeans, mask: Mask | None = None) -> int:
    """Label of the nearest class mean; ties resolve to the lowest class label."""
    distances = mdrm_distances(sigma, means, mask)
    return int(means.labels[int(np.argmin(distances))])
