"""Linear distillation of branch activations into sub-footprint correlators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..correlators import (
    KernelSpec,
    enumerate_subfootprint_correlators,
    mask_correlator,
    mask_name,
)
from ..spin_models import SpinDataset
from ..tetriscnn import TetrisModel, r2_score


class DegenerateFitWarning(UserWarning):
    """Design matrix was rank deficient; minimum-norm solution returned."""


@dataclass
class LinearFit:
    feature_names: list[str]
    coefficients: np.ndarray  # per feature
    intercept: float
    r2: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        return features @ self.coefficients + self.intercept

    def formula(self, target_name: str = "a") -> str:
        terms = " + ".join(
            f"{c:.6g}*<{n}>" for c, n in zip(self.coefficients, self.feature_names)
        )
        return f"{target_name} = {terms} + {self.intercept:.6g}  (R2 = {self.r2:.4f})"


def least_squares_fit(
    features: np.ndarray, target: np.ndarray, names: list[str]
) -> LinearFit:
    """Ordinary least squares with intercept; minimum-norm when degenerate."""
    X = np.column_stack([features, np.ones(len(target))])
    sol, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        warnings.warn(
            f"rank-deficient design matrix (rank {rank} < {X.shape[1]}); "
            "returning the minimum-norm solution",
            DegenerateFitWarning,
        )
    pred = X @ sol
    return LinearFit(
        feature_names=list(names),
        coefficients=sol[:-1],
        intercept=float(sol[-1]),
        r2=r2_score(pred, target),
    )


def branch_correlator_features(
    dataset: SpinDataset, kernel: KernelSpec
) -> tuple[np.ndarray, list[str]]:
    """Per-sample values of every sub-footprint correlator of one kernel."""
    channels = dataset.geometry[0]
    masks = enumerate_subfootprint_correlators(kernel, channels)
    cols = [
        mask_correlator(dataset.snapshots, m, kernel.dilation, dataset.periodic)
        for m in masks
    ]
    return np.stack(cols, axis=1), [mask_name(kernel, m) for m in masks]


def per_label_means(labels: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group rows by label; returns (grid, means) with means (n_labels, ...)."""
    grid = np.unique(labels)
    means = np.stack([values[labels == u].mean(axis=0) for u in grid])
    return grid, means


def branch_linear_fit(
    model: TetrisModel, dataset: SpinDataset, branch: int
) -> LinearFit:
    """Least-squares fit of per-label mean a_k against per-label mean
    sub-footprint correlators of that branch's kernel."""
    kernel = model.kernels[branch]
    feats, names = branch_correlator_features(dataset, kernel)
    _, acts = model.forward(dataset.snapshots)
    target = acts[:, branch]
    _, feat_means = per_label_means(dataset.labels, feats)
    _, target_means = per_label_means(dataset.labels, target[:, None])
    return least_squares_fit(feat_means, target_means[:, 0], names)
