"""Transition location from the derivative of a curve over the label grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Curve:
    """Per-label means of some quantity over a strictly increasing grid."""

    x: np.ndarray
    y: np.ndarray
    y_err: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y_err is not None:
            self.y_err = np.asarray(self.y_err, dtype=np.float64)
            if len(self.y_err) != len(self.x):
                raise ValueError("y_err length mismatch")
        if len(self.x) != len(self.y):
            raise ValueError("x and y length mismatch")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("x must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,y,y_err\n")
            err = self.y_err if self.y_err is not None else np.zeros_like(self.x)
            for xi, yi, ei in zip(self.x, self.y, err):
                fh.write(f"{float(xi)!r},{float(yi)!r},{float(ei)!r}\n")


def curve_from_samples(labels: np.ndarray, values: np.ndarray) -> Curve:
    """Group sample values by label: mean and standard error per grid point."""
    labels = np.asarray(labels)
    values = np.asarray(values, dtype=np.float64)
    grid = np.unique(labels)
    means = np.empty_like(grid)
    errs = np.empty_like(grid)
    for i, u in enumerate(grid):
        v = values[labels == u]
        means[i] = v.mean()
        errs[i] = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0
    return Curve(x=grid, y=means, y_err=errs)


@dataclass
class TransitionEstimate:
    location: float
    derivative: Curve


def _smooth3(y: np.ndarray) -> np.ndarray:
    """3-point moving average with replicated edges."""
    padded = np.concatenate([y[:1], y, y[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def transition_location(curve: Curve) -> TransitionEstimate:
    """Argmax of the smoothed |derivative| of a curve on its label grid.

    The derivative uses central differences on the (possibly non-uniform)
    grid; exact ties are resolved to the midpoint of the maximal plateau.
    """
    if len(curve.x) < 5:
        raise ValueError("need at least 5 grid points to locate a transition")
    deriv = np.gradient(curve.y, curve.x)
    smooth = _smooth3(np.abs(deriv))
    peak = smooth.max()
    at_peak = np.flatnonzero(smooth >= peak - 1e-12 * max(1.0, abs(peak)))
    location = 0.5 * (curve.x[at_peak[0]] + curve.x[at_peak[-1]])
    return TransitionEstimate(
        location=float(location), derivative=Curve(x=curve.x.copy(), y=smooth)
    )
