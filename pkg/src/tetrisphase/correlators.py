"""Lattice-averaged spin correlators for arbitrary kernel footprints.

A kernel of shape (d1, d2) with dilation d spans d1 cells along the chain /
width axis and d2 along the height axis, with (d - 1) skipped lattice sites
between consecutive cells.  A correlator is defined by a mask: a set of
participating footprint cells (channel, dy, dx).  Its value on a snapshot is
the mean over anchor positions of the product of the spins under the mask —
periodic wrap for wrapped lattices (IGT), valid-only anchors for open chains.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .spin_models.dataset import SpinDataset

MAX_FOOTPRINT_CELLS = 25

Cell = tuple[int, int, int]  # (channel, dy, dx) in footprint units
Mask = tuple[Cell, ...]


class FootprintError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """A convolution footprint: d1 cells along the chain axis, d2 across.

    The printable label follows the "[(d1, d2), dilation]" convention.  For
    1D data d2 must be 1.
    """

    d1: int
    d2: int = 1
    dilation: int = 1

    def __post_init__(self):
        if self.d1 * self.d2 < 1 or self.d1 < 1 or self.d2 < 1:
            raise ValueError("kernel dimensions must be positive")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    @property
    def label(self) -> str:
        return f"[({self.d1}, {self.d2}), {self.dilation}]"

    @property
    def span(self) -> tuple[int, int]:
        """Dilated extent (rows, cols) on the lattice."""
        return (
            self.dilation * (self.d2 - 1) + 1,
            self.dilation * (self.d1 - 1) + 1,
        )

    def cells(self, channels: int = 1) -> Mask:
        """All footprint cells, channel-major then row-major."""
        return tuple(
            (c, dy, dx)
            for c in range(channels)
            for dy in range(self.d2)
            for dx in range(self.d1)
        )

    @staticmethod
    def parse(label) -> "KernelSpec":
        """Accepts [d1, d2, dilation] triples or "[(d1, d2), dilation]" text."""
        if isinstance(label, KernelSpec):
            return label
        if isinstance(label, str):
            digits = [int(t) for t in "".join(
                ch if ch.isdigit() else " " for ch in label
            ).split()]
            if len(digits) != 3:
                raise ValueError(f"cannot parse kernel label {label!r}")
            return KernelSpec(*digits)
        return KernelSpec(*label)


@dataclass(frozen=True)
class CorrelatorValue:
    kernel: KernelSpec
    mask: Mask
    value: float


def canonical_mask(mask) -> Mask:
    """Shift a mask so its minimal spatial offsets are zero, then sort.

    Two masks that differ by a lattice translation measure the same averaged
    correlator, so they canonicalize identically.
    """
    cells = tuple(mask)
    if not cells:
        raise ValueError("mask must be non-empty")
    dy0 = min(c[1] for c in cells)
    dx0 = min(c[2] for c in cells)
    return tuple(sorted((c, dy - dy0, dx - dx0) for c, dy, dx in cells))


def enumerate_subfootprint_correlators(kernel: KernelSpec, channels: int = 1) -> list[Mask]:
    """All non-empty footprint-cell subsets, deduplicated under translation.

    Ordered by cell count, then lexicographically.
    """
    cells = kernel.cells(channels)
    if len(cells) > MAX_FOOTPRINT_CELLS:
        raise FootprintError(
            f"footprint has {len(cells)} cells, cap is {MAX_FOOTPRINT_CELLS}"
        )
    seen = set()
    masks = []
    for r in range(1, len(cells) + 1):
        for subset in itertools.combinations(cells, r):
            canon = canonical_mask(subset)
            if canon not in seen:
                seen.add(canon)
                masks.append(canon)
    masks.sort(key=lambda m: (len(m), m))
    return masks


def mask_correlator(
    snapshots: np.ndarray, mask, dilation: int = 1, periodic: bool = False
) -> np.ndarray:
    """Per-sample correlator values for a batch of snapshots (n, C, H, W)."""
    snaps = np.asarray(snapshots, dtype=np.float64)
    if snaps.ndim == 3:
        snaps = snaps[None]
    n, C, H, W = snaps.shape
    offs = [(c, dy * dilation, dx * dilation) for c, dy, dx in mask]
    span_y = max(dy for _, dy, _ in offs) + 1
    span_x = max(dx for _, _, dx in offs) + 1
    if span_y > H or span_x > W:
        raise FootprintError(
            f"mask span ({span_y}, {span_x}) exceeds lattice ({H}, {W})"
        )
    if periodic:
        prod = np.ones((n, H, W))
        for c, dy, dx in offs:
            prod *= np.roll(snaps[:, c], shift=(-dy, -dx), axis=(1, 2))
    else:
        hh, ww = H - span_y + 1, W - span_x + 1
        prod = np.ones((n, hh, ww))
        for c, dy, dx in offs:
            prod *= snaps[:, c, dy : dy + hh, dx : dx + ww]
    return prod.mean(axis=(1, 2))


def full_footprint_correlator(
    snapshot: np.ndarray, kernel: KernelSpec, periodic: bool = False
) -> float | np.ndarray:
    """Mean product over every cell of the dilated footprint (all channels)."""
    snap = np.asarray(snapshot)
    single = snap.ndim == 3
    if single:
        snap = snap[None]
    channels = snap.shape[1]
    vals = mask_correlator(snap, kernel.cells(channels), kernel.dilation, periodic)
    return float(vals[0]) if single else vals


# the four-link plaquette product h[i, j]*h[i+1, j]*v[i, j]*v[i, j+1] as a
# mask of the two-channel (2, 2) footprint.  This is the unique four-cell
# sub-footprint that forms a closed loop on the lattice, so it is the only
# one invariant under gauge transformations; every open four-link product
# (e.g. the star of links meeting at a vertex) averages to zero in a
# gauge-symmetrized ensemble.
VERTEX_MASK: Mask = ((0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 0, 1))


def vertex_correlator(snapshots: np.ndarray) -> np.ndarray:
    """Per-sample mean plaquette product of two-channel IGT data (periodic)."""
    return mask_correlator(snapshots, VERTEX_MASK, dilation=1, periodic=True)


@dataclass
class CorrelatorTable:
    """Per-sample correlator values plus per-label means."""

    feature_names: list[str]
    values: np.ndarray  # (n_samples, n_features)
    labels: np.ndarray  # (n_samples,)
    label_grid: np.ndarray = field(default=None)
    label_means: np.ndarray = field(default=None)  # (n_labels, n_features)

    def __post_init__(self):
        if self.label_grid is None:
            self.label_grid = np.unique(self.labels)
            self.label_means = np.stack(
                [
                    self.values[self.labels == u].mean(axis=0)
                    for u in self.label_grid
                ]
            )

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("label," + ",".join(self.feature_names) + "\n")
            for label, row in zip(self.labels, self.values):
                fh.write(f"{float(label)!r}," + ",".join(f"{float(v)!r}" for v in row) + "\n")

    def means_to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("label," + ",".join(self.feature_names) + "\n")
            for label, row in zip(self.label_grid, self.label_means):
                fh.write(f"{float(label)!r}," + ",".join(f"{float(v)!r}" for v in row) + "\n")


def mask_name(kernel: KernelSpec, mask: Mask) -> str:
    cells = ";".join(f"{c}:{dy},{dx}" for c, dy, dx in mask)
    return f"{kernel.label}|{cells}"


def correlator_table(dataset: SpinDataset, kernels) -> CorrelatorTable:
    """Exact per-sample correlators for every sub-footprint of each kernel."""
    channels = dataset.geometry[0]
    names: list[str] = []
    cols: list[np.ndarray] = []
    seen_masks = set()
    for kernel in kernels:
        kernel = KernelSpec.parse(kernel)
        for mask in enumerate_subfootprint_correlators(kernel, channels):
            # dedupe across kernels by effective lattice offsets, so e.g. the
            # single-cell mask appears once regardless of dilation
            key = tuple(
                sorted((c, dy * kernel.dilation, dx * kernel.dilation) for c, dy, dx in mask)
            )
            if key in seen_masks:
                continue
            seen_masks.add(key)
            names.append(mask_name(kernel, mask))
            cols.append(
                mask_correlator(
                    dataset.snapshots, mask, kernel.dilation, dataset.periodic
                )
            )
    values = np.stack(cols, axis=1) if cols else np.empty((len(dataset), 0))
    return CorrelatorTable(
        feature_names=names, values=values, labels=dataset.labels.copy()
    )
