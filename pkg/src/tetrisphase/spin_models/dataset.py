"""Labeled spin-snapshot datasets and their on-disk container.

Snapshots are int8 lattices of shape (channels, height, width) with entries
in {-1, +1}.  1D chains are stored with height 1 and the chain along the
width axis.  The file container starts with the magic bytes "TPHZ1", then a
4-byte little-endian length and a UTF-8 JSON header, then per sample the raw
int8 lattice (channel-major, row-major) followed by the label as a 64-bit
little-endian float.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .igt import IgtParams, gauge_scramble, igt_sample_chain
from .tfim import TfimParams, sample_snapshots, tfim_ground_state

MAGIC = b"TPHZ1"


@dataclass
class SpinDataset:
    """A collection of +-1 lattice snapshots with per-sample scalar labels."""

    snapshots: np.ndarray  # (n, channels, height, width) int8
    labels: np.ndarray  # (n,) float64
    model: str  # "tfim" | "igt"
    basis: str | None = None  # measurement basis for quantum data
    periodic: bool = False  # lattice wraps for correlator evaluation
    seed: int | None = None
    grid: tuple[float, ...] = ()
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.snapshots = np.ascontiguousarray(self.snapshots, dtype=np.int8)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.snapshots.ndim != 4:
            raise ValueError(f"snapshots must be 4D, got shape {self.snapshots.shape}")
        if len(self.labels) != len(self.snapshots):
            raise ValueError("label count does not match sample count")
        if not np.all(np.abs(self.snapshots) == 1):
            raise ValueError("snapshot entries must be -1 or +1")

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def geometry(self) -> tuple[int, int, int]:
        """(channels, height, width)."""
        return self.snapshots.shape[1:]

    def label_groups(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Unique labels (sorted) and the sample indices of each."""
        uniq = np.unique(self.labels)
        return uniq, [np.flatnonzero(self.labels == u) for u in uniq]

    def save(self, path) -> None:
        header = {
            "model": self.model,
            "basis": self.basis,
            "periodic": self.periodic,
            "channels": int(self.snapshots.shape[1]),
            "height": int(self.snapshots.shape[2]),
            "width": int(self.snapshots.shape[3]),
            "grid": list(self.grid),
            "seed": self.seed,
            "samples": len(self),
            "meta": self.meta,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for snap, label in zip(self.snapshots, self.labels):
                fh.write(snap.tobytes())
                fh.write(struct.pack("<d", label))

    @classmethod
    def load(cls, path) -> "SpinDataset":
        with open(path, "rb") as fh:
            magic = fh.read(5)
            if magic != MAGIC:
                raise ValueError(f"not a TPHZ1 dataset file: magic {magic!r}")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            n = header["samples"]
            c, h, w = header["channels"], header["height"], header["width"]
            lat_bytes = c * h * w
            snaps = np.empty((n, c, h, w), dtype=np.int8)
            labels = np.empty(n, dtype=np.float64)
            for k in range(n):
                snaps[k] = np.frombuffer(fh.read(lat_bytes), dtype=np.int8).reshape(c, h, w)
                (labels[k],) = struct.unpack("<d", fh.read(8))
        return cls(
            snapshots=snaps,
            labels=labels,
            model=header["model"],
            basis=header.get("basis"),
            periodic=header.get("periodic", False),
            seed=header.get("seed"),
            grid=tuple(header.get("grid", [])),
            meta=header.get("meta", {}),
        )

    def to_csv(self, path) -> None:
        """Flat CSV for inspection: one row per sample, sites then label."""
        n = len(self)
        flat = self.snapshots.reshape(n, -1)
        cols = [f"s{i}" for i in range(flat.shape[1])] + ["label"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row, label in zip(flat, self.labels):
                fh.write(",".join(str(int(v)) for v in row) + f",{float(label)!r}\n")


def _grid_rng(seed: int, index: int) -> np.random.Generator:
    # independent stream per grid point, derived from (seed, grid index)
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def build_tfim_dataset(params: TfimParams) -> SpinDataset:
    """Snapshots of TFIM ground states across ``g_grid``, labeled by g.

    For z-basis data each snapshot whose magnetization is negative is
    globally flipped (when ``fix_sign`` is set): the exact finite-N ground
    state is a symmetric superposition of the two ferromagnetic branches, and
    the flip selects one branch the way a symmetry-broken solver would.
    Two-body correlators are unaffected.
    """
    if not params.g_grid:
        raise ValueError("g_grid must be non-empty")
    all_snaps = []
    all_labels = []
    for idx, g in enumerate(params.g_grid):
        rng = _grid_rng(params.rng_seed, idx)
        state = tfim_ground_state(replace(params, g=g))
        snaps = sample_snapshots(state, params.basis, params.snapshots_per_g, rng)
        if params.basis == "z" and params.fix_sign:
            sign = np.where(snaps.sum(axis=1, dtype=np.int64) < 0, -1, 1)
            snaps = (snaps * sign[:, None]).astype(np.int8)
        all_snaps.append(snaps)
        all_labels.append(np.full(len(snaps), g))
    snaps = np.concatenate(all_snaps)[:, None, None, :]  # (n, 1, 1, N)
    labels = np.concatenate(all_labels)
    return SpinDataset(
        snapshots=snaps,
        labels=labels,
        model="tfim",
        basis=params.basis,
        periodic=params.boundary == "periodic",
        seed=params.rng_seed,
        grid=tuple(params.g_grid),
        meta={
            "J": params.J,
            "N": params.N,
            "boundary": params.boundary,
            "snapshots_per_g": params.snapshots_per_g,
            "fix_sign": params.fix_sign,
        },
    )


def build_igt_dataset(params: IgtParams) -> SpinDataset:
    """Metropolis IGT configurations across ``beta_grid``, labeled by beta.

    With ``gauge_scramble`` set (the default) every retained sample receives
    an independent random gauge transformation.  The Boltzmann measure is
    exactly invariant under this, but it symmetrizes the finite chain over
    each gauge orbit: gauge-variant link products carry no information about
    beta in the scrambled data, and the only local observables left are the
    gauge-invariant plaquette products.  With ``samples_per_chain`` > 0 the
    chain is additionally restarted from the all-+1 ground state after that
    many retained samples, bounding the Markov time per sample.
    """
    if not params.beta_grid:
        raise ValueError("beta_grid must be non-empty")
    all_snaps = []
    all_labels = []
    per_chain = params.samples_per_chain or params.samples_per_beta
    for idx, beta in enumerate(params.beta_grid):
        rng = _grid_rng(params.rng_seed, idx)
        chunks = []
        remaining = params.samples_per_beta
        while remaining > 0:
            take = min(per_chain, remaining)
            chunks.append(
                igt_sample_chain(
                    params.L,
                    beta,
                    params.sweeps,
                    params.decorrelation_sweeps,
                    take,
                    rng,
                    J=params.J,
                )
            )
            remaining -= take
        snaps = np.concatenate(chunks)
        if params.gauge_scramble:
            snaps = gauge_scramble(snaps, rng)
        all_snaps.append(snaps)
        all_labels.append(np.full(len(snaps), beta))
    return SpinDataset(
        snapshots=np.concatenate(all_snaps),
        labels=np.concatenate(all_labels),
        model="igt",
        basis=None,
        periodic=True,
        seed=params.rng_seed,
        grid=tuple(params.beta_grid),
        meta={
            "J": params.J,
            "L": params.L,
            "sweeps": params.sweeps,
            "decorrelation_sweeps": params.decorrelation_sweeps,
            "samples_per_beta": params.samples_per_beta,
            "samples_per_chain": params.samples_per_chain,
            "gauge_scramble": params.gauge_scramble,
        },
    )


def igt_sample(params: IgtParams) -> SpinDataset:
    """Alias of :func:`build_igt_dataset` (the Metropolis sampling entry point)."""
    return build_igt_dataset(params)
