"""2D Ising gauge theory on a periodic square lattice, sampled by Metropolis.

Link spins live on the edges of an L x L cell and are stored as two channels:
channel 0 holds horizontal links h[i, j] (bottom edge of plaquette (i, j)),
channel 1 vertical links v[i, j] (left edge of plaquette (i, j)).  Plaquette
(i, j) multiplies h[i, j], h[i+1, j], v[i, j], v[i, j+1] with periodic wrap,
and the energy is -J times the sum of plaquette products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass(frozen=True)
class IgtParams:
    """Parameters of an IGT Monte Carlo run (periodic boundaries always)."""

    L: int = 8
    beta: float = 1.0
    sweeps: int = 1000  # burn-in sweeps before the first retained sample
    decorrelation_sweeps: int = 10  # sweeps between retained samples
    samples_per_beta: int = 200
    samples_per_chain: int = 0  # 0: one chain per beta; else restart after this many
    # apply an independent random gauge transformation to every retained
    # sample; see gauge_scramble()
    gauge_scramble: bool = True
    beta_grid: tuple[float, ...] = field(default_factory=tuple)
    rng_seed: int = 0
    J: float = 1.0

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"need L >= 2, got {self.L}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.decorrelation_sweeps < 0:
            raise ValueError("decorrelation_sweeps must be >= 0")
        if self.samples_per_beta < 1:
            raise ValueError("samples_per_beta must be >= 1")
        if self.samples_per_chain < 0:
            raise ValueError("samples_per_chain must be >= 0")
        grid = np.asarray(self.beta_grid, dtype=float)
        if grid.size and np.any(np.diff(grid) <= 0):
            raise ValueError("beta_grid must be strictly increasing")


def gauge_scramble(snapshots: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply an independent random Z2 gauge transformation to each sample.

    A gauge transformation flips the four links incident on a chosen set of
    lattice vertices.  The Boltzmann measure depends only on plaquette
    products, so it is exactly invariant under this map; gauge-variant
    observables (single links, link pairs, vertex stars) average to zero in
    the scrambled ensemble, while plaquettes and Wilson loops are untouched
    sample by sample.
    """
    snaps = np.asarray(snapshots, dtype=np.int8)
    single = snaps.ndim == 3
    if single:
        snaps = snaps[None]
    out = snaps.copy()
    n, _, L, _ = out.shape
    s = (rng.integers(0, 2, size=(n, L, L)) * 2 - 1).astype(np.int8)
    # h[i, j] joins vertices (i, j)-(i, j+1); v[i, j] joins (i, j)-(i+1, j)
    out[:, 0] *= s * np.roll(s, -1, axis=2)
    out[:, 1] *= s * np.roll(s, -1, axis=1)
    return out[0] if single else out


def igt_plaquette_energy(config: np.ndarray, J: float = 1.0) -> float:
    """Energy -J * sum_p (product of the four link spins of plaquette p)."""
    if config.ndim != 3 or config.shape[0] != 2 or config.shape[1] != config.shape[2]:
        raise ValueError(f"expected config of shape (2, L, L), got {config.shape}")
    h = config[0].astype(np.float64)
    v = config[1].astype(np.float64)
    plaq = h * np.roll(h, -1, axis=0) * v * np.roll(v, -1, axis=1)
    return float(-J * plaq.sum())


@njit(cache=True)
def _run_chain(h, v, L, beta, J, links, uniforms, out, start, burn_in, stride):
    """Random-scan single-link-flip Metropolis sweeps, recording into ``out``.

    One sweep proposes 2*L*L flips at uniformly random links; ``links`` holds
    the flat link indices (chunk_sweeps, 2*L*L) with h links first, and
    ``uniforms`` the matching acceptance draws.  Random scan matters: every
    link borders exactly two plaquettes, so dE is always in {-4J, 0, +4J}
    and flips with dE <= 0 are accepted deterministically; a fixed sequential
    scan then composes into deterministic cycles and the chain is not
    ergodic (its stationary law is measurably non-Boltzmann on small
    lattices).  ``start`` is the global index of the first sweep of this
    chunk; sweep s_g is recorded when s_g >= burn_in and
    (s_g - burn_in + 1) % stride == 0.
    """
    n_recorded = 0
    total = uniforms.shape[0]
    n_links = 2 * L * L
    for s in range(total):
        for t in range(n_links):
            flat = links[s, t]
            i = (flat % (L * L)) // L
            j = flat % L
            if flat < L * L:
                # flipping h[i, j] flips plaquettes (i, j) and (i-1, j)
                p_a = h[i, j] * h[(i + 1) % L, j] * v[i, j] * v[i, (j + 1) % L]
                im = (i - 1) % L
                p_b = h[im, j] * h[i, j] * v[im, j] * v[im, (j + 1) % L]
                dE = 2.0 * J * (p_a + p_b)
                if dE <= 0.0 or uniforms[s, t] < np.exp(-beta * dE):
                    h[i, j] = -h[i, j]
            else:
                # flipping v[i, j] flips plaquettes (i, j) and (i, j-1)
                p_a = h[i, j] * h[(i + 1) % L, j] * v[i, j] * v[i, (j + 1) % L]
                jm = (j - 1) % L
                p_b = h[i, jm] * h[(i + 1) % L, jm] * v[i, jm] * v[i, j]
                dE = 2.0 * J * (p_a + p_b)
                if dE <= 0.0 or uniforms[s, t] < np.exp(-beta * dE):
                    v[i, j] = -v[i, j]
        s_g = start + s
        if s_g >= burn_in and (s_g - burn_in + 1) % stride == 0:
            if n_recorded < out.shape[0]:
                for i in range(L):
                    for j in range(L):
                        out[n_recorded, 0, i, j] = h[i, j]
                        out[n_recorded, 1, i, j] = v[i, j]
                n_recorded += 1
    return n_recorded


def igt_sample_chain(
    L: int,
    beta: float,
    burn_in: int,
    decorr: int,
    n_samples: int,
    rng: np.random.Generator,
    J: float = 1.0,
) -> np.ndarray:
    """Run one Metropolis chain from the all-+1 ground state.

    Returns retained configurations, shape (n_samples, 2, L, L), int8.
    """
    h = np.ones((L, L), dtype=np.int8)
    v = np.ones((L, L), dtype=np.int8)
    stride = decorr if decorr > 0 else 1
    total = burn_in + n_samples * stride
    out = np.empty((n_samples, 2, L, L), dtype=np.int8)
    # chunk the random draws so very long chains stay within memory
    chunk = max(1, min(total, 8192))
    done = 0
    recorded = 0
    n_links = 2 * L * L
    while done < total:
        n = min(chunk, total - done)
        links = rng.integers(0, n_links, size=(n, n_links), dtype=np.int64)
        uniforms = rng.random((n, n_links))
        recorded += _run_chain(
            h, v, L, beta, J, links, uniforms, out[recorded:], done, burn_in, stride
        )
        done += n
    return out
