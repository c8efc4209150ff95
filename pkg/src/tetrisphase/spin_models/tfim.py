"""1D transverse-field Ising chain: exact ground states and projective sampling.

The Hamiltonian (J > 0, Pauli matrices) is

    H = -J ( sum_i Sz_i Sz_{i+1} + g sum_i Sx_i )

with open or periodic boundaries.  Ground states are obtained by exact
diagonalization, so the chain length is capped at N = 20.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

MAX_SITES = 20

_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]])


class DimensionOverflowError(ValueError):
    """Chain too long for exact diagonalization."""


class EigensolverError(RuntimeError):
    """Sparse eigensolver failed to converge."""


@dataclass(frozen=True)
class TfimParams:
    """Parameters of a TFIM data-generation run.

    ``g`` is the working field value used by :func:`tfim_ground_state`;
    ``g_grid`` is the label grid swept by :func:`build_tfim_dataset`.
    """

    J: float = 1.0
    g: float = 1.0
    N: int = 12
    boundary: str = "open"  # "open" | "periodic"
    basis: str = "z"  # "z" | "y"
    snapshots_per_g: int = 200
    g_grid: tuple[float, ...] = field(default_factory=tuple)
    rng_seed: int = 0
    # Fix the sign of each z-basis snapshot so the sampled ensemble mimics a
    # symmetry-broken ferromagnet; see build_tfim_dataset.
    fix_sign: bool = True

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"need at least 2 sites, got N={self.N}")
        if self.N > MAX_SITES:
            raise DimensionOverflowError(
                f"N={self.N} exceeds the exact-diagonalization cap of {MAX_SITES}"
            )
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.basis not in ("z", "y"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.snapshots_per_g < 1:
            raise ValueError("snapshots_per_g must be >= 1")
        grid = np.asarray(self.g_grid, dtype=float)
        if grid.size and np.any(np.diff(grid) <= 0):
            raise ValueError("g_grid must be strictly increasing")


@dataclass
class StateVector:
    """A normalized many-body state on N spin-1/2 sites.

    Site 0 owns the most significant bit of the basis-state index; bit 0
    encodes spin up (+1), bit 1 spin down (-1).
    """

    amplitudes: np.ndarray
    N: int
    energy: float | None = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.N,):
            raise ValueError(
                f"amplitude vector has length {self.amplitudes.size}, expected 2^{self.N}"
            )
        norm2 = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm2 - 1.0) > 1e-10:
            raise ValueError(f"state not normalized: |psi|^2 = {norm2}")


def tfim_hamiltonian(params: TfimParams) -> sparse.csr_matrix:
    """Sparse TFIM Hamiltonian in the z product basis."""
    N, J, g = params.N, params.J, params.g
    eye = sparse.identity(2, format="csr")

    def site_op(op, i):
        mats = [eye] * N
        mats[i] = sparse.csr_matrix(op)
        out = mats[0]
        for m in mats[1:]:
            out = sparse.kron(out, m, format="csr")
        return out

    dim = 2**N
    H = sparse.csr_matrix((dim, dim))
    bonds = N if params.boundary == "periodic" else N - 1
    sz_ops = [site_op(_SZ, i) for i in range(N)]
    for i in range(bonds):
        H = H - J * (sz_ops[i] @ sz_ops[(i + 1) % N])
    for i in range(N):
        H = H - J * g * site_op(_SX, i)
    return H


def tfim_ground_state(params: TfimParams) -> StateVector:
    """Lowest eigenvector of the TFIM Hamiltonian, with its energy.

    In a degenerate ground space (g = 0) any normalized ground vector may be
    returned.
    """
    if params.J <= 0:
        raise ValueError("J must be positive")
    H = tfim_hamiltonian(params)
    if params.N <= 8:
        w, v = np.linalg.eigh(H.toarray())
        energy, vec = float(w[0]), v[:, 0]
    else:
        try:
            w, v = eigsh(H, k=1, which="SA", maxiter=5000)
        except ArpackNoConvergence as exc:
            raise EigensolverError(f"eigensolver did not converge: {exc}") from exc
        energy, vec = float(w[0]), v[:, 0]
    vec = vec / np.linalg.norm(vec)
    return StateVector(amplitudes=vec.astype(complex), N=params.N, energy=energy)


def rotate_to_y_basis(state: StateVector) -> StateVector:
    """Express a state in the y measurement basis.

    Applies U = [[1, -i], [1, i]] / sqrt(2) to every site, i.e. the unitary
    whose rows are <y+| and <y-| with |y+-> = (|up> +- i |down>)/sqrt(2).
    Sampling the result in z is equivalent to measuring S^y on the original
    state (outcome +1 maps to the y+ eigenstate).
    """
    U = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / np.sqrt(2.0)
    amps = state.amplitudes.reshape((2,) * state.N)
    for site in range(state.N):
        amps = np.moveaxis(np.tensordot(U, amps, axes=([1], [site])), 0, site)
    return StateVector(amplitudes=amps.reshape(-1), N=state.N, energy=state.energy)


def sample_snapshots(
    state: StateVector, basis: str, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``count`` projective snapshots, shape (count, N), entries +-1.

    Sampling is sequential-conditional over sites: site i is drawn from its
    Born marginal given the outcomes at sites 0..i-1.  The per-prefix
    probabilities come from a binary tree of partial sums of |amplitude|^2.
    """
    if basis == "y":
        state = rotate_to_y_basis(state)
    elif basis != "z":
        raise ValueError(f"unknown basis {basis!r}")
    N = state.N
    probs = np.abs(state.amplitudes) ** 2
    # tree[l] has 2^l entries: total probability of each length-l prefix
    tree = [probs]
    for _ in range(N):
        tree.append(tree[-1].reshape(-1, 2).sum(axis=1))
    tree = tree[::-1]  # tree[0] = [1.0], tree[N] = probs

    nodes = np.zeros(count, dtype=np.int64)
    spins = np.empty((count, N), dtype=np.int8)
    for level in range(N):
        parent = tree[level][nodes]
        left = tree[level + 1][2 * nodes]
        p_up = np.where(parent > 0, left / np.where(parent > 0, parent, 1.0), 0.5)
        bit = (rng.random(count) >= p_up).astype(np.int64)
        spins[:, level] = 1 - 2 * bit
        nodes = 2 * nodes + bit
    return spins
