from .dataset import SpinDataset, build_igt_dataset, build_tfim_dataset, igt_sample
from .igt import IgtParams, gauge_scramble, igt_plaquette_energy, igt_sample_chain
from .tfim import (
    StateVector,
    TfimParams,
    rotate_to_y_basis,
    sample_snapshots,
    tfim_ground_state,
    tfim_hamiltonian,
)

__all__ = [
    "SpinDataset",
    "build_igt_dataset",
    "build_tfim_dataset",
    "igt_sample",
    "IgtParams",
    "gauge_scramble",
    "igt_plaquette_energy",
    "igt_sample_chain",
    "StateVector",
    "TfimParams",
    "rotate_to_y_basis",
    "sample_snapshots",
    "tfim_ground_state",
    "tfim_hamiltonian",
]
