"""Layers of the branch network: dilated valid convolution, pooling, dense.

Inputs are (n, C, H, W) arrays.  A kernel (d1, d2, dilation) spans d1 cells
along W and d2 along H; valid padding, so the output grid is
(H - dilation*(d2-1)) x (W - dilation*(d1-1)).
"""

from __future__ import annotations

import numpy as np

from ..correlators import KernelSpec
from .tensor import Tensor, patch_matmul


def output_grid(kernel: KernelSpec, height: int, width: int) -> tuple[int, int]:
    hh = height - kernel.dilation * (kernel.d2 - 1)
    ww = width - kernel.dilation * (kernel.d1 - 1)
    if hh < 1 or ww < 1:
        raise ValueError(
            f"kernel {kernel.label} does not fit a {height}x{width} lattice"
        )
    return hh, ww


def im2col(inputs: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Extract dilated valid-padding patches: (n, positions, C*d2*d1)."""
    x = np.asarray(inputs)
    if x.ndim == 3:
        x = x[None]
    n, C, H, W = x.shape
    hh, ww = output_grid(kernel, H, W)
    d = kernel.dilation
    cols = np.empty((n, hh, ww, C, kernel.d2, kernel.d1), dtype=x.dtype)
    for dy in range(kernel.d2):
        for dx in range(kernel.d1):
            cols[:, :, :, :, dy, dx] = x[
                :, :, dy * d : dy * d + hh, dx * d : dx * d + ww
            ].transpose(0, 2, 3, 1)
    return cols.reshape(n, hh * ww, C * kernel.d2 * kernel.d1)


def compile_patterns(patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate +-1 patches into (pattern_mat (M, K), pattern_ids (n, P)).

    Feeds :func:`branch_average_patterns`; only sensible for fan_in small
    enough that the number of distinct patterns M = 2^fan_in stays modest.
    """
    n, p, k = patches.shape
    if k > 62:
        raise ValueError(f"fan_in {k} too large for pattern packing")
    bits = (patches > 0).reshape(n * p, k)
    codes = bits @ (np.int64(1) << np.arange(k, dtype=np.int64))
    uniq, inverse = np.unique(codes, return_inverse=True)
    pattern_ids = inverse.reshape(n, p).astype(np.int32)
    pattern_mat = (
        ((uniq[:, None] >> np.arange(k, dtype=np.int64)) & 1) * 2.0 - 1.0
    ).astype(np.float64)
    return pattern_mat, pattern_ids


class ConvLayer:
    """One branch convolution: F filters over a fixed Tetris footprint."""

    def __init__(
        self,
        kernel: KernelSpec,
        in_channels: int,
        filters: int,
        nonlinearity: str = "tanh",
        rng: np.random.Generator | None = None,
    ):
        if nonlinearity not in ("tanh", "identity"):
            raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
        self.kernel = kernel
        self.in_channels = in_channels
        self.filters = filters
        self.nonlinearity = nonlinearity
        fan_in = in_channels * kernel.d1 * kernel.d2
        rng = rng or np.random.default_rng()
        bound = np.sqrt(1.0 / fan_in)
        self.weights = Tensor(
            rng.uniform(-bound, bound, size=(filters, fan_in)), requires_grad=True
        )
        # biases start at zero so a branch carries no constant offset at init;
        # a nonzero bias would give every branch a free |a_k| floor that the
        # L1 pressure at lambda_min takes thousands of epochs to remove
        self.bias = Tensor(np.zeros(filters), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]

    def forward_patches(self, patches: np.ndarray) -> Tensor:
        """Forward from precomputed im2col patches (n, P, K) -> (n, P, F)."""
        out = patch_matmul(patches, self.weights) + self.bias
        if self.nonlinearity == "tanh":
            out = out.tanh()
        return out

    def forward(self, inputs: np.ndarray) -> Tensor:
        """Forward from raw lattices: (n, C, H, W) -> (n, P, F)."""
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} channels, got {x.shape[1]}"
            )
        return self.forward_patches(im2col(x, self.kernel))

    @property
    def weights_4d(self) -> np.ndarray:
        """Weights as (filters, channels, d2, d1), the declaration layout."""
        return self.weights.data.reshape(
            self.filters, self.in_channels, self.kernel.d2, self.kernel.d1
        )


def global_average(x: Tensor) -> Tensor:
    """Mean over positions and filters: (n, P, F) -> (n,)."""
    return x.mean(axis=(1, 2))


class DenseStack:
    """Fully-connected head: tanh hidden layers, linear scalar output."""

    def __init__(self, widths, rng: np.random.Generator | None = None):
        widths = list(widths)
        if widths[-1] != 1:
            raise ValueError("last task-network width must be 1")
        self.widths = widths
        rng = rng or np.random.default_rng()
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(1.0 / w_in)
            self.weights.append(
                Tensor(rng.uniform(-bound, bound, size=(w_in, w_out)), requires_grad=True)
            )
            self.biases.append(Tensor(np.zeros(w_out), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, a: Tensor) -> Tensor:
        """(n, K) activations -> (n,) predictions."""
        h = a
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = h.tanh()
        return h.reshape(-1)
