"""A small reverse-mode automatic-differentiation engine over numpy arrays.

Only the operations the branch network needs are provided.  Each op records
its parents and a closure that accumulates gradients; ``Tensor.backward()``
replays the tape in reverse topological order.  An optional guard aborts on
the first non-finite intermediate and names the offending op.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward intermediate contained NaN or Inf."""


_NAN_GUARD = False


def set_nan_guard(enabled: bool) -> None:
    """Check every op output for NaN/Inf (slower; useful when debugging)."""
    global _NAN_GUARD
    _NAN_GUARD = enabled


def _check(data: np.ndarray, name: str) -> None:
    if _NAN_GUARD and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {name!r}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name
        _check(self.data, name)

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(grad, self.data.shape).astype(np.float64)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operators ----

    def __add__(self, other):
        other = _lift(other)
        out_data = self.data + other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(out_data, parents=(self, other), backward=bw, name="add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        out_data = self.data - other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor(out_data, parents=(self, other), backward=bw, name="sub")

    def __mul__(self, other):
        other = _lift(other)
        out_data = self.data * other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(out_data, parents=(self, other), backward=bw, name="mul")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = _lift(other)
        out_data = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor(out_data, parents=(self, other), backward=bw, name="matmul")

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out_data**2))

        return Tensor(out_data, parents=(self,), backward=bw, name="tanh")

    def square(self):
        out_data = self.data**2

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * 2.0 * self.data)

        return Tensor(out_data, parents=(self,), backward=bw, name="square")

    def abs(self):
        # subgradient at 0 taken as 0, so exactly-dead activations stay dead
        out_data = np.abs(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * np.sign(self.data))

        return Tensor(out_data, parents=(self,), backward=bw, name="abs")

    def sum(self, axis=None):
        out_data = self.data.sum(axis=axis)

        def bw(g):
            if self.requires_grad:
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.shape).copy())
                else:
                    self._accumulate(
                        np.broadcast_to(np.expand_dims(g, axis), self.shape).copy()
                    )

        return Tensor(out_data, parents=(self,), backward=bw, name="sum")

    def mean(self, axis=None):
        if axis is None:
            scale = 1.0 / self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            scale = 1.0 / np.prod([self.shape[a] for a in axes])
        out = self.sum(axis=axis) * scale
        out.name = "mean"
        return out

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        orig = self.shape

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.reshape(orig))

        return Tensor(out_data, parents=(self,), backward=bw, name="reshape")

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def stack_columns(tensors) -> Tensor:
    """Stack 1D tensors of shape (n,) into a (n, k) tensor."""
    tensors = list(tensors)
    out_data = np.stack([t.data for t in tensors], axis=1)

    def bw(g):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g[:, k])

    return Tensor(out_data, parents=tuple(tensors), backward=bw, name="stack")


def patch_matmul(patches: np.ndarray, weights: Tensor) -> Tensor:
    """Contraction (n, P, K) x (F, K) -> (n, P, F) of fixed input patches
    with trainable filter weights, as one flat GEMM."""
    n, p, k = patches.shape
    flat = np.ascontiguousarray(patches.reshape(n * p, k))
    out_data = (flat @ weights.data.T).reshape(n, p, -1)

    def bw(g):
        if weights.requires_grad:
            weights._accumulate(g.reshape(n * p, -1).T @ flat)

    return Tensor(out_data, parents=(weights,), backward=bw, name="conv")


def branch_average_patterns(
    pattern_mat: np.ndarray, pattern_ids: np.ndarray, weights: Tensor, bias: Tensor
) -> Tensor:
    """Fused branch forward a(s) = mean over filters f and positions p of
    tanh(w_f . x_{s,p} + b_f), where the patch x_{s,p} is row
    ``pattern_ids[s, p]`` of ``pattern_mat``.

    Because spins are +-1 there are at most 2^fan_in distinct patches, so the
    nonlinearity is evaluated once per distinct pattern instead of once per
    lattice position.  Numerically identical to the convolution + pooling
    route (up to float summation order).
    """
    z = pattern_mat @ weights.data.T + bias.data  # (M, F)
    t = np.tanh(z)
    u = t.mean(axis=1)  # (M,)
    out = u[pattern_ids].mean(axis=1)  # (n,)
    m, f = t.shape
    _, p = pattern_ids.shape

    def bw(g):
        gu = np.bincount(
            pattern_ids.ravel(), weights=np.repeat(g / p, p), minlength=m
        )
        gz = (1.0 - t * t) * (gu / f)[:, None]
        if weights.requires_grad:
            weights._accumulate(gz.T @ pattern_mat)
        if bias.requires_grad:
            bias._accumulate(gz.sum(axis=0))

    return Tensor(out, parents=(weights, bias), backward=bw, name="branch_patterns")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target vector."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    out = (pred - Tensor(target)).square().mean()
    out.name = "mse"
    return out


def l1_penalty(activations: Tensor, lambdas: np.ndarray) -> Tensor:
    """Per-sample sum_k lambda_k |a_k|, averaged over the batch.

    ``activations`` has shape (n, K); ``lambdas`` shape (K,).
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(activations.shape) == 1:
        activations = activations.reshape(1, -1)
    if activations.shape[-1] != lambdas.shape[0]:
        raise ValueError(
            f"{activations.shape[-1]} branches but {lambdas.shape[0]} penalties"
        )
    out = (activations.abs() * Tensor(lambdas)).sum(axis=1).mean()
    out.name = "l1_penalty"
    return out
