"""Autodiff engine: finite-difference gradient checks, layer oracles,
optimizer hand calculations, and the checkpoint container."""

import numpy as np
import pytest

from tetrisphase.correlators import KernelSpec
from tetrisphase.nn_core import (
    Adagrad,
    AdamW,
    ConvLayer,
    DenseStack,
    NonFiniteError,
    Tensor,
    branch_average_patterns,
    compile_patterns,
    global_average,
    im2col,
    l1_penalty,
    load_checkpoint,
    make_optimizer,
    mse_loss,
    output_grid,
    patch_matmul,
    save_checkpoint,
    set_nan_guard,
    stack_columns,
)

from conftest import random_spins


def fd_check(build_loss, params, eps=1e-6, rel_tol=1e-4):
    """Compare backward() gradients against central finite differences."""
    loss = build_loss()
    loss.backward()
    grads = [p.grad.copy() for p in params]
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().data)
            flat[i] = orig - eps
            down = float(build_loss().data)
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            got = g.reshape(-1)[i]
            assert abs(got - fd) <= rel_tol * max(1.0, abs(fd)), (
                f"param entry {i}: autodiff {got} vs fd {fd}"
            )


# ---- per-op gradient checks, 50 random instances each ----


def _rand_param(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


@pytest.mark.parametrize(
    "op",
    ["add", "sub", "mul", "matmul", "tanh", "square", "abs", "sum0", "mean",
     "reshape", "stack", "patch_matmul", "branch_patterns", "l1", "mse"],
)
def test_gradients_match_finite_differences(rng, op):
    for trial in range(50):
        if op in ("add", "sub", "mul"):
            a = _rand_param(rng, (3, 4))
            b = _rand_param(rng, (3, 4))

            def loss():
                x = {
                    "add": lambda: a + b,
                    "sub": lambda: a - b,
                    "mul": lambda: a * b,
                }[op]()
                return x.square().sum()

            fd_check(loss, [a, b])
        elif op == "matmul":
            a = _rand_param(rng, (3, 4))
            b = _rand_param(rng, (4, 2))
            fd_check(lambda: (a @ b).square().sum(), [a, b])
        elif op in ("tanh", "square"):
            a = _rand_param(rng, (5,))
            fn = {"tanh": lambda: a.tanh(), "square": lambda: a.square()}[op]
            fd_check(lambda: fn().sum(), [a])
        elif op == "abs":
            # keep entries away from the kink at 0
            a = Tensor(
                rng.uniform(0.5, 2.0, size=6) * rng.choice([-1.0, 1.0], size=6),
                requires_grad=True,
            )
            fd_check(lambda: a.abs().sum(), [a])
        elif op == "sum0":
            a = _rand_param(rng, (3, 4))
            fd_check(lambda: a.sum(axis=0).square().sum(), [a])
        elif op == "mean":
            a = _rand_param(rng, (2, 3, 4))
            fd_check(lambda: a.mean(axis=(1, 2)).square().sum(), [a])
        elif op == "reshape":
            a = _rand_param(rng, (2, 6))
            fd_check(lambda: a.reshape(3, 4).tanh().sum(), [a])
        elif op == "stack":
            cols = [_rand_param(rng, (4,)) for _ in range(3)]
            fd_check(lambda: stack_columns(c.tanh() for c in cols).square().sum(), cols)
        elif op == "patch_matmul":
            patches = rng.normal(size=(2, 5, 3))
            w = _rand_param(rng, (4, 3))
            fd_check(lambda: patch_matmul(patches, w).tanh().sum(), [w])
        elif op == "branch_patterns":
            mat = (rng.integers(0, 2, size=(4, 2)) * 2 - 1).astype(np.float64)
            pids = rng.integers(0, 4, size=(5, 7)).astype(np.int32)
            w = _rand_param(rng, (3, 2))
            b = _rand_param(rng, (3,))
            fd_check(
                lambda: branch_average_patterns(mat, pids, w, b).square().sum(),
                [w, b],
            )
        elif op == "l1":
            a = Tensor(
                rng.uniform(0.2, 2.0, size=(4, 3)) * rng.choice([-1.0, 1.0], size=(4, 3)),
                requires_grad=True,
            )
            lam = rng.uniform(0.1, 1.0, size=3)
            fd_check(lambda: l1_penalty(a, lam), [a])
        elif op == "mse":
            a = _rand_param(rng, (6,))
            target = rng.normal(size=6)
            fd_check(lambda: mse_loss(a, target), [a])
        if trial >= 4 and op in ("patch_matmul", "branch_patterns"):
            break  # these sweep every weight entry already; 5 instances suffice


def test_broadcast_add_gradient(rng):
    a = _rand_param(rng, (3, 4))
    b = _rand_param(rng, (4,))
    fd_check(lambda: (a + b).tanh().sum(), [a, b])


def test_backward_requires_scalar():
    t = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        t.backward()


def test_grad_accumulates_across_reuse():
    a = Tensor(np.array([2.0]), requires_grad=True)
    ((a * a) + a).sum().backward()  # d/da (a^2 + a) = 2a + 1 = 5
    assert a.grad[0] == pytest.approx(5.0)


def test_abs_subgradient_zero_at_zero():
    a = Tensor(np.array([0.0, 1.0, -2.0]), requires_grad=True)
    a.abs().sum().backward()
    np.testing.assert_allclose(a.grad, [0.0, 1.0, -1.0])


def test_l1_penalty_example():
    # a = (1, -2), lambda = (0.1, 0.2) -> 0.1*1 + 0.2*2 = 0.5
    a = Tensor(np.array([1.0, -2.0]))
    assert float(l1_penalty(a, np.array([0.1, 0.2])).data) == pytest.approx(0.5)


def test_l1_penalty_batch_mean():
    a = Tensor(np.array([[1.0, -2.0], [3.0, 0.0]]))
    val = float(l1_penalty(a, np.array([0.1, 0.2])).data)
    assert val == pytest.approx((0.5 + 0.3) / 2)


def test_l1_penalty_shape_mismatch():
    with pytest.raises(ValueError):
        l1_penalty(Tensor(np.ones((2, 3))), np.ones(2))


def test_mse_loss_examples():
    pred = Tensor(np.array([1.0, 2.0]))
    assert float(mse_loss(pred, np.array([1.0, 2.0])).data) == 0.0
    assert float(mse_loss(pred, np.array([0.0, 0.0])).data) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        mse_loss(pred, np.zeros(3))


def test_nan_guard():
    set_nan_guard(True)
    try:
        big = Tensor(np.array([1e308]))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            big * big
    finally:
        set_nan_guard(False)


# ---- im2col / conv layers ----


def test_output_grid():
    assert output_grid(KernelSpec(2, 1), 1, 12) == (1, 11)
    assert output_grid(KernelSpec(3, 1, 2), 1, 12) == (1, 8)
    assert output_grid(KernelSpec(2, 2), 8, 8) == (7, 7)
    with pytest.raises(ValueError):
        output_grid(KernelSpec(3, 1, 6), 1, 8)


def test_im2col_layout(rng):
    x = random_spins(rng, (2, 2, 4, 5)).astype(np.float64)
    k = KernelSpec(2, 2)
    cols = im2col(x, k)
    hh, ww = output_grid(k, 4, 5)
    assert cols.shape == (2, hh * ww, 2 * 2 * 2)
    # patch at anchor (i, j) is channel-major then row-major over the footprint
    i, j = 1, 2
    patch = cols[0, i * ww + j]
    want = [
        x[0, c, i + dy, j + dx]
        for c in range(2)
        for dy in range(2)
        for dx in range(2)
    ]
    np.testing.assert_allclose(patch, want)


def naive_conv(x, weights4d, bias, kernel):
    """Reference dilated valid convolution via quadruple loops."""
    n, C, H, W = x.shape
    F = weights4d.shape[0]
    hh, ww = output_grid(kernel, H, W)
    out = np.zeros((n, hh * ww, F))
    for s in range(n):
        for f in range(F):
            for i in range(hh):
                for j in range(ww):
                    acc = bias[f]
                    for c in range(C):
                        for dy in range(kernel.d2):
                            for dx in range(kernel.d1):
                                acc += (
                                    weights4d[f, c, dy, dx]
                                    * x[s, c, i + dy * kernel.dilation, j + dx * kernel.dilation]
                                )
                    out[s, i * ww + j, f] = acc
    return out


@pytest.mark.parametrize(
    "kernel,geometry",
    [
        (KernelSpec(2, 1), (1, 1, 8)),
        (KernelSpec(3, 1, 2), (1, 1, 10)),
        (KernelSpec(2, 2), (2, 5, 5)),
    ],
)
def test_conv_layer_matches_naive(rng, kernel, geometry):
    layer = ConvLayer(kernel, in_channels=geometry[0], filters=3, rng=rng)
    x = random_spins(rng, (3,) + geometry).astype(np.float64)
    got = layer.forward(x).data
    want = np.tanh(naive_conv(x, layer.weights_4d, layer.bias.data, kernel))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv_layer_channel_mismatch(rng):
    layer = ConvLayer(KernelSpec(2, 2), in_channels=2, filters=2, rng=rng)
    with pytest.raises(ValueError):
        layer.forward(np.ones((1, 1, 4, 4)))


def test_global_average_example():
    x = Tensor(np.arange(12.0).reshape(1, 6, 2))
    assert float(global_average(x).data[0]) == pytest.approx(5.5)


def test_dense_stack_shapes_and_validation(rng):
    stack = DenseStack([3, 4, 1], rng=rng)
    out = stack.forward(Tensor(np.zeros((5, 3))))
    assert out.shape == (5,)
    with pytest.raises(ValueError):
        DenseStack([3, 4], rng=rng)


# ---- pattern compilation (the fast route) ----


def test_compile_patterns_roundtrip(rng):
    patches = random_spins(rng, (6, 9, 3))
    mat, pids = compile_patterns(patches)
    assert mat.shape[0] <= 2**3
    np.testing.assert_array_equal(mat[pids], patches.astype(np.float64))


def test_pattern_route_matches_dense_route(rng):
    patches = random_spins(rng, (5, 7, 4))
    layer = ConvLayer(KernelSpec(2, 2), in_channels=1, filters=3, rng=rng)
    dense = global_average(layer.forward_patches(patches.astype(np.float64)))
    mat, pids = compile_patterns(patches)
    fast = branch_average_patterns(mat, pids, layer.weights, layer.bias)
    np.testing.assert_allclose(fast.data, dense.data, atol=1e-12)
    # and identical gradients
    dense2 = global_average(layer.forward_patches(patches.astype(np.float64)))
    dense2.square().sum().backward()
    g_dense = [layer.weights.grad.copy(), layer.bias.grad.copy()]
    layer.weights.zero_grad()
    layer.bias.zero_grad()
    fast2 = branch_average_patterns(mat, pids, layer.weights, layer.bias)
    fast2.square().sum().backward()
    np.testing.assert_allclose(layer.weights.grad, g_dense[0], atol=1e-12)
    np.testing.assert_allclose(layer.bias.grad, g_dense[1], atol=1e-12)


# ---- optimizers ----


def test_adagrad_hand_steps():
    # constant gradient 1, lr 1: steps are 1/sqrt(1), 1/sqrt(2), ...
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adagrad([p], lr=1.0)
    for want in [-1.0, -1.0 - 1 / np.sqrt(2.0)]:
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(want, abs=1e-6)


def test_adagrad_weight_decay_enters_gradient():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adagrad([p], lr=1.0, weight_decay=0.5)
    p.grad = np.array([0.0])
    opt.step()  # effective gradient 0.5*2 = 1 -> step of -1
    assert p.data[0] == pytest.approx(1.0, abs=1e-6)


def test_adamw_decay_only():
    # zero gradient: the decoupled decay shrinks the parameter geometrically
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    for k in range(3):
        p.grad = np.array([0.0])
        opt.step()
        assert p.data[0] == pytest.approx((1 - 0.1 * 0.5) ** (k + 1))


def test_adamw_first_step_size():
    # with bias correction the first step is exactly lr for any gradient scale
    for scale in [1e-3, 1.0, 1e3]:
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = AdamW([p], lr=0.01)
        p.grad = np.array([scale])
        opt.step()
        assert p.data[0] == pytest.approx(-0.01, rel=1e-4)


def test_make_optimizer():
    p = Tensor(np.zeros(2), requires_grad=True)
    assert isinstance(make_optimizer("adagrad", [p], 0.1, 0.0), Adagrad)
    assert isinstance(make_optimizer("AdamW", [p], 0.1, 0.0), AdamW)
    with pytest.raises(ValueError):
        make_optimizer("sgd", [p], 0.1, 0.0)


def test_optimizer_rejects_nonfinite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adagrad([p], lr=0.1)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteError):
        opt.step()


# ---- checkpoint container ----


def test_checkpoint_roundtrip(tmp_path, rng):
    params = [rng.normal(size=(3, 4)), rng.normal(size=5)]
    header = {"arch": "test", "widths": [3, 4]}
    path = tmp_path / "model.tpck"
    save_checkpoint(path, header, params)
    got_header, flat = load_checkpoint(path)
    assert got_header == header
    np.testing.assert_array_equal(
        flat, np.concatenate([p.reshape(-1) for p in params])
    )


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.tpck"
    path.write_bytes(b"NOTCK" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(path)
