"""TetrisCNN model: penalty schedule, deterministic build, training loop,
dominance accounting, sweeps, and checkpoints."""

import numpy as np
import pytest

from tetrisphase.nn_core import l1_penalty, mse_loss, make_optimizer
from tetrisphase.spin_models import SpinDataset
from tetrisphase.tetriscnn import (
    TetrisConfig,
    activation_means,
    build,
    dominant_branches,
    lambda_schedule,
    lambda_sweep,
    load_model,
    prediction_r2,
    r2_score,
    save_model,
    stratified_split,
    train,
)


def make_dataset(rng, labels, n_per_label, N=8, signal=True):
    """Synthetic 1D dataset whose magnetization tracks the label."""
    snaps, labs = [], []
    for lab in labels:
        p_up = 0.5 + 0.4 * lab if signal else 0.5
        s = (rng.random((n_per_label, 1, 1, N)) < p_up) * 2 - 1
        snaps.append(s.astype(np.int8))
        labs.append(np.full(n_per_label, lab))
    return SpinDataset(
        snapshots=np.concatenate(snaps),
        labels=np.concatenate(labs),
        model="tfim",
        grid=tuple(labels),
    )


def small_config(**kw):
    base = dict(
        kernels=((1, 1, 1), (2, 1, 1)), filters_per_branch=4,
        task_widths=(8, 1), max_epochs=25, seed=0,
    )
    base.update(kw)
    return TetrisConfig(**base)


# ---- penalty schedule ----


def test_lambda_schedule_seven_kernels():
    cfg = TetrisConfig(
        kernels=[[1, 1, 1], [2, 1, 1], [2, 1, 2], [2, 1, 3],
                 [3, 1, 1], [3, 1, 2], [3, 1, 3]],
        lambda_min=1e-4, lambda_max=1e0,
    )
    want = 10.0 ** np.array([-4, -10 / 3, -8 / 3, -2, -4 / 3, -2 / 3, 0])
    np.testing.assert_allclose(lambda_schedule(cfg), want, rtol=1e-12)


def test_lambda_schedule_single_and_uniform():
    single = TetrisConfig(kernels=((2, 2, 1),), lambda_min=1e-3, lambda_max=1e0)
    np.testing.assert_allclose(lambda_schedule(single), [1e-3])
    uniform = TetrisConfig(
        kernels=[[1, 1, 1], [2, 1, 1], [3, 1, 1], [2, 1, 2], [3, 1, 2]],
        lambda_min=0.05, lambda_max=0.05,
    )
    np.testing.assert_allclose(lambda_schedule(uniform), np.full(5, 0.05))


def test_lambda_schedule_monotone(rng):
    for _ in range(20):
        lo = 10.0 ** rng.uniform(-6, 0)
        hi = lo * 10.0 ** rng.uniform(0, 4)
        n = int(rng.integers(1, 12))
        cfg = TetrisConfig(
            kernels=tuple((1, 1, d + 1) for d in range(n)),
            lambda_min=lo, lambda_max=hi,
        )
        lam = lambda_schedule(cfg)
        assert np.all(np.diff(lam) >= -1e-18)
        assert lam[0] == pytest.approx(lo) and (n == 1 or lam[-1] == pytest.approx(hi))


def test_config_validation():
    with pytest.raises(ValueError):
        TetrisConfig(kernels=())
    with pytest.raises(ValueError):
        TetrisConfig(kernels=((1, 1, 1),), lambda_min=1.0, lambda_max=0.1)
    with pytest.raises(ValueError):
        TetrisConfig(kernels=((1, 1, 1),), lambda_min=0.0)
    with pytest.raises(ValueError):
        TetrisConfig(kernels=((1, 1, 1),), filters_per_branch=0)
    with pytest.raises(ValueError):
        TetrisConfig(kernels=((1, 1, 1),), max_epochs=-1)


def test_config_parses_kernel_labels():
    cfg = TetrisConfig(kernels=("[(2, 1), 3]", (3, 1, 1)))
    assert cfg.kernels[0].d1 == 2 and cfg.kernels[0].dilation == 3
    assert cfg.n_branches == 2


# ---- build ----


def test_build_deterministic():
    cfg = small_config(seed=5)
    a = build(cfg, (1, 1, 8))
    b = build(cfg, (1, 1, 8))
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    c = build(small_config(seed=6), (1, 1, 8))
    assert any(
        not np.array_equal(pa.data, pc.data)
        for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_build_init_statistics():
    model = build(small_config(seed=1), (1, 1, 8))
    for layer in model.branches:
        fan_in = layer.weights.data.shape[1]
        assert np.all(np.abs(layer.weights.data) <= np.sqrt(1.0 / fan_in))
        np.testing.assert_array_equal(layer.bias.data, 0.0)
    for b in model.task.biases:
        np.testing.assert_array_equal(b.data, 0.0)


def test_build_rejects_oversized_kernel():
    with pytest.raises(ValueError):
        build(TetrisConfig(kernels=((5, 1, 2),)), (1, 1, 8))


def test_forward_geometry_check(rng):
    model = build(small_config(), (1, 1, 8))
    with pytest.raises(ValueError):
        model.forward(rng.choice([-1, 1], size=(3, 1, 1, 9)))


def test_prediction_permutation_invariant(rng):
    model = build(small_config(), (1, 1, 8))
    x = rng.choice([-1.0, 1.0], size=(20, 1, 1, 8))
    pred, acts = model.forward(x)
    perm = rng.permutation(20)
    pred_p, acts_p = model.forward(x[perm])
    np.testing.assert_allclose(pred_p, pred[perm], atol=1e-12)
    np.testing.assert_allclose(acts_p, acts[perm], atol=1e-12)


def test_forward_single_snapshot(rng):
    model = build(small_config(), (1, 1, 8))
    x = rng.choice([-1, 1], size=(1, 1, 8)).astype(np.int8)
    pred, acts = model.forward(x)
    assert pred.shape == (1,) and acts.shape == (1, 2)


# ---- training ----


def test_constant_label_convergence(rng):
    # constant target needs no features: model converges to the constant
    # and the L1 pressure shrinks the activations
    ds = make_dataset(rng, [0.3], 160, signal=False)
    cfg = small_config(max_epochs=200, learning_rate=5e-2)
    model = build(cfg, ds.geometry)
    train(model, ds, cfg)
    pred = model.predict(ds.snapshots)
    assert np.all(np.abs(pred - 0.3) < 1e-3)
    init = build(cfg, ds.geometry)
    assert activation_means(model, ds).sum() < activation_means(init, ds).sum() + 0.05


def test_train_deterministic(rng):
    ds = make_dataset(rng, [0.2, 0.5, 0.8], 30)
    cfg = small_config(max_epochs=10)
    model_a = build(cfg, ds.geometry)
    trace_a = train(model_a, ds, cfg)
    model_b = build(cfg, ds.geometry)
    trace_b = train(model_b, ds, cfg)
    assert trace_a.train_loss == trace_b.train_loss
    assert trace_a.val_loss == trace_b.val_loss
    for pa, pb in zip(model_a.parameters(), model_b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_train_learns_signal(rng):
    # wide lattice so the per-sample magnetization pins down the label
    ds = make_dataset(rng, [0.1, 0.3, 0.5, 0.7, 0.9], 60, N=48)
    cfg = small_config(max_epochs=60, learning_rate=5e-2)
    model = build(cfg, ds.geometry)
    train(model, ds, cfg)
    assert prediction_r2(model, ds) > 0.6


def test_early_stopping_restores_best(rng):
    ds = make_dataset(rng, [0.2, 0.8], 40)
    cfg = small_config(max_epochs=200, early_stopping=True, patience=3,
                       learning_rate=5e-2)
    model = build(cfg, ds.geometry)
    trace = train(model, ds, cfg)
    assert len(trace.val_loss) <= 200
    if trace.stopped_epoch is not None:
        assert trace.stopped_epoch == len(trace.val_loss) - 1
    # restored parameters reproduce the best recorded validation loss
    cfg2 = small_config(max_epochs=0, early_stopping=True, patience=3)
    rng2 = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
    # re-derive the validation split exactly as train() does
    train_idx, val_idx = stratified_split(ds.labels.astype(float), 0.2, rng2)
    pred = model.predict(ds.snapshots[val_idx])
    acts = model.forward(ds.snapshots[val_idx])[1]
    val = float(np.mean((pred - ds.labels[val_idx]) ** 2)) + float(
        np.mean(np.abs(acts) @ model.lambdas)
    )
    assert val == pytest.approx(min(trace.val_loss), abs=1e-9)


def test_normalize_labels_roundtrip(rng):
    ds = make_dataset(rng, [1.0, 2.0, 3.0], 30)
    cfg = small_config(max_epochs=30, normalize_labels=True, learning_rate=5e-2)
    model = build(cfg, ds.geometry)
    train(model, ds, cfg)
    assert model.label_scale == (1.0, 3.0)
    # predictions come back on the original label scale
    assert 0.5 < model.predict(ds.snapshots).mean() < 3.5


def test_zero_epochs_leaves_model_at_init(rng):
    ds = make_dataset(rng, [0.2, 0.8], 10)
    cfg = small_config(max_epochs=0)
    model = build(cfg, ds.geometry)
    trace = train(model, ds, cfg)
    assert trace.train_loss == [] and trace.val_loss == []
    ref = build(cfg, ds.geometry)
    for pm, pr in zip(model.parameters(), ref.parameters()):
        np.testing.assert_array_equal(pm.data, pr.data)


def test_branch_death_permanence(rng):
    # a branch at exactly 0 gets no gradient from the L1 term alone
    # (|.| subgradient 0 at 0): it must stay dead under penalty-only training
    ds = make_dataset(rng, [0.2, 0.8], 20)
    cfg = small_config()
    model = build(cfg, ds.geometry)
    dead = model.branches[1]
    dead.weights.data[...] = 0.0
    dead.bias.data[...] = 0.0
    opt = make_optimizer("adagrad", model.parameters(), 0.1, 0.0)
    for _ in range(20):
        opt.zero_grad()
        _, acts = _forward_tensors(model, ds)
        loss = l1_penalty(acts, model.lambdas)
        loss.backward()
        opt.step()
        np.testing.assert_array_equal(dead.weights.data, 0.0)
        np.testing.assert_array_equal(dead.bias.data, 0.0)
    assert np.all(model.forward(ds.snapshots)[1][:, 1] == 0.0)


def _forward_tensors(model, ds):
    from tetrisphase.nn_core import global_average, im2col, stack_columns

    acts = stack_columns(
        global_average(b.forward_patches(im2col(
            ds.snapshots.astype(np.float64), b.kernel
        )))
        for b in model.branches
    )
    return model.task.forward(acts), acts


def test_mse_term_can_revive_dead_branch(rng):
    # with the data term included, tanh'(0)=1 lets gradients through zero
    # weights: death is NOT permanent under the full loss
    ds = make_dataset(rng, [0.2, 0.8], 20)
    cfg = small_config()
    model = build(cfg, ds.geometry)
    for b in model.branches:
        b.weights.data[...] = 0.0
        b.bias.data[...] = 0.0
    opt = make_optimizer("adagrad", model.parameters(), 0.1, 0.0)
    for _ in range(10):
        opt.zero_grad()
        pred, acts = _forward_tensors(model, ds)
        loss = mse_loss(pred, ds.labels) + l1_penalty(acts, model.lambdas)
        loss.backward()
        opt.step()
    assert np.abs(model.branches[0].weights.data).max() > 0


# ---- splits ----


def test_stratified_split_covers_grid(rng):
    labels = np.repeat([0.1, 0.2, 0.3, 0.4], 20)
    tr, va = stratified_split(labels, 0.2, rng)
    assert len(va) == 16 and len(tr) == 64
    assert set(np.unique(labels[va])) == set(np.unique(labels))
    assert set(tr) | set(va) == set(range(80))
    assert set(tr) & set(va) == set()


def test_stratified_split_singleton_label(rng):
    labels = np.array([0.1, 0.2, 0.2])
    tr, va = stratified_split(labels, 0.2, rng)
    assert 0 in tr  # singleton labels stay in training


# ---- dominance and metrics ----


def test_single_branch_dominant(rng):
    cfg = TetrisConfig(kernels=((2, 1, 1),), filters_per_branch=2,
                       task_widths=(4, 1))
    ds = make_dataset(rng, [0.2, 0.8], 10)
    model = build(cfg, ds.geometry)
    dom = dominant_branches(model, ds)
    assert len(dom) == 1
    assert dom[0][0].label == "[(2, 1), 1]" and dom[0][1] == 1.0


def test_all_dead_model_has_no_dominant(rng):
    ds = make_dataset(rng, [0.2, 0.8], 10)
    model = build(small_config(), ds.geometry)
    for b in model.branches:
        b.weights.data[...] = 0.0
        b.bias.data[...] = 0.0
    assert dominant_branches(model, ds, threshold=0.1) == []


def test_dominance_sorted_and_thresholded(rng):
    ds = make_dataset(rng, [0.2, 0.8], 20)
    model = build(small_config(seed=3), ds.geometry)
    dom = dominant_branches(model, ds, threshold=0.0)
    values = [v for _, v in dom]
    assert values[0] == 1.0 and values == sorted(values, reverse=True)


def test_r2_score_cases():
    y = np.array([1.0, 2.0, 3.0])
    assert r2_score(y, y) == 1.0
    assert r2_score(np.full(3, 2.0), y) == pytest.approx(0.0)
    assert r2_score(np.zeros(3), np.full(3, 5.0)) == -np.inf
    assert r2_score(np.full(3, 5.0), np.full(3, 5.0)) == 1.0


# ---- sweep ----


def test_lambda_sweep_rows_and_csv(rng, tmp_path):
    ds = make_dataset(rng, [0.2, 0.5, 0.8], 20)
    cfg = small_config(max_epochs=5)
    res = lambda_sweep(cfg, ds, [1e-3], repeats=1)
    assert len(res.rows) == 1
    res5 = lambda_sweep(cfg, ds, [1e-3, 1e-1], repeats=2)
    assert len(res5.rows) == 4
    assert {r.seed for r in res5.rows} == {cfg.seed, cfg.seed + 1000}
    dom = res5.dominant_kernel(1e-3)
    assert dom in res5.kernels
    assert np.isfinite(res5.mean_r2(1e-1))
    path = tmp_path / "sweep.csv"
    res5.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 5
    assert lines[0].startswith("lambda_max,seed,r2,norm_a[")
    assert float(lines[1].split(",")[0]) == 1e-3


def test_lambda_sweep_validates_repeats(rng):
    ds = make_dataset(rng, [0.2, 0.8], 10)
    with pytest.raises(ValueError):
        lambda_sweep(small_config(), ds, [1e-3], repeats=0)


# ---- checkpoints ----


def test_save_load_roundtrip(rng, tmp_path):
    ds = make_dataset(rng, [1.0, 2.0], 20)
    cfg = small_config(max_epochs=10, normalize_labels=True)
    model = build(cfg, ds.geometry)
    train(model, ds, cfg)
    path = tmp_path / "model.tpck"
    save_model(path, model, cfg)
    loaded = load_model(path)
    assert [k.label for k in loaded.kernels] == [k.label for k in model.kernels]
    assert loaded.label_scale == model.label_scale
    np.testing.assert_allclose(loaded.lambdas, model.lambdas)
    np.testing.assert_array_equal(
        loaded.predict(ds.snapshots), model.predict(ds.snapshots)
    )


def test_load_rejects_truncated_params(rng, tmp_path):
    from tetrisphase.nn_core import load_checkpoint, save_checkpoint

    ds = make_dataset(rng, [0.2, 0.8], 10)
    model = build(small_config(), ds.geometry)
    path = tmp_path / "model.tpck"
    save_model(path, model)
    header, flat = load_checkpoint(path)
    save_checkpoint(path, header, [flat[:-3]])
    with pytest.raises(ValueError):
        load_model(path)
