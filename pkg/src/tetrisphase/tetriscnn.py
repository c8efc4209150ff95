"""Parallel-branch convolutional model with a sparsity-regularized bottleneck.

Each branch is one kernel footprint; global average pooling turns a branch
into a single bottleneck activation a_k per snapshot.  Training minimizes
MSE(prediction, label) + sum_k lambda_k |a_k|, with per-branch penalties
geometrically spaced from lambda_min to lambda_max in kernel-list order so
simpler kernels are cheaper to keep.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .correlators import KernelSpec
from .nn_core import (
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
    save_checkpoint,
    stack_columns,
)
from .spin_models import SpinDataset


@dataclass(frozen=True)
class TetrisConfig:
    kernels: tuple[KernelSpec, ...]
    filters_per_branch: int = 8
    task_widths: tuple[int, ...] = (32, 16, 1)  # hidden widths + scalar output
    lambda_min: float = 1e-4
    lambda_max: float = 1e0
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    optimizer: str = "adagrad"
    max_epochs: int = 100
    early_stopping: bool = False
    patience: int = 10
    normalize_labels: bool = False  # min-max scale labels to [0, 1]
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "kernels", tuple(KernelSpec.parse(k) for k in self.kernels)
        )
        if not self.kernels:
            raise ValueError("need at least one kernel")
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        if self.lambda_min <= 0:
            raise ValueError("lambda values must be positive")
        if self.filters_per_branch < 1 or self.batch_size < 1:
            raise ValueError("filters_per_branch and batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")

    @property
    def n_branches(self) -> int:
        return len(self.kernels)


def lambda_schedule(config: TetrisConfig) -> np.ndarray:
    """Per-branch penalties, geometric from lambda_min to lambda_max.

    A single branch takes lambda_min.
    """
    if config.n_branches == 1:
        return np.array([config.lambda_min])
    return np.geomspace(config.lambda_min, config.lambda_max, config.n_branches)


@dataclass
class TetrisModel:
    branches: list[ConvLayer]
    lambdas: np.ndarray
    task: DenseStack
    geometry: tuple[int, int, int]  # (channels, height, width)
    label_scale: tuple[float, float] | None = None  # (lo, hi) of min-max scaling

    @property
    def kernels(self) -> list[KernelSpec]:
        return [b.kernel for b in self.branches]

    def parameters(self) -> list[Tensor]:
        out = []
        for b in self.branches:
            out += b.parameters()
        out += self.task.parameters()
        return out

    def forward_patches(self, patch_list: list[np.ndarray]) -> tuple[Tensor, Tensor]:
        """(prediction, activations) from precomputed per-branch patches."""
        acts = stack_columns(
            global_average(b.forward_patches(p))
            for b, p in zip(self.branches, patch_list)
        )
        pred = self.task.forward(acts)
        return pred, acts

    def forward(self, snapshots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(predictions, activations) for raw snapshots (n, C, H, W)."""
        x = np.asarray(snapshots, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != tuple(self.geometry):
            raise ValueError(
                f"snapshot geometry {x.shape[1:]} does not match model {self.geometry}"
            )
        patch_list = [im2col(x, b.kernel) for b in self.branches]
        pred, acts = self.forward_patches(patch_list)
        return pred.data, acts.data

    def predict(self, snapshots: np.ndarray) -> np.ndarray:
        """Predictions on the label's original scale."""
        pred, _ = self.forward(snapshots)
        return self.unscale(pred)

    def unscale(self, pred: np.ndarray) -> np.ndarray:
        if self.label_scale is None:
            return pred
        lo, hi = self.label_scale
        return pred * (hi - lo) + lo


def build(config: TetrisConfig, geometry: tuple[int, int, int]) -> TetrisModel:
    """Deterministically initialize a model for (channels, height, width)."""
    channels, height, width = geometry
    for k in config.kernels:
        output_grid(k, height, width)  # raises if the kernel does not fit
    ss = np.random.SeedSequence(config.seed)
    branch_seeds = ss.spawn(config.n_branches + 1)
    branches = [
        ConvLayer(
            k,
            in_channels=channels,
            filters=config.filters_per_branch,
            nonlinearity="tanh",
            rng=np.random.default_rng(branch_seeds[i]),
        )
        for i, k in enumerate(config.kernels)
    ]
    task = DenseStack(
        [config.n_branches, *config.task_widths],
        rng=np.random.default_rng(branch_seeds[-1]),
    )
    return TetrisModel(
        branches=branches,
        lambdas=lambda_schedule(config),
        task=task,
        geometry=tuple(geometry),
    )


@dataclass
class TrainTrace:
    """Per-epoch training record (the data behind activation-vs-epoch plots)."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_abs_activations: list[np.ndarray] = field(default_factory=list)  # (K,) each
    kernels: list[str] = field(default_factory=list)
    stopped_epoch: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ["epoch", "train_loss", "val_loss"] + [
                f"mean_abs_a[{k}]" for k in self.kernels
            ]
            fh.write(",".join(cols) + "\n")
            for e, (tr, vl, aa) in enumerate(
                zip(self.train_loss, self.val_loss, self.val_abs_activations)
            ):
                fh.write(f"{e},{float(tr)!r},{float(vl)!r}," + ",".join(f"{float(v)!r}" for v in aa) + "\n")


def stratified_split(
    labels: np.ndarray, val_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-label 80/20 style split so validation covers the whole grid."""
    train_idx, val_idx = [], []
    for u in np.unique(labels):
        idx = np.flatnonzero(labels == u)
        idx = rng.permutation(idx)
        n_val = max(1, int(round(val_fraction * len(idx)))) if len(idx) > 1 else 0
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.concatenate(train_idx), np.concatenate(val_idx)


def _snapshot_params(model: TetrisModel) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def _restore_params(model: TetrisModel, saved: list[np.ndarray]) -> None:
    for p, s in zip(model.parameters(), saved):
        p.data[...] = s


def train(model: TetrisModel, dataset: SpinDataset, config: TetrisConfig) -> TrainTrace:
    """Minimize MSE + bottleneck L1 on an 80/20 label-stratified split."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))
    labels = dataset.labels.astype(np.float64)
    if config.normalize_labels:
        lo, hi = float(labels.min()), float(labels.max())
        if hi == lo:
            hi = lo + 1.0
        model.label_scale = (lo, hi)
        labels = (labels - lo) / (hi - lo)
    train_idx, val_idx = stratified_split(labels, 0.2, rng)

    # Patches are fixed by the data: extract once per branch.  Spins are +-1,
    # so branches with a small footprint see few distinct patches and can be
    # evaluated per distinct pattern (branch_average_patterns); wide branches
    # fall back to the dense int8 patch store.
    branch_inputs = []
    for b in model.branches:
        patches = im2col(dataset.snapshots, b.kernel).astype(np.int8)
        if patches.shape[2] <= 12:
            branch_inputs.append(("pattern", compile_patterns(patches)))
        else:
            branch_inputs.append(("dense", patches))
    y_train, y_val = labels[train_idx], labels[val_idx]

    def branch_acts(idx):
        cols = []
        for b, (mode, store) in zip(model.branches, branch_inputs):
            if mode == "pattern":
                mat, pids = store
                cols.append(branch_average_patterns(mat, pids[idx], b.weights, b.bias))
            else:
                cols.append(
                    global_average(b.forward_patches(store[idx].astype(np.float64)))
                )
        return stack_columns(cols)

    def eval_split(idx, y):
        acts = branch_acts(idx)
        pred = model.task.forward(acts)
        loss = mse_loss(pred, y) + l1_penalty(acts, model.lambdas)
        return float(loss.data), np.abs(acts.data).mean(axis=0)

    opt = make_optimizer(
        config.optimizer, model.parameters(), config.learning_rate, config.weight_decay
    )
    trace = TrainTrace(kernels=[k.label for k in model.kernels])
    best_val = np.inf
    best_params = _snapshot_params(model)
    bad_epochs = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(train_idx)
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            acts = branch_acts(idx)
            pred = model.task.forward(acts)
            loss = mse_loss(pred, labels[idx]) + l1_penalty(acts, model.lambdas)
            if not np.isfinite(loss.data):
                raise NonFiniteError(
                    f"training diverged: non-finite loss at epoch {epoch}"
                )
            loss.backward()
            opt.step()
            batch_losses.append(float(loss.data))
        val_loss, val_abs = eval_split(val_idx, y_val)
        trace.train_loss.append(float(np.mean(batch_losses)))
        trace.val_loss.append(val_loss)
        trace.val_abs_activations.append(val_abs)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = _snapshot_params(model)
            bad_epochs = 0
        else:
            bad_epochs += 1
        if config.early_stopping and bad_epochs > config.patience:
            trace.stopped_epoch = epoch
            break
    if config.early_stopping and trace.val_loss:
        _restore_params(model, best_params)
    return trace


def activation_means(model: TetrisModel, dataset: SpinDataset) -> np.ndarray:
    """Mean |a_k| over the dataset, shape (n_branches,)."""
    _, acts = model.forward(dataset.snapshots)
    return np.abs(acts).mean(axis=0)


def dominant_branches(
    model: TetrisModel, dataset: SpinDataset, threshold: float = 0.5
) -> list[tuple[KernelSpec, float]]:
    """Branches whose normalized mean |a_k| exceeds ``threshold``.

    Normalization is to the largest branch activation; sorted descending.
    """
    means = activation_means(model, dataset)
    peak = means.max()
    if peak <= 0:
        return []
    normalized = means / peak
    picked = [
        (model.kernels[k], float(normalized[k]))
        for k in np.argsort(normalized)[::-1]
        if normalized[k] >= threshold
    ]
    return picked


def r2_score(pred: np.ndarray, target: np.ndarray) -> float:
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res < 1e-24 else -np.inf
    return 1.0 - ss_res / ss_tot


def prediction_r2(model: TetrisModel, dataset: SpinDataset) -> float:
    """R^2 of unscaled predictions against the true labels."""
    return r2_score(model.predict(dataset.snapshots), dataset.labels)


@dataclass
class SweepRow:
    lambda_max: float
    seed: int
    r2: float
    normalized_activations: np.ndarray  # (n_branches,)


@dataclass
class SweepResult:
    kernels: list[str]
    rows: list[SweepRow]

    def dominant_kernel(self, lambda_max: float) -> str:
        """Kernel with the highest seed-averaged normalized activation."""
        acts = np.mean(
            [r.normalized_activations for r in self.rows if r.lambda_max == lambda_max],
            axis=0,
        )
        return self.kernels[int(np.argmax(acts))]

    def mean_r2(self, lambda_max: float) -> float:
        return float(
            np.mean([r.r2 for r in self.rows if r.lambda_max == lambda_max])
        )

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ["lambda_max", "seed", "r2"] + [f"norm_a[{k}]" for k in self.kernels]
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(
                    f"{float(r.lambda_max)!r},{r.seed},{float(r.r2)!r},"
                    + ",".join(f"{float(v)!r}" for v in r.normalized_activations)
                    + "\n"
                )


def _sweep_one(args):
    config, dataset, lam_max, seed = args
    cfg = dataclasses.replace(config, lambda_max=lam_max, seed=seed)
    model = build(cfg, dataset.geometry)
    train(model, dataset, cfg)
    means = activation_means(model, dataset)
    peak = means.max() if means.max() > 0 else 1.0
    return SweepRow(
        lambda_max=lam_max,
        seed=seed,
        r2=prediction_r2(model, dataset),
        normalized_activations=means / peak,
    )


def lambda_sweep(
    config: TetrisConfig,
    dataset: SpinDataset,
    lambda_max_list,
    repeats: int = 5,
    threads: int = 1,
) -> SweepResult:
    """Train ``repeats`` fresh models per lambda_max and profile the outcome."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    jobs = [
        (config, dataset, float(lam), config.seed + 1000 * r)
        for lam in lambda_max_list
        for r in range(repeats)
    ]
    if threads > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    return SweepResult(kernels=[k.label for k in config.kernels], rows=rows)


def save_model(path, model: TetrisModel, config: TetrisConfig | None = None) -> None:
    header = {
        "kernels": [[k.d1, k.d2, k.dilation] for k in model.kernels],
        "filters": model.branches[0].filters,
        "task_widths": model.task.widths,
        "lambdas": list(map(float, model.lambdas)),
        "geometry": list(model.geometry),
        "label_scale": list(model.label_scale) if model.label_scale else None,
    }
    if config is not None:
        header["config"] = {
            "optimizer": config.optimizer,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "seed": config.seed,
        }
    save_checkpoint(path, header, [p.data for p in model.parameters()])


def load_model(path) -> TetrisModel:
    header, flat = load_checkpoint(path)
    kernels = tuple(KernelSpec(*k) for k in header["kernels"])
    geometry = tuple(header["geometry"])
    config = TetrisConfig(
        kernels=kernels,
        filters_per_branch=header["filters"],
        task_widths=tuple(header["task_widths"][1:]),
        lambda_min=min(header["lambdas"]),
        lambda_max=max(header["lambdas"]),
    )
    model = build(config, geometry)
    model.lambdas = np.asarray(header["lambdas"], dtype=float)
    if header.get("label_scale"):
        model.label_scale = tuple(header["label_scale"])
    offset = 0
    for p in model.parameters():
        n = p.data.size
        p.data[...] = flat[offset : offset + n].reshape(p.data.shape)
        offset += n
    if offset != flat.size:
        raise ValueError(
            f"checkpoint parameter count mismatch: read {offset}, file has {flat.size}"
        )
    return model
