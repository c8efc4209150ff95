"""Distillation of a trained model into closed-form expressions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..spin_models import SpinDataset
from ..tetriscnn import TetrisModel, dominant_branches, r2_score
from .linfit import LinearFit, branch_correlator_features, branch_linear_fit, per_label_means
from .sr import Expression, SrConfig, sr_fit


class NoActiveBranchError(RuntimeError):
    pass


@dataclass
class FittedExpression:
    expression: Expression
    r2_fit: float
    r2_holdout: float
    target_name: str

    def formula(self) -> str:
        return (
            f"{self.target_name} = {self.expression}  "
            f"(R2 = {self.r2_holdout:.4f}, complexity = {self.expression.complexity})"
        )


@dataclass
class DistillResult:
    branch_fits: dict[int, LinearFit]  # branch index -> linear fit
    output_vs_correlators: FittedExpression | None
    output_vs_activations: FittedExpression | None
    pareto_correlators: list[Expression] = field(default_factory=list)
    pareto_activations: list[Expression] = field(default_factory=list)
    dominant: list = field(default_factory=list)  # (kernel, normalized |a|)

    def formulas(self) -> list[str]:
        out = [
            fit.formula(f"a[{k}]")
            for k, fit in sorted(self.branch_fits.items())
        ]
        for fitted in (self.output_vs_correlators, self.output_vs_activations):
            if fitted is not None:
                out.append(fitted.formula())
        return out


def _holdout_split(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic interleaved split of grid points (every 5th held out)."""
    idx = np.arange(n)
    hold = idx[2::5]
    fit = np.setdiff1d(idx, hold)
    return fit, hold


def select_expression(
    front: list[Expression],
    X_fit: np.ndarray,
    y_fit: np.ndarray,
    X_hold: np.ndarray,
    y_hold: np.ndarray,
    target_name: str,
    min_r2: float = 0.95,
) -> FittedExpression | None:
    """Lowest-complexity front member reaching ``min_r2`` on held-out points;
    falls back to the best-scoring member when none qualifies."""
    best = None
    for expr in front:  # front is ordered by complexity
        pred_hold = expr.evaluate(X_hold)
        if not np.all(np.isfinite(pred_hold)):
            continue
        r2_hold = r2_score(pred_hold, y_hold)
        r2_fit = r2_score(expr.evaluate(X_fit), y_fit)
        cand = FittedExpression(expr, r2_fit, r2_hold, target_name)
        if r2_hold >= min_r2:
            return cand
        if best is None or r2_hold > best.r2_holdout:
            best = cand
    return best


def distill_network(
    model: TetrisModel,
    dataset: SpinDataset,
    sr_config: SrConfig,
    dominance_threshold: float = 0.5,
    min_r2: float = 0.95,
) -> DistillResult:
    """Linear fits per dominant branch + symbolic fits of the whole network.

    All symbolic fits are over per-label means, mirroring the averaging
    convention of the reported order-parameter curves.
    """
    dominant = dominant_branches(model, dataset, dominance_threshold)
    if not dominant:
        raise NoActiveBranchError("no branch exceeds the dominance threshold")
    dom_indices = [model.kernels.index(k) for k, _ in dominant]

    preds, acts = model.forward(dataset.snapshots)
    preds = model.unscale(preds)
    grid, pred_means = per_label_means(dataset.labels, preds[:, None])
    y = pred_means[:, 0]

    branch_fits = {k: branch_linear_fit(model, dataset, k) for k in dom_indices}

    # features: per-label mean sub-footprint correlators of dominant branches
    feat_cols, feat_names = [], []
    seen = set()
    for k in dom_indices:
        cols, names = branch_correlator_features(dataset, model.kernels[k])
        for j, name in enumerate(names):
            if name not in seen:
                seen.add(name)
                feat_cols.append(cols[:, j])
                feat_names.append(name)
    _, corr_means = per_label_means(dataset.labels, np.stack(feat_cols, axis=1))

    _, act_means = per_label_means(dataset.labels, acts[:, dom_indices])
    act_names = [f"a[{model.kernels[k].label}]" for k in dom_indices]

    fit_idx, hold_idx = _holdout_split(len(grid))

    front_corr = sr_fit(
        corr_means[fit_idx], y[fit_idx], sr_config, feature_names=feat_names
    )
    front_act = sr_fit(
        act_means[fit_idx], y[fit_idx], sr_config, feature_names=act_names
    )
    return DistillResult(
        branch_fits=branch_fits,
        output_vs_correlators=select_expression(
            front_corr, corr_means[fit_idx], y[fit_idx],
            corr_means[hold_idx], y[hold_idx], "output(correlators)", min_r2,
        ),
        output_vs_activations=select_expression(
            front_act, act_means[fit_idx], y[fit_idx],
            act_means[hold_idx], y[hold_idx], "output(activations)", min_r2,
        ),
        pareto_correlators=front_corr,
        pareto_activations=front_act,
        dominant=dominant,
    )
