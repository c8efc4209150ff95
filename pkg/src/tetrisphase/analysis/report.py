"""Analysis report: CSV curves, formula text, and rendered figures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..spin_models import SpinDataset
from ..tetriscnn import TetrisModel, TrainTrace, prediction_r2
from .distill import DistillResult, NoActiveBranchError, distill_network
from .sr import SrConfig
from .transition import Curve, TransitionEstimate, curve_from_samples, transition_location


@dataclass
class AnalysisReport:
    prediction_curve: Curve
    output_transition: TransitionEstimate
    activation_curves: dict[str, Curve]
    activation_transition: TransitionEstimate | None
    transition_shift: float | None  # output argmax minus activation argmax
    prediction_r2: float
    distill: DistillResult | None
    warning: str | None = None


def analyze(
    model: TetrisModel,
    dataset: SpinDataset,
    sr_config: SrConfig | None = None,
    dominance_threshold: float = 0.5,
) -> AnalysisReport:
    """Run the full analysis chain on a trained model."""
    preds, acts = model.forward(dataset.snapshots)
    preds = model.unscale(preds)
    pred_curve = curve_from_samples(dataset.labels, preds)
    output_transition = transition_location(pred_curve)

    act_curves = {
        k.label: curve_from_samples(dataset.labels, acts[:, i])
        for i, k in enumerate(model.kernels)
    }

    warning = None
    distill_result = None
    activation_transition = None
    shift = None
    try:
        distill_result = distill_network(
            model, dataset, sr_config or SrConfig(), dominance_threshold
        )
        dominant_label = distill_result.dominant[0][0].label
        activation_transition = transition_location(act_curves[dominant_label])
        shift = output_transition.location - activation_transition.location
    except NoActiveBranchError:
        warning = "no dominant branch: all normalized activations below threshold"

    return AnalysisReport(
        prediction_curve=pred_curve,
        output_transition=output_transition,
        activation_curves=act_curves,
        activation_transition=activation_transition,
        transition_shift=shift,
        prediction_r2=prediction_r2(model, dataset),
        distill=distill_result,
        warning=warning,
    )


def _plot_curve(curve: Curve, path: Path, title: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if curve.y_err is not None:
        ax.errorbar(curve.x, curve.y, yerr=curve.y_err, fmt="o-", ms=3, lw=1)
    else:
        ax.plot(curve.x, curve.y, "o-", ms=3, lw=1)
    ax.set_xlabel("label")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_activations(curves: dict[str, Curve], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for label, c in curves.items():
        ax.plot(c.x, c.y, lw=1.2, label=label)
    ax.set_xlabel("label")
    ax.set_ylabel("mean a_k")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_trace(trace: TrainTrace, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    arr = np.stack(trace.val_abs_activations)
    for i, label in enumerate(trace.kernels):
        ax.plot(arr[:, i], lw=1.2, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean |a_k| (validation)")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_report(
    report: AnalysisReport,
    out_dir,
    trace: TrainTrace | None = None,
    figures: bool = True,
) -> Path:
    """Write the delimited outputs, formulas, summary and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report.prediction_curve.to_csv(out / "prediction_curve.csv")
    report.output_transition.derivative.to_csv(out / "output_derivative.csv")
    with open(out / "activation_curves.csv", "w") as fh:
        labels = list(report.activation_curves)
        fh.write("x," + ",".join(f"a[{k}]" for k in labels) + "\n")
        xs = report.prediction_curve.x
        for i, xi in enumerate(xs):
            row = [f"{float(report.activation_curves[k].y[i])!r}" for k in labels]
            fh.write(f"{float(xi)!r}," + ",".join(row) + "\n")
    if trace is not None:
        trace.to_csv(out / "train_trace.csv")

    with open(out / "formulas.txt", "w") as fh:
        if report.distill is not None:
            for line in report.distill.formulas():
                fh.write(line + "\n")

    summary = {
        "output_transition": report.output_transition.location,
        "activation_transition": (
            report.activation_transition.location
            if report.activation_transition
            else None
        ),
        "transition_shift": report.transition_shift,
        "prediction_r2": report.prediction_r2,
        "dominant_branches": (
            [[k.label, v] for k, v in report.distill.dominant]
            if report.distill
            else []
        ),
        "warning": report.warning,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)

    if figures:
        _plot_curve(
            report.prediction_curve, out / "prediction_curve.svg",
            "network output vs label", "prediction",
        )
        _plot_curve(
            report.output_transition.derivative, out / "output_derivative.svg",
            f"|d output / d label| (argmax at {report.output_transition.location:.3f})",
            "derivative",
        )
        _plot_activations(report.activation_curves, out / "activation_curves.svg")
        if trace is not None and trace.val_abs_activations:
            _plot_trace(trace, out / "train_trace.svg")
    return out
