"""Declarative experiment configuration (YAML key-value tree).

Schema (see README for the full reference):

    seed: 1234
    model:
      kind: tfim | igt
      tfim: {J, N, boundary, basis, snapshots_per_g, g_grid | g_grid_spec}
      igt:  {L, sweeps, decorrelation_sweeps, samples_per_beta,
             beta_grid | beta_grid_spec}
    network: fields of TetrisConfig (kernels as [d1, d2, dilation] triples)
    analysis:
      dominance_threshold: 0.5
      sr: fields of SrConfig
    paths: {dataset, checkpoint, report_dir, sweep_csv}

Grid specs {start, stop, num} expand to np.linspace grids.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .analysis.sr import SrConfig
from .spin_models import IgtParams, TfimParams
from .tetriscnn import TetrisConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    model_kind: str  # "tfim" | "igt"
    tfim: TfimParams | None
    igt: IgtParams | None
    network: TetrisConfig
    sr: SrConfig
    dominance_threshold: float = 0.5
    paths: dict = field(default_factory=dict)

    @property
    def model_params(self):
        return self.tfim if self.model_kind == "tfim" else self.igt


def _expand_grid(section: dict, name: str) -> tuple[float, ...]:
    if name in section:
        return tuple(float(v) for v in section[name])
    spec = section.get(f"{name}_spec")
    if spec is not None:
        return tuple(np.linspace(spec["start"], spec["stop"], int(spec["num"])))
    return ()


def _dataclass_kwargs(cls, section: dict, skip=()) -> dict:
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - valid - set(skip)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return {k: v for k, v in section.items() if k in valid}


def parse_config(tree: dict) -> ExperimentConfig:
    seed = int(tree.get("seed", 0))
    model = dict(tree.get("model", {}))
    kind = model.get("kind")
    if kind not in ("tfim", "igt"):
        raise ConfigError(f"model.kind must be 'tfim' or 'igt', got {kind!r}")

    tfim = igt = None
    if kind == "tfim":
        section = dict(model.get("tfim", {}))
        grid = _expand_grid(section, "g_grid")
        section.pop("g_grid", None)
        section.pop("g_grid_spec", None)
        kwargs = _dataclass_kwargs(TfimParams, section)
        kwargs.setdefault("rng_seed", seed)
        tfim = TfimParams(g_grid=grid, **kwargs)
    else:
        section = dict(model.get("igt", {}))
        grid = _expand_grid(section, "beta_grid")
        section.pop("beta_grid", None)
        section.pop("beta_grid_spec", None)
        kwargs = _dataclass_kwargs(IgtParams, section)
        kwargs.setdefault("rng_seed", seed)
        igt = IgtParams(beta_grid=grid, **kwargs)

    net_section = dict(tree.get("network", {}))
    if "kernels" not in net_section:
        raise ConfigError("network.kernels is required")
    net_kwargs = _dataclass_kwargs(TetrisConfig, net_section)
    net_kwargs["kernels"] = tuple(tuple(k) for k in net_kwargs["kernels"])
    if "task_widths" in net_kwargs:
        net_kwargs["task_widths"] = tuple(net_kwargs["task_widths"])
    net_kwargs.setdefault("seed", seed)
    network = TetrisConfig(**net_kwargs)

    analysis = dict(tree.get("analysis", {}))
    sr_section = dict(analysis.get("sr", {}))
    sr_kwargs = _dataclass_kwargs(SrConfig, sr_section)
    sr_kwargs.setdefault("seed", seed)
    sr = SrConfig(**sr_kwargs)
    threshold = float(analysis.get("dominance_threshold", 0.5))

    return ExperimentConfig(
        seed=seed,
        model_kind=kind,
        tfim=tfim,
        igt=igt,
        network=network,
        sr=sr,
        dominance_threshold=threshold,
        paths=dict(tree.get("paths", {})),
    )


def apply_override(tree: dict, assignment: str) -> None:
    """Apply a dotted ``key.path=value`` override in place (YAML-parsed value)."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into non-mapping key {k!r}")
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(path, overrides=(), seed: int | None = None) -> ExperimentConfig:
    with open(path) as fh:
        tree = yaml.safe_load(fh) or {}
    for ov in overrides:
        apply_override(tree, ov)
    if seed is not None:
        tree["seed"] = seed
        # reseed nested sections that default from the global seed
        tree.get("model", {}).get("tfim", {}).pop("rng_seed", None)
        tree.get("model", {}).get("igt", {}).pop("rng_seed", None)
        tree.get("network", {}).pop("seed", None)
        tree.get("analysis", {}).get("sr", {}).pop("seed", None)
    return parse_config(tree)
