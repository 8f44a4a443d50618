"""Run configuration: one YAML (or JSON) file with optional sections.

Schema (every key optional; unknown keys are rejected)::

    seed: 0
    workers: 1
    scene:   SceneSpec fields (seed, bounds {min, max}, resolution, texture, ...)
    run:     n_clients, k_range, n_views, n_eval, image_size, fov_deg, altitude,
             render_samples, noise_trans, noise_rot, client_yaw, arrival,
             eval_every, eval_split, reference_true_pose, defer_rounds, snap_grid
    train:   TrainConfig fields (batch_size, epochs, lr_density, lr_sh, n_samples, ...)
    align:   enabled, lam, rays_per_view, n_samples, views {ViewConfig fields},
             mc {MCConfig fields}
    aggregate: eta, voxel_size, region_mode
    eval:    min_psnr
    experiments: noise_scales, trials, lambdas, view_counts, seeds, region_frac
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import yaml

from .align import MCConfig, ViewConfig
from .field import RegionBounds
from .scene import SceneSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


@dataclasses.dataclass
class AlignSettings:
    enabled: bool = True
    lam: float = 0.75
    rays_per_view: int = 256
    n_samples: int = 32
    views: ViewConfig = dataclasses.field(default_factory=ViewConfig)
    mc: MCConfig = dataclasses.field(default_factory=lambda: MCConfig(refine_rays=1024))
    # search prior follows the run's noise bounds, never narrower than this (m, deg)
    spread_from_noise: bool = True
    min_spread: tuple = (0.25, 2.0)
    # keep the claimed pose unless the loss drops by this fraction
    min_gain: float = 0.02


@dataclasses.dataclass
class ExperimentSettings:
    noise_scales: tuple = (0.25, 0.5, 0.75, 1.0)
    trials: int = 20
    lambdas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    view_counts: tuple = (1, 2, 4, 8)
    seeds: int = 10
    noise_frac: float = 0.2  # translation noise as a fraction of the scene extent
    noise_rot: float = 20.0
    region_frac: float = 0.75  # client region side as a fraction of the scene


def _build(cls, data, where: str, base=None):
    """``cls`` from a mapping; keys absent from it keep ``base`` (or class) defaults."""
    if data is None:
        return base if base is not None else cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return dataclasses.replace(base, **data) if base is not None else cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _tuples(d: dict, keys) -> dict:
    return {k: (tuple(v) if k in keys and isinstance(v, list) else v) for k, v in d.items()}


def parse_scene(data) -> SceneSpec:
    if data is None:
        return SceneSpec()
    data = dict(data)
    if "bounds" in data:
        b = data["bounds"]
        try:
            data["bounds"] = RegionBounds(tuple(b["min"]), tuple(b["max"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"scene.bounds: {e}") from e
    if data.get("texture", "smooth") not in ("smooth", "checker", "flat"):
        raise ConfigError(f"scene.texture: unknown texture {data['texture']!r}")
    try:
        return SceneSpec.from_dict(data)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"scene: {e}") from e


def parse_align(data) -> AlignSettings:
    data = dict(data or {})
    views = _build(ViewConfig, data.pop("views", None), "align.views")
    mc_data = data.pop("mc", None)
    mc = _build(MCConfig, _tuples(mc_data, {"recentre_spread"}) if mc_data else {"refine_rays": 1024}, "align.mc")
    out = _build(AlignSettings, _tuples(data, {"min_spread"}), "align")
    out.views, out.mc = views, mc
    if not 0.0 <= out.lam <= 1.0:
        raise ConfigError("align.lam must lie in [0, 1]")
    if views.mode not in ("synth", "nearest"):
        raise ConfigError(f"align.views.mode: unknown mode {views.mode!r}")
    return out


def load_mapping(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def from_mapping(data: dict):
    """RunConfig from a parsed mapping."""
    from .harness import RunConfig

    allowed = {"seed", "workers", "scene", "run", "train", "align", "aggregate", "eval", "experiments"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    run = dict(data.get("run") or {})
    run.update(data.get("aggregate") or {})
    run.update(data.get("eval") or {})
    for k in ("seed", "workers"):
        if k in data:
            run[k] = data[k]
    run = _tuples(run, {"k_range"})
    cfg = _build(RunConfig, run, "run")
    cfg.scene = parse_scene(data.get("scene"))
    cfg.train = _build(TrainConfig, data.get("train"), "train", base=cfg.train)
    cfg.align = parse_align(data.get("align"))
    cfg.experiments = _build(ExperimentSettings, _tuples(data.get("experiments") or {}, {
        "noise_scales", "lambdas", "view_counts"}), "experiments")
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(path=None):
    """Parse and validate a config file; ``None`` gives the defaults."""
    return from_mapping(load_mapping(path) if path is not None else {})
