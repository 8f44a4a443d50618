"""Pose-recovery experiments: noise sweep, loss-weight and view-count
ablations, and the periodic-texture failure case.

Every trial aligns a local model against the ground-truth global model.
The local model is the ground truth resampled into a client frame whose
true pose is a quarter turn plus a whole-voxel shift, so the truth is an
exact minimum of the loss.  Trial ``i`` draws its noise from
``default_rng([seed, i])`` and gives the same result under any worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .align import MCConfig, TrialResult, ViewConfig, inject_and_recover
from .config import AlignSettings, ExperimentSettings
from .field import RegionBounds, VoxelField, resample
from .geometry import Pose
from .scene import SceneSpec, build_scene

SWEEP_COLUMNS = ["trial", "init_trans_m", "init_rot_deg", "final_trans_m", "final_rot_deg", "converged"]
EXTRA_COLUMNS = ["noise_scale", "status", "final_loss", "truth_loss", "initial_loss"]


def reference_pose(spec: SceneSpec, yaw_deg: float = 90.0, shift_voxels=(8, -4, 0)) -> Pose:
    return Pose.rot_z(yaw_deg, spec.voxel_size * np.asarray(shift_voxels, dtype=float))


def reference_pair(
    spec: SceneSpec, region_frac: float = 0.75, yaw_deg: float = 90.0, shift_voxels=(8, -4, 0)
) -> tuple[VoxelField, VoxelField, Pose]:
    """Ground truth, a local model of its central ``region_frac`` and the
    local-to-global pose.

    A quarter-turn yaw and whole-voxel shift keep local nodes on global
    nodes, so resampling is exact and the local model equals the truth
    inside its region.
    """
    gt = build_scene(spec)
    vs = spec.voxel_size
    res = gt.dims[0]
    m = int(round((1.0 - region_frac) / 2 * (res - 1)))
    top = gt.dims[2] - 1
    world = RegionBounds(gt.origin + vs * np.array([m, m, 0]), gt.origin + vs * np.array([res - 1 - m, res - 1 - m, top]))
    true = reference_pose(spec, yaw_deg, shift_voxels)
    local = resample(gt, true, world.transformed(true.inverse()))
    return gt, local, true


@lru_cache(maxsize=4)
def _cached_pair(spec_json: str, region_frac: float):
    return reference_pair(SceneSpec.from_dict(json.loads(spec_json)), region_frac)


@dataclass(frozen=True)
class TrialSpec:
    """One trial, picklable for worker processes."""

    spec_json: str
    region_frac: float
    noise_trans: float
    noise_rot: float
    seed: int
    index: int
    lam: float
    views: ViewConfig
    mc: MCConfig
    rays_per_view: int
    n_samples: int
    tol: tuple
    horizontal_offset: float = 0.0  # if set: exactly this far sideways, in a random direction


def run_trial(t: TrialSpec) -> TrialResult:
    gt, local, true = _cached_pair(t.spec_json, t.region_frac)
    rng = np.random.default_rng([t.seed, t.index])
    noise = None
    if t.horizontal_offset > 0:
        b = rng.uniform(0, 2 * np.pi)
        yaw = rng.uniform(-t.noise_rot, t.noise_rot)
        noise = Pose.rot_z(yaw, t.horizontal_offset * np.array([np.cos(b), np.sin(b), 0.0]))
    return inject_and_recover(
        gt, local, true, (t.noise_trans, t.noise_rot), rng, t.mc, t.views, t.lam, t.rays_per_view, t.n_samples,
        t.tol, noise=noise,
    )


def run_trials(trials: list[TrialSpec], workers: int = 1) -> list[TrialResult]:
    if workers > 1 and len(trials) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(run_trial, trials))
    return [run_trial(t) for t in trials]


def tolerance(spec: SceneSpec) -> tuple[float, float]:
    """Success thresholds: 1% of the scene extent and one degree."""
    return 0.01 * spec.extent, 1.0


def normalized_error(r: TrialResult, tol: tuple[float, float]) -> float:
    """Translation and rotation error in units of their tolerances, summed."""
    return r.final_trans / tol[0] + r.final_rot / tol[1]


def _trial_specs(spec, settings: AlignSettings, ex: ExperimentSettings, noise_trans, noise_rot, seed, n,
                 lam=None, views=None, offset=0, probe=False) -> list[TrialSpec]:
    mc = dataclasses.replace(settings.mc, probe=probe)
    return [
        TrialSpec(
            json.dumps(spec.to_dict()), ex.region_frac, noise_trans, noise_rot, seed, offset + i,
            settings.lam if lam is None else lam, views or settings.views, mc, settings.rays_per_view,
            settings.n_samples, tolerance(spec),
        )
        for i in range(n)
    ]


@dataclass
class SweepRow:
    trial: int
    noise_scale: float
    result: TrialResult

    def as_dict(self) -> dict:
        r = self.result
        return {
            "trial": self.trial, "init_trans_m": r.init_trans, "init_rot_deg": r.init_rot,
            "final_trans_m": r.final_trans, "final_rot_deg": r.final_rot, "converged": r.converged,
            "noise_scale": self.noise_scale, "status": r.status, "final_loss": r.final_loss,
            "truth_loss": r.truth_loss, "initial_loss": r.initial_loss,
        }


def sweep_noise(spec: SceneSpec, settings: AlignSettings, ex: ExperimentSettings, seed: int = 0,
                workers: int = 1, scales=None) -> list[SweepRow]:
    """``ex.trials`` trials at each noise scale; scale 1 is ``noise_frac`` of
    the extent and ``noise_rot`` degrees."""
    scales = ex.noise_scales if scales is None else scales
    specs, meta = [], []
    for k, s in enumerate(scales):
        batch = _trial_specs(spec, settings, ex, s * ex.noise_frac * spec.extent, s * ex.noise_rot, seed, ex.trials,
                             offset=1000 * k)
        specs += batch
        meta += [(t.index, s) for t in batch]
    results = run_trials(specs, workers)
    return [SweepRow(i, s, r) for (i, s), r in zip(meta, results)]


def success_rate(rows: list[SweepRow]) -> float:
    return float(np.mean([r.result.status == "ok" for r in rows])) if rows else 0.0


@dataclass
class AblationRow:
    parameter: str
    value: float
    seed: int
    result: TrialResult
    error: float

    def as_dict(self) -> dict:
        r = self.result
        return {
            "parameter": self.parameter, "value": self.value, "seed": self.seed, "final_trans_m": r.final_trans,
            "final_rot_deg": r.final_rot, "error": self.error, "status": r.status, "converged": r.converged,
        }


def _ablate(spec, settings, ex, name, values, make, seed, workers, noise_scale) -> list[AblationRow]:
    specs, meta = [], []
    for v in values:
        batch = make(v)
        specs += batch
        meta += [(v, t.index) for t in batch]
    results = run_trials(specs, workers)
    tol = tolerance(spec)
    return [AblationRow(name, float(v), i, r, normalized_error(r, tol)) for (v, i), r in zip(meta, results)]


def ablate_lambda(spec: SceneSpec, settings: AlignSettings, ex: ExperimentSettings, seed: int = 0, workers: int = 1,
                  lambdas=None, noise_scale: float = 1.0) -> list[AblationRow]:
    """Same noisy starts for every loss weight."""
    nt, nr = noise_scale * ex.noise_frac * spec.extent, noise_scale * ex.noise_rot
    return _ablate(
        spec, settings, ex, "lambda", ex.lambdas if lambdas is None else lambdas,
        lambda v: _trial_specs(spec, settings, ex, nt, nr, seed, ex.seeds, lam=v), seed, workers, noise_scale,
    )


def ablate_views(spec: SceneSpec, settings: AlignSettings, ex: ExperimentSettings, seed: int = 0, workers: int = 1,
                 counts=None, noise_scale: float = 1.0) -> list[AblationRow]:
    """Same noisy starts for every number of target views."""
    nt, nr = noise_scale * ex.noise_frac * spec.extent, noise_scale * ex.noise_rot
    return _ablate(
        spec, settings, ex, "views", ex.view_counts if counts is None else counts,
        lambda v: _trial_specs(spec, settings, ex, nt, nr, seed, ex.seeds,
                               views=dataclasses.replace(settings.views, j_views=int(v))),
        seed, workers, noise_scale,
    )


def mean_error(rows: list[AblationRow]) -> dict:
    """value -> mean normalized error over seeds."""
    out = {}
    for v in sorted({r.value for r in rows}):
        out[v] = float(np.mean([r.error for r in rows if r.value == v]))
    return out


def periodic_spec(seed: int = 0, period: float = 2.0) -> SceneSpec:
    """A bare checkerboard ground: shifting by a period changes nothing."""
    return SceneSpec(seed=seed, n_boxes=0, n_spheres=0, texture="checker", checker_period=period, tint=False)


def periodic_trials(settings: AlignSettings, ex: ExperimentSettings, trials: int = 5, seed: int = 0,
                    workers: int = 1, period: float = 2.0, noise_periods: float = 1.5) -> list[TrialResult]:
    """Horizontal offsets of ``noise_periods`` pattern periods (plus a
    small yaw) on the checkerboard, with the ambiguity probe on; every
    trial should come back flagged."""
    spec = periodic_spec(seed, period)
    specs = [dataclasses.replace(t, horizontal_offset=noise_periods * period)
             for t in _trial_specs(spec, settings, ex, noise_periods * period, 5.0, seed, trials, probe=True)]
    return run_trials(specs, workers)


# output -----------------------------------------------------------------------


def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})
