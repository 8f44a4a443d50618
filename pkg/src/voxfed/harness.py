"""End-to-end asynchronous federated run.

Clients train in parallel; the server takes them in a seeded arrival order,
aligns each against the global model, merges it, and renders held-out
views after every ``eval_every`` arrivals.  The first arrival defines the
map and is merged without alignment.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .aggregate import ClientUpdate, GlobalModel, Journal, aggregate, cache_region
from .align import AlignmentError, AlignmentResult, MCConfig, align, build_problem
from .config import AlignSettings, ExperimentSettings
from .field import RegionBounds, VoxelField
from .geometry import Camera, Pose, rotation_error_deg, translation_error
from .io import JsonlLog, decode_vxf, encode_vxf
from .render import PSNR_CAP, psnr, render_image
from .scene import (
    Primitive,
    scene_primitives,
    SceneSpec,
    build_scene,
    generate_trajectory,
    inject_noise,
    localize_client,
    partition_clients,
    render_views,
)
from .train import ClientDataset, TrainConfig, train_client

ARRIVAL_RANDOM = "random"
ARRIVAL_FIXED = "fixed"


def _default_train() -> TrainConfig:
    return TrainConfig(batch_size=4096, epochs=10, lr_density=0.1, lr_sh=0.05, n_samples=64, min_views=2)


@dataclass
class RunConfig:
    scene: SceneSpec = dc_field(default_factory=SceneSpec)
    n_clients: int = 8
    k_range: tuple = (24, 48)
    n_views: int = 64
    n_eval: int = 8
    image_size: int = 64
    fov_deg: float = 60.0
    altitude: float = 10.0
    render_samples: int = 128
    noise_trans: float = 0.0
    noise_rot: float = 0.0
    client_yaw: float = 0.0
    arrival: str = ARRIVAL_RANDOM
    eval_every: int = 1
    eval_split: bool = False
    reference_true_pose: bool = True
    defer_rounds: int = 1
    eta: float = 0.9
    voxel_size: float | None = None
    region_mode: str = "mask"
    snap_grid: bool = True
    min_psnr: float = 25.0
    seed: int = 0
    workers: int = 1
    train: TrainConfig = dc_field(default_factory=_default_train)
    align: AlignSettings = dc_field(default_factory=AlignSettings)
    experiments: ExperimentSettings = dc_field(default_factory=ExperimentSettings)

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        k0, k1 = self.k_range
        if not 1 <= k0 <= k1 <= self.n_views:
            raise ValueError(f"k_range {self.k_range} must satisfy 1 <= k_min <= k_max <= n_views")
        if self.arrival not in (ARRIVAL_RANDOM, ARRIVAL_FIXED):
            raise ValueError(f"unknown arrival model {self.arrival!r}")
        if self.region_mode not in ("mask", "box"):
            raise ValueError(f"unknown region mode {self.region_mode!r}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.eval_every < 1 or self.workers < 1 or self.n_eval < 1:
            raise ValueError("eval_every, workers and n_eval must be >= 1")
        if self.noise_trans < 0 or self.noise_rot < 0:
            raise ValueError("noise bounds must be non-negative")

    @property
    def global_voxel_size(self) -> float:
        return self.voxel_size if self.voxel_size is not None else self.scene.voxel_size

    def train_for(self, client_id: int) -> TrainConfig:
        return dataclasses.replace(
            self.train, seed=int(np.random.SeedSequence([self.seed, 7, client_id]).generate_state(1)[0]),
            voxel_size=self.global_voxel_size,
        )


# world construction ---------------------------------------------------------


@dataclass
class World:
    """Everything derived from the config alone: ground truth, cameras,
    clients and their images."""

    gt: VoxelField
    cameras: list
    eval_cameras: list
    images: list
    eval_images: list
    clients: list
    local_cameras: dict
    local_bounds: dict


def client_bounds(spec: SceneSpec, cameras: list[Camera], pad: float = 1.0) -> RegionBounds:
    """World working volume of a client: the ground footprint of its
    cameras, padded, over the scene's full height, inside the scene."""
    lo, hi = spec.bounds.lo, spec.bounds.hi
    xy = []
    for cam in cameras:
        u = np.array([0, cam.width - 1, 0, cam.width - 1, cam.width // 2])
        v = np.array([0, 0, cam.height - 1, cam.height - 1, cam.height // 2])
        o, d = cam.rays(u, v)
        down = d[:, 2] < -1e-6
        t = (lo[2] - o[down, 2]) / d[down, 2]
        xy.append(o[down, :2] + t[:, None] * d[down, :2])
    xy = np.concatenate(xy)
    box_lo = np.maximum(xy.min(axis=0) - pad, lo[:2])
    box_hi = np.minimum(xy.max(axis=0) + pad, hi[:2])
    return RegionBounds((box_lo[0], box_lo[1], lo[2]), (box_hi[0], box_hi[1], hi[2]))


def snap_bounds(box: RegionBounds, claimed: Pose, origin, voxel_size: float) -> RegionBounds:
    """Lower ``box`` (local frame) so its corner maps under ``claimed`` onto a
    global lattice node; a client grid built on it then shares the global
    lattice exactly when the claimed pose is a translation."""
    world_lo = claimed.apply(box.lo)
    shift = (world_lo - origin) - np.floor((world_lo - origin) / voxel_size + 1e-9) * voxel_size
    lo = box.lo - claimed.rotation.T @ shift
    return RegionBounds(lo, box.hi)


def build_world(cfg: RunConfig, images: bool = True) -> World:
    spec = cfg.scene
    gt = build_scene(spec)
    traj = dict(altitude=cfg.altitude, fov_deg=cfg.fov_deg, width=cfg.image_size, height=cfg.image_size)
    cams = generate_trajectory(spec, cfg.n_views, rng=np.random.default_rng([cfg.seed, 1]), **traj)
    eval_cams = generate_trajectory(spec, cfg.n_eval, rng=np.random.default_rng([cfg.seed, 2]), margin=4.5, **traj)
    clients = partition_clients(cams, cfg.n_clients, cfg.k_range, np.random.default_rng([cfg.seed, 3]))
    yaw_rng = np.random.default_rng([cfg.seed, 4])
    local_cams, local_bounds = {}, {}
    for a in clients:
        yaw = float(yaw_rng.uniform(-cfg.client_yaw, cfg.client_yaw)) if cfg.client_yaw > 0 else 0.0
        lc, true_pose = localize_client(a, cams, yaw)
        a.true_global_pose = true_pose
        a.noisy_global_pose = true_pose
        local_cams[a.client_id] = lc
        world_box = client_bounds(spec, [cams[i] for i in a.indices])
        local_bounds[a.client_id] = world_box.transformed(true_pose.inverse())
    if cfg.noise_trans > 0 or cfg.noise_rot > 0:
        inject_noise(clients, np.random.default_rng([cfg.seed, 5]), cfg.noise_trans, cfg.noise_rot)
    if cfg.snap_grid:
        # clients know the server's lattice and their claimed pose
        for a in clients:
            local_bounds[a.client_id] = snap_bounds(local_bounds[a.client_id], a.noisy_global_pose,
                                                    spec.bounds.lo, cfg.global_voxel_size)
    imgs = render_views(gt, cams, cfg.render_samples, spec.bounds)[0] if images else []
    eval_imgs = render_views(gt, eval_cams, cfg.render_samples, spec.bounds)[0] if images else []
    return World(gt, cams, eval_cams, imgs, eval_imgs, clients, local_cams, local_bounds)


def client_dataset(world: World, client_id: int, images: list | None = None) -> ClientDataset:
    a = world.clients[client_id]
    imgs = images if images is not None else world.images
    return ClientDataset([imgs[i] for i in a.indices], world.local_cameras[client_id], world.local_bounds[client_id])


# client training ------------------------------------------------------------


def _train_job(args) -> tuple[bytes, dict]:
    dataset, cfg = args
    log = JsonlLog()
    t0 = time.perf_counter()
    field = train_client(dataset, cfg, log)
    stats = {"seconds": time.perf_counter() - t0, "steps": len(log.records),
             "final_loss": float(log.records[-1]["loss"]) if log.records else float("nan")}
    # clients ship VXF1; everything downstream sees the decoded float32 field
    return encode_vxf(field), stats


def train_clients(datasets: dict, cfg: RunConfig) -> dict:
    """client_id -> (shipped bytes, stats); identical for any worker count."""
    jobs = {cid: (ds, cfg.train_for(cid)) for cid, ds in datasets.items()}
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(cfg.workers, len(jobs))) as ex:
            futs = {cid: ex.submit(_train_job, job) for cid, job in jobs.items()}
            return {cid: f.result() for cid, f in futs.items()}
    return {cid: _train_job(job) for cid, job in jobs.items()}


# evaluation -----------------------------------------------------------------


@dataclass
class EvalResult:
    mean_psnr: float
    per_view: list
    render_seconds: float
    pixels: int


def evaluate(
    field: VoxelField,
    cameras: list[Camera],
    references: list,
    left_right_split: bool = False,
    n_samples: int = 128,
    bounds: RegionBounds | None = None,
    workers: int = 1,
) -> EvalResult:
    """PSNR of renders against references; with the split, right halves only."""
    if len(cameras) != len(references):
        raise ValueError("one reference image per camera required")
    vals = []
    t0 = time.perf_counter()
    pixels = 0
    for cam, ref in zip(cameras, references):
        ref = np.asarray(ref)
        if ref.shape != (cam.height, cam.width, 3):
            raise ValueError(f"reference shape {ref.shape} does not match camera {cam.height}x{cam.width}")
        img, _ = render_image(field, cam, n_samples, bounds, workers=workers)
        pixels += cam.width * cam.height
        if left_right_split:
            half = cam.width // 2
            img, ref = img[:, half:], ref[:, half:]
        vals.append(psnr(img, ref))
    return EvalResult(float(np.mean(vals)), vals, time.perf_counter() - t0, pixels)


# the run --------------------------------------------------------------------


@dataclass
class ClientRecord:
    client_id: int
    arrival: int
    n_images: int
    status: str  # merged | skipped
    init_trans: float
    init_rot: float
    final_trans: float
    final_rot: float
    align_loss: float
    converged: bool
    nodes: int
    train_loss: float
    reason: str = ""


@dataclass
class RunReport:
    clients: list
    psnr: list  # (arrivals processed, clients merged, mean PSNR)
    final_psnr: float
    failures: list
    timing: dict = dc_field(default_factory=dict)

    def deterministic(self) -> dict:
        """Everything except wall-clock timing."""
        return {
            "clients": [dataclasses.asdict(c) for c in self.clients],
            "psnr": [list(p) for p in self.psnr],
            "final_psnr": self.final_psnr,
            "failures": list(self.failures),
        }

    def to_dict(self) -> dict:
        out = self.deterministic()
        out["timing"] = dict(self.timing)
        return out

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return json.dumps(self.deterministic()) == json.dumps(other.deterministic())


@dataclass
class RunResult:
    report: RunReport
    model: GlobalModel
    world: World
    fields: dict  # client_id -> decoded local field
    poses: dict  # client_id -> pose used for the merge


def arrival_order(cfg: RunConfig) -> list[int]:
    if cfg.arrival == ARRIVAL_FIXED:
        return list(range(cfg.n_clients))
    return [int(i) for i in np.random.default_rng([cfg.seed, 6]).permutation(cfg.n_clients)]


def search_config(settings: AlignSettings, noise_trans: float, noise_rot: float, seed: int) -> MCConfig:
    mc = dataclasses.replace(settings.mc, seed=seed)
    if settings.spread_from_noise:
        st = max(noise_trans, settings.min_spread[0])
        sr = max(noise_rot, settings.min_spread[1])
        rs = (min(mc.recentre_spread[0], st), min(mc.recentre_spread[1], sr))
        mc = dataclasses.replace(mc, spread_trans=st, spread_rot=sr, recentre_spread=rs)
    return mc


def align_client(model: GlobalModel, field: VoxelField, claimed: Pose, settings: AlignSettings, mc: MCConfig,
                 log: JsonlLog | None = None, training_poses=None) -> tuple[Pose, AlignmentResult]:
    """Aligned pose and the search result; the claimed pose stands unless the
    loss improves by ``settings.min_gain``."""
    problem = build_problem(
        model.field, field, claimed, settings.views, settings.lam, settings.rays_per_view, settings.n_samples,
        seed=mc.seed, training_poses=training_poses,
    )
    res = align(problem, mc, log)
    if res.initial_loss - res.final_loss < settings.min_gain * res.initial_loss:
        return claimed, res
    return res.corrected_pose, res


def run(cfg: RunConfig, out_dir=None, world: World | None = None, log: JsonlLog | None = None) -> RunResult:
    """Scene, partition, parallel training, arrival-ordered align + merge, evaluation."""
    cfg.validate()
    timing = {"world": 0.0, "train": 0.0, "align": 0.0, "aggregate": 0.0, "render": 0.0}
    t0 = time.perf_counter()
    world = world or build_world(cfg)
    timing["world"] = time.perf_counter() - t0
    out = Path(out_dir) if out_dir is not None else None
    journal = None
    if out is not None:
        (out / "clients").mkdir(parents=True, exist_ok=True)
        jpath = out / "journal.jsonl"
        if jpath.exists():
            jpath.unlink()
        journal = Journal(jpath)

    t0 = time.perf_counter()
    datasets = {a.client_id: client_dataset(world, a.client_id) for a in world.clients}
    shipped = train_clients(datasets, cfg)
    timing["train"] = time.perf_counter() - t0

    model = GlobalModel.empty(cfg.scene.bounds, cfg.global_voxel_size, cfg.eta)
    fields, poses, records, curve, failures = {}, {}, {}, [], []
    pending = arrival_order(cfg)
    arrivals = 0
    merged = 0
    for attempt in range(cfg.defer_rounds + 1):
        deferred = []
        for cid in pending:
            a = world.clients[cid]
            buf, stats = shipped[cid]
            field = decode_vxf(buf)
            fields[cid] = field
            if out is not None:
                (out / "clients" / f"client_{cid:03d}.vxf").write_bytes(buf)
            claimed = a.noisy_global_pose
            rec = ClientRecord(
                cid, -1, len(a.indices), "skipped", translation_error(claimed, a.true_global_pose),
                rotation_error_deg(claimed, a.true_global_pose), float("nan"), float("nan"), float("nan"), False, 0,
                stats["final_loss"],
            )
            t1 = time.perf_counter()
            if merged == 0:
                pose = a.true_global_pose if cfg.reference_true_pose else claimed
                rec.converged = True
            elif cfg.align.enabled:
                try:
                    mc = search_config(cfg.align, cfg.noise_trans, cfg.noise_rot, int(cfg.seed * 1000 + cid))
                    pose, res = align_client(model, field, claimed, cfg.align, mc)
                except AlignmentError as e:
                    if attempt < cfg.defer_rounds:
                        deferred.append(cid)
                        continue
                    rec.reason = f"alignment: {e}"
                    pose = None
                else:
                    rec.align_loss = res.final_loss
                    # a kept claimed pose needs no convergence: the search found nothing better
                    rec.converged = res.converged or pose is claimed
                    if pose is claimed:
                        rec.reason = "claimed pose kept"
                    elif not res.converged:
                        rec.reason = "alignment did not converge"
            else:
                pose = claimed
                rec.converged = True
            timing["align"] += time.perf_counter() - t1
            arrivals += 1
            rec.arrival = arrivals
            if pose is not None:
                rec.final_trans = translation_error(pose, a.true_global_pose)
                rec.final_rot = rotation_error_deg(pose, a.true_global_pose)
            if pose is not None and rec.converged:
                t1 = time.perf_counter()
                update = ClientUpdate.from_field(field, pose, cid)
                _, n = aggregate(model, update, cfg.region_mode)
                timing["aggregate"] += time.perf_counter() - t1
                if journal is not None:
                    journal.append(cid, pose, update.region, n, out / "clients" / f"client_{cid:03d}.vxf", cfg.region_mode)
                rec.status, rec.nodes = "merged", n
                poses[cid] = pose
                merged += 1
            else:
                failures.append({"client_id": cid, "reason": rec.reason})
            records[cid] = rec
            if log is not None:
                log.write(event="arrival", **dataclasses.asdict(rec))
            if arrivals % cfg.eval_every == 0:
                ev = evaluate(model.snapshot().field, world.eval_cameras, world.eval_images, cfg.eval_split,
                              cfg.render_samples, cfg.scene.bounds)
                timing["render"] += ev.render_seconds
                curve.append((arrivals, merged, ev.mean_psnr))
        pending = deferred
        if not pending:
            break
    for cid in pending:
        failures.append({"client_id": cid, "reason": "no overlap with the global model"})
    if not curve or curve[-1][0] != arrivals:
        ev = evaluate(model.field, world.eval_cameras, world.eval_images, cfg.eval_split, cfg.render_samples,
                      cfg.scene.bounds)
        timing["render"] += ev.render_seconds
        curve.append((arrivals, merged, ev.mean_psnr))
    timing["train_client_seconds"] = float(sum(s for _, st in shipped.values() for s in [st["seconds"]]))
    if timing["render"] > 0:
        timing["pixels_per_second"] = len(curve) * cfg.n_eval * cfg.image_size**2 / timing["render"]
    report = RunReport(
        [records[c] for c in sorted(records)], curve, curve[-1][2], failures, timing,
    )
    if out is not None:
        model.save(out / "global.vxf")
        write_report(report, out)
    return RunResult(report, model, world, fields, poses)


# reports ----------------------------------------------------------------------


def write_report(report: RunReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    with open(out / "clients.csv", "w", newline="") as f:
        w = csv.writer(f)
        names = [fl.name for fl in dataclasses.fields(ClientRecord)]
        w.writerow(names)
        for c in report.clients:
            w.writerow([getattr(c, n) for n in names])
    with open(out / "psnr.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["arrivals", "merged", "psnr_db"])
        w.writerows(report.psnr)
    (out / "summary.txt").write_text(summary(report))


def summary(report: RunReport) -> str:
    merged = sum(c.status == "merged" for c in report.clients)
    lines = [
        f"clients merged: {merged}/{len(report.clients)}",
        f"final held-out PSNR: {report.final_psnr:.2f} dB",
    ]
    for c in report.clients:
        lines.append(
            f"  client {c.client_id:3d} arrival {c.arrival:3d} {c.status:8s} "
            f"pose error {c.init_trans:.3f} m / {c.init_rot:.2f} deg -> {c.final_trans:.3f} m / {c.final_rot:.2f} deg"
            + (f" ({c.reason})" if c.reason else "")
        )
    for f in report.failures:
        lines.append(f"  failure: client {f['client_id']}: {f['reason']}")
    if report.timing:
        lines.append("timing (s): " + ", ".join(f"{k}={v:.1f}" for k, v in report.timing.items()))
    return "\n".join(lines) + "\n"


# maintainability experiment -------------------------------------------------


@dataclass
class LocalUpdateReport:
    retrained: list
    modified: str
    psnr_before: float
    psnr_after: float
    outside_identical: bool
    outside_nodes: int
    changed_nodes: int
    revisits: int

    @property
    def gain(self) -> float:
        return self.psnr_after - self.psnr_before

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gain"] = self.gain
        return d


def _views_of(box: RegionBounds, cameras: list[Camera]) -> list[int]:
    pts = np.concatenate([box.corners(), box.center[None]])
    return [i for i, c in enumerate(cameras) if c.sees(pts).any()]


def local_update_experiment(
    result: RunResult,
    cfg: RunConfig,
    kind: str = "move",
    offset=(2.5, 0.0, 0.0),
    primitive: int = 0,
    revisits: int = 20,
    clients: list[int] | None = None,
    max_clients: int = 2,
) -> LocalUpdateReport:
    """Change the scene, retrain only the clients that see the change and
    re-merge them; nothing outside their regions may move.

    ``kind`` is ``move`` (shift a primitive by ``offset``), ``recolor`` or
    ``none``.  Each retrained client is merged ``revisits`` times, as if it
    kept re-uploading: one constant-eta merge moves a node only a tenth of
    the way to the new value.  By default the ``max_clients`` merged clients
    with the most views of the change retrain.
    """
    spec = cfg.scene
    prims = scene_primitives(spec)
    old = prims[primitive]
    if kind == "move":
        new = old.moved(offset)
    elif kind == "recolor":
        sh = np.array(old.sh, dtype=float).copy()
        sh.reshape(3, 9)[:, 0] = -sh.reshape(3, 9)[:, 0]
        new = Primitive(old.kind, old.center, old.size, old.sigma, sh)
    elif kind == "none":
        new = old
    else:
        raise ValueError(f"unknown modification {kind!r}")
    # rebuild with the replacement: drop the random primitives, re-add them as extras
    extra = [p for i, p in enumerate(prims) if i != primitive] + [new]
    new_gt = build_scene(dataclasses.replace(spec, n_boxes=0, n_spheres=0, extra=extra))
    changed = _union(old.bounds, new.bounds)
    world = result.world
    if clients is None:
        seen = set(_views_of(changed, world.cameras)) if kind != "none" else set()
        views_of = {c: len(seen & set(world.clients[c].indices)) for c in result.poses}
        ranked = sorted((c for c in views_of if views_of[c] > 0), key=lambda c: (-views_of[c], c))
        clients = sorted(ranked[:max_clients])
    # score only pixels whose ground truth changed, on eval views that see the change
    views = _views_of(changed, world.eval_cameras) or list(range(len(world.eval_cameras)))
    eval_cams = [world.eval_cameras[i] for i in views]
    refs = render_views(new_gt, eval_cams, cfg.render_samples, spec.bounds)[0]
    masks = [np.abs(a - b).max(axis=-1) > 0.02 for a, b in zip(refs, [world.eval_images[i] for i in views])]
    if not any(m.any() for m in masks):
        masks = [np.ones(m.shape, dtype=bool) for m in masks]
    before = _masked_psnr(result.model.field, eval_cams, refs, masks, cfg)
    model = result.model.snapshot()
    prior = model.snapshot()
    touched = np.zeros(model.field.dims, dtype=bool)
    if clients:
        needed = sorted({i for c in clients for i in world.clients[c].indices})
        new_imgs = dict(zip(needed, render_views(new_gt, [world.cameras[i] for i in needed], cfg.render_samples,
                                                 spec.bounds)[0]))
        datasets = {}
        for c in clients:
            a = world.clients[c]
            datasets[c] = ClientDataset([new_imgs[i] for i in a.indices], world.local_cameras[c], world.local_bounds[c])
        shipped = train_clients(datasets, cfg)
        for c in clients:
            field = decode_vxf(shipped[c][0])
            update = ClientUpdate.from_field(field, result.poses[c], c)
            nodes = cache_region(update, model.field, cfg.region_mode).nodes
            touched.reshape(-1)[nodes] = True
            for _ in range(revisits):
                aggregate(model, update, cfg.region_mode)
    after = _masked_psnr(model.field, eval_cams, refs, masks, cfg)
    outside = ~touched
    same = (
        np.array_equal(model.field.density[outside], prior.field.density[outside])
        and np.array_equal(model.field.sh[outside], prior.field.sh[outside])
        and np.array_equal(model.counts[outside], prior.counts[outside])
    )
    diff = (model.field.density != prior.field.density) | np.any(model.field.sh != prior.field.sh, axis=-1)
    return LocalUpdateReport(list(clients), kind, before, after, bool(same), int(outside.sum()), int(diff.sum()), revisits)


def _union(a: RegionBounds, b: RegionBounds) -> RegionBounds:
    return RegionBounds(np.minimum(a.lo, b.lo), np.maximum(a.hi, b.hi))


def _masked_psnr(field: VoxelField, cameras, refs, masks, cfg: RunConfig) -> float:
    err, n = 0.0, 0
    for cam, ref, m in zip(cameras, refs, masks):
        img, _ = render_image(field, cam, cfg.render_samples, cfg.scene.bounds)
        err += float(np.sum((img[m] - ref[m]) ** 2))
        n += int(m.sum()) * 3
    mse = err / max(n, 1)
    return PSNR_CAP if mse <= 10.0 ** (-PSNR_CAP / 10.0) else float(-10.0 * np.log10(mse))
