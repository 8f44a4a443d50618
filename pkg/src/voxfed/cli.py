"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 acceptance threshold missed (``eval --assert``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as exps
from .aggregate import ClientUpdate, GlobalModel, Journal, aggregate
from .config import ConfigError, load_config
from .geometry import Pose, rotation_error_deg, translation_error
from .harness import (
    RunConfig,
    align_client,
    build_world,
    client_dataset,
    evaluate,
    run,
    search_config,
    summary,
    train_clients,
)
from .io import JsonlLog, load_vxf, save_vxf, write_pfm, write_poses, write_ppm
from .render import render_image

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3


class UsageError(Exception):
    """Bad arguments that the config layer cannot catch (exit 1)."""


def _client_dir(out: Path, cid: int) -> Path:
    return out / "clients" / f"client_{cid:03d}"


def _check_client(cfg: RunConfig, cid: int) -> None:
    if not 0 <= cid < cfg.n_clients:
        raise UsageError(f"client {cid} out of range [0, {cfg.n_clients})")


def _partition_record(world) -> list[dict]:
    return [dict(a.to_dict(), local_bounds=world.local_bounds[a.client_id].to_dict()) for a in world.clients]


def cmd_scene_gen(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    world = build_world(cfg)
    (out / "scene").mkdir(parents=True, exist_ok=True)
    save_vxf(out / "scene" / "gt.vxf", world.gt)
    (out / "scene" / "scene.json").write_text(json.dumps(cfg.scene.to_dict(), indent=2))
    write_poses(out / "scene" / "poses.txt", world.cameras)
    write_poses(out / "scene" / "eval_poses.txt", world.eval_cameras)
    for i, img in enumerate(world.eval_images):
        write_ppm(out / "scene" / f"eval_{i:03d}.ppm", img)
    for a in world.clients:
        d = _client_dir(out, a.client_id)
        (d / "images").mkdir(parents=True, exist_ok=True)
        for j, i in enumerate(a.indices):
            write_ppm(d / "images" / f"{j:03d}.ppm", world.images[i])
        write_poses(d / "poses.txt", world.local_cameras[a.client_id])
    (out / "clients.json").write_text(json.dumps(_partition_record(world), indent=2))
    print(f"scene, {len(world.cameras)} views and {len(world.clients)} client datasets written to {out}")
    return EXIT_OK


def cmd_partition(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg, images=False)
    (out / "clients.json").write_text(json.dumps(_partition_record(world), indent=2))
    for a in world.clients:
        print(f"client {a.client_id}: {len(a.indices)} images, anchor {a.anchor}")
    return EXIT_OK


def cmd_train_local(cfg: RunConfig, args) -> int:
    _check_client(cfg, args.client)
    out = Path(args.out_dir)
    world = build_world(cfg)
    buf, stats = train_clients({args.client: client_dataset(world, args.client)}, cfg)[args.client]
    path = out / "clients" / f"client_{args.client:03d}.vxf"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf)
    print(f"client {args.client}: {stats['steps']} steps, final loss {stats['final_loss']:.5f}, "
          f"{stats['seconds']:.1f} s -> {path}")
    return EXIT_OK


def _load_client(out: Path, cid: int):
    path = out / "clients" / f"client_{cid:03d}.vxf"
    if not path.exists():
        raise RuntimeError(f"{path} missing; run train-local --client {cid} first")
    return path, load_vxf(path)


def cmd_align(cfg: RunConfig, args) -> int:
    _check_client(cfg, args.client)
    out = Path(args.out_dir)
    gpath = out / "global.vxf"
    if not gpath.exists():
        raise RuntimeError(f"{gpath} missing; aggregate a first client before aligning others")
    model = GlobalModel.load(gpath, cfg.eta)
    _, field = _load_client(out, args.client)
    world = build_world(cfg, images=False)
    a = world.clients[args.client]
    mc = search_config(cfg.align, cfg.noise_trans, cfg.noise_rot, int(cfg.seed * 1000 + args.client))
    log = JsonlLog(out / "clients" / f"client_{args.client:03d}.align.jsonl")
    pose, res = align_client(model, field, a.noisy_global_pose, cfg.align, mc, log)
    rec = {
        "client_id": args.client,
        "pose": pose.to_list(),
        "converged": bool(res.converged or pose is a.noisy_global_pose),
        "ambiguous": res.ambiguous,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "init_trans_m": translation_error(a.noisy_global_pose, a.true_global_pose),
        "init_rot_deg": rotation_error_deg(a.noisy_global_pose, a.true_global_pose),
        "final_trans_m": translation_error(pose, a.true_global_pose),
        "final_rot_deg": rotation_error_deg(pose, a.true_global_pose),
    }
    (out / "clients" / f"client_{args.client:03d}.pose.json").write_text(json.dumps(rec, indent=2))
    print(json.dumps(rec))
    return EXIT_OK if rec["converged"] else EXIT_RUNTIME


def cmd_aggregate(cfg: RunConfig, args) -> int:
    _check_client(cfg, args.client)
    out = Path(args.out_dir)
    fpath, field = _load_client(out, args.client)
    gpath = out / "global.vxf"
    world = build_world(cfg, images=False)
    a = world.clients[args.client]
    ppath = out / "clients" / f"client_{args.client:03d}.pose.json"
    if gpath.exists():
        model = GlobalModel.load(gpath, cfg.eta)
    else:
        model = GlobalModel.empty(cfg.scene.bounds, cfg.global_voxel_size, cfg.eta)
    if ppath.exists():
        rec = json.loads(ppath.read_text())
        if not rec.get("converged", False):
            raise RuntimeError(f"alignment of client {args.client} did not converge; not merging")
        pose = Pose.from_list(rec["pose"])
    elif not gpath.exists():
        # the first arrival defines the map
        pose = a.true_global_pose if cfg.reference_true_pose else a.noisy_global_pose
    else:
        pose = a.noisy_global_pose
    update = ClientUpdate.from_field(field, pose, args.client)
    _, n = aggregate(model, update, cfg.region_mode)
    model.save(gpath)
    Journal(out / "journal.jsonl").append(args.client, pose, update.region, n, fpath, cfg.region_mode)
    print(f"client {args.client}: {n} global nodes updated -> {gpath}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    from .plotting import plot_psnr_curve

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events = out / "events.jsonl"
    events.unlink(missing_ok=True)
    result = run(cfg, out, log=JsonlLog(events))
    plot_psnr_curve(result.report.psnr, out / "psnr.png", cfg.min_psnr)
    print(summary(result.report), end="")
    return EXIT_OK


def _model_path(args) -> Path:
    path = Path(args.model) if args.model else Path(args.out_dir) / "global.vxf"
    if not path.exists():
        raise RuntimeError(f"model {path} not found")
    return path


def cmd_render(cfg: RunConfig, args) -> int:
    from .plotting import plot_depth, save_image

    world = build_world(cfg, images=False)
    if not 0 <= args.camera < len(world.eval_cameras):
        raise UsageError(f"camera {args.camera} out of range [0, {len(world.eval_cameras)})")
    field = load_vxf(_model_path(args))
    rgb, depth = render_image(field, world.eval_cameras[args.camera], cfg.render_samples, cfg.scene.bounds,
                              workers=cfg.workers)
    out = Path(args.out_dir) / "renders"
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"view_{args.camera:03d}"
    write_ppm(stem.with_suffix(".ppm"), rgb)
    write_pfm(stem.with_suffix(".pfm"), depth)
    save_image(rgb, stem.with_suffix(".png"))
    plot_depth(depth, out / f"view_{args.camera:03d}_depth.png")
    print(f"rendered eval view {args.camera} -> {stem}.png")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    world = build_world(cfg)
    field = load_vxf(_model_path(args))
    ev = evaluate(field, world.eval_cameras, world.eval_images, cfg.eval_split, cfg.render_samples,
                  cfg.scene.bounds, cfg.workers)
    out = Path(args.out_dir)
    exps.write_rows(out / "eval.csv", [{"view": i, "psnr_db": v} for i, v in enumerate(ev.per_view)])
    print(f"held-out PSNR {ev.mean_psnr:.2f} dB over {len(ev.per_view)} views "
          f"({ev.pixels / max(ev.render_seconds, 1e-9):.0f} px/s)")
    if args.assert_ and ev.mean_psnr < cfg.min_psnr:
        print(f"below threshold {cfg.min_psnr:.2f} dB", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_sweep_noise(cfg: RunConfig, args) -> int:
    from .plotting import plot_noise_sweep

    out = Path(args.out_dir)
    rows = [r.as_dict() for r in exps.sweep_noise(cfg.scene, cfg.align, cfg.experiments, cfg.seed, cfg.workers)]
    exps.write_rows(out / "sweep_noise.csv", rows, exps.SWEEP_COLUMNS + exps.EXTRA_COLUMNS)
    plot_noise_sweep(rows, out / "sweep_noise.png", exps.tolerance(cfg.scene))
    for s in cfg.experiments.noise_scales:
        sel = [r for r in rows if r["noise_scale"] == s]
        ok = np.mean([r["status"] == "ok" for r in sel])
        print(f"noise scale {s:.2f}: {ok:.0%} recovered within tolerance")
    return EXIT_OK


def _ablation(cfg: RunConfig, args, name: str) -> int:
    from .plotting import plot_ablation

    out = Path(args.out_dir)
    fn = exps.ablate_lambda if name == "lambda" else exps.ablate_views
    rows = fn(cfg.scene, cfg.align, cfg.experiments, cfg.seed, cfg.workers)
    exps.write_rows(out / f"ablate_{name}.csv", [r.as_dict() for r in rows])
    means = exps.mean_error(rows)
    plot_ablation(means, out / f"ablate_{name}.png", "lambda" if name == "lambda" else "target views")
    for v, e in means.items():
        ok = np.mean([r.result.status == "ok" for r in rows if r.value == v])
        print(f"{name} = {v:g}: mean error {e:.3f} tolerance units, {ok:.0%} within tolerance")
    return EXIT_OK


COMMANDS = {
    "scene-gen": cmd_scene_gen,
    "partition": cmd_partition,
    "train-local": cmd_train_local,
    "align": cmd_align,
    "aggregate": cmd_aggregate,
    "simulate": cmd_simulate,
    "render": cmd_render,
    "eval": cmd_eval,
    "sweep-noise": cmd_sweep_noise,
    "ablate-lambda": lambda cfg, args: _ablation(cfg, args, "lambda"),
    "ablate-views": lambda cfg, args: _ablation(cfg, args, "views"),
}


def _global_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    """Global flags, accepted before or after the subcommand; only the
    top-level copies carry defaults so a later copy never clobbers an
    earlier value."""
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, default=d(None), help="override the configured seed")
    p.add_argument("--workers", type=int, default=d(None), help="override the configured worker count")
    p.add_argument("--out-dir", default=d("voxfed-out"), help="output directory (default: voxfed-out)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxfed", description="Federated voxel radiance-field mapping simulator")
    _global_flags(p, True)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _global_flags(sp, False)
        if name in ("train-local", "align", "aggregate"):
            sp.add_argument("--client", type=int, required=True)
        if name in ("render", "eval"):
            sp.add_argument("--model", default=None, help="VXF1 model (default: <out-dir>/global.vxf)")
        if name == "render":
            sp.add_argument("--camera", type=int, required=True, help="held-out camera index")
        if name == "eval":
            sp.add_argument("--assert", dest="assert_", action="store_true",
                            help="exit 3 if PSNR is below the configured threshold")
    p.set_defaults(model=None, assert_=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "workers") if getattr(args, k, None) is not None}
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
            cfg.validate()
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure past config is a runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"[{args.command}] {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
