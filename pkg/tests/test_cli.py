import json

import pytest

from voxfed.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_THRESHOLD, build_parser, main

TINY = """
seed: 2
scene: {seed: 2, bounds: {min: [-4, -4, 0], max: [4, 4, 3]}, resolution: 17, n_boxes: 2, n_spheres: 1}
run: {n_clients: 2, k_range: [4, 6], n_views: 9, n_eval: 2, image_size: 16, altitude: 6.0, render_samples: 32,
      arrival: fixed}
train: {batch_size: 1024, epochs: 2, n_samples: 24}
align:
  rays_per_view: 32
  n_samples: 16
  views: {height: 5.0, width: 16, height_px: 16}
  mc: {particles: 8, rounds: 2, recentre_stages: 0, probe: false}
eval: {min_psnr: 1000}
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def _run(*argv):
    return main([str(a) for a in argv])


def test_step_by_step_pipeline(tmp_path, cfg_path, capsys):
    out = tmp_path / "out"
    common = ["--config", cfg_path, "--out-dir", out]
    assert _run(*common, "scene-gen") == EXIT_OK
    assert (out / "scene" / "gt.vxf").exists()
    assert len(list((out / "clients" / "client_000" / "images").glob("*.ppm"))) >= 4
    assert _run(*common, "partition") == EXIT_OK
    assert len(json.loads((out / "clients.json").read_text())) == 2
    for c in (0, 1):
        assert _run(*common, "train-local", "--client", c) == EXIT_OK
    assert _run(*common, "aggregate", "--client", 0) == EXIT_OK
    code = _run(*common, "align", "--client", 1)
    assert code in (EXIT_OK, EXIT_RUNTIME)
    rec = json.loads((out / "clients" / "client_001.pose.json").read_text())
    assert set(rec) >= {"pose", "converged", "final_trans_m"}
    if code == EXIT_OK:
        assert _run(*common, "aggregate", "--client", 1) == EXIT_OK
    assert len((out / "journal.jsonl").read_text().splitlines()) == (2 if code == EXIT_OK else 1)
    assert _run(*common, "render", "--camera", 0) == EXIT_OK
    assert (out / "renders" / "view_000.png").exists() and (out / "renders" / "view_000.pfm").exists()
    assert _run(*common, "eval") == EXIT_OK
    assert (out / "eval.csv").exists()
    # the tiny config demands 1000 dB
    assert _run(*common, "eval", "--assert") == EXIT_THRESHOLD


def test_simulate_and_flag_order(tmp_path, cfg_path):
    out = tmp_path / "sim"
    assert _run("simulate", "--config", cfg_path, "--out-dir", out, "--workers", 1) == EXIT_OK
    for name in ("report.json", "psnr.png", "events.jsonl", "summary.txt"):
        assert (out / name).exists()
    args = build_parser().parse_args(["--seed", "5", "eval", "--out-dir", "x"])
    assert args.seed == 5 and args.out_dir == "x"
    args = build_parser().parse_args(["--out-dir", "y", "render", "--camera", "1"])
    assert args.out_dir == "y" and args.camera == 1


def test_exit_codes(tmp_path, cfg_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("run: {n_clients: 0}\n")
    assert _run("--config", bad, "partition", "--out-dir", tmp_path) == EXIT_CONFIG
    assert _run("--config", tmp_path / "missing.yaml", "partition") == EXIT_CONFIG
    assert _run("--config", cfg_path, "--workers", 0, "partition", "--out-dir", tmp_path) == EXIT_CONFIG
    assert _run("--config", cfg_path, "train-local", "--client", 7, "--out-dir", tmp_path) == EXIT_CONFIG
    assert _run("--config", cfg_path, "render", "--camera", 0, "--out-dir", tmp_path / "empty") == EXIT_RUNTIME
    assert _run("--config", cfg_path, "align", "--client", 1, "--out-dir", tmp_path / "empty") == EXIT_RUNTIME
    with pytest.raises(SystemExit):
        _run("train-local")
