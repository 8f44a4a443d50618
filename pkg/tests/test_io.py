import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxfed.field import ACTIVATED, LOGIT, VoxelField
from voxfed.geometry import Camera
from voxfed.io import (
    JsonlLog,
    decode_vxf,
    encode_vxf,
    load_vxf,
    quantize,
    read_jsonl,
    read_pfm,
    read_poses,
    read_ppm,
    save_vxf,
    write_pfm,
    write_poses,
    write_ppm,
)

from .helpers import random_field, random_pose


@given(st.integers(0, 2**32 - 1), st.sampled_from([ACTIVATED, LOGIT]),
       st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)))
@settings(max_examples=25)
def test_vxf_round_trip_is_bit_exact(seed, mode, dims):
    rng = np.random.default_rng(seed)
    f = random_field(rng, dims=dims, mode=mode, origin=tuple(rng.normal(size=3)), voxel_size=float(rng.uniform(0.1, 1)))
    f.occupancy[:] = rng.random(dims) < 0.5
    q = quantize(f)
    back = decode_vxf(encode_vxf(q))
    assert back == q
    assert back.mode == mode
    assert encode_vxf(back) == encode_vxf(q)
    # a second quantize is a no-op
    assert quantize(q) == q


def test_vxf_layout_is_x_fastest(tmp_path):
    f = VoxelField.zeros((0, 0, 0), 1.0, (3, 2, 2))
    f.density[:] = np.arange(12).reshape(2, 2, 3).transpose(2, 1, 0)
    f.occupancy[1, 0, 0] = True
    buf = encode_vxf(f)
    head = struct.unpack_from("<4sB3I3ff", buf)
    assert head[:5] == (b"VXF1", 0, 3, 2, 2)
    dens = np.frombuffer(buf, "<f4", 12, struct.calcsize("<4sB3I3ff"))
    assert np.array_equal(dens, np.arange(12))
    assert buf[-2:] == bytes([0b10, 0])
    save_vxf(tmp_path / "f.vxf", f)
    assert load_vxf(tmp_path / "f.vxf") == f


def test_vxf_rejects_corrupt_input():
    buf = encode_vxf(VoxelField.zeros((0, 0, 0), 1.0, (2, 2, 2)))
    with pytest.raises(ValueError, match="magic"):
        decode_vxf(b"VXF2" + buf[4:])
    with pytest.raises(ValueError):
        decode_vxf(buf[:-1])
    with pytest.raises(ValueError):
        decode_vxf(buf[:10])
    with pytest.raises(ValueError):
        decode_vxf(buf[:4] + bytes([7]) + buf[5:])


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == (5, 7, 3)
    assert np.array_equal(np.round(back * 255).astype(np.uint8), img)
    f = rng.random((4, 4, 3))
    write_ppm(tmp_path / "b.ppm", f)
    assert np.max(np.abs(read_ppm(tmp_path / "b.ppm") - f)) <= 0.5 / 255 + 1e-12
    (tmp_path / "c.ppm").write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes(range(6)))
    assert np.array_equal(read_ppm(tmp_path / "c.ppm") * 255, np.arange(6).reshape(1, 2, 3))
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "d.ppm", np.zeros((3, 3)))
    (tmp_path / "e.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "e.ppm")


def test_pfm_round_trip(tmp_path, rng):
    depth = rng.random((6, 4)).astype(np.float32) * 10
    write_pfm(tmp_path / "d.pfm", depth)
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), depth)
    rgb = rng.random((3, 5, 3)).astype(np.float32)
    write_pfm(tmp_path / "c.pfm", rgb)
    assert np.array_equal(read_pfm(tmp_path / "c.pfm"), rgb)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 6\n-1.0\n")
    # bottom row first
    assert np.frombuffer(raw[-16:], "<f4").tolist() == depth[0].tolist()
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_poses_round_trip(tmp_path, rng):
    cams = [Camera(50.0 + i, 60.0, 16.0, 12.0, 32, 24, random_pose(rng)) for i in range(4)]
    write_poses(tmp_path / "poses.txt", cams)
    back = read_poses(tmp_path / "poses.txt")
    for a, b in zip(cams, back):
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.translation, b.pose.translation)
        assert a.intrinsics() == b.intrinsics()
    lines = (tmp_path / "poses.txt").read_text().splitlines()
    assert len(lines) == 4 and all(len(line.split()) == 18 for line in lines)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError):
        read_poses(tmp_path / "bad.txt")


def test_jsonl_log(tmp_path):
    log = JsonlLog(tmp_path / "log.jsonl")
    log.write(step=1, loss=0.5)
    log.write(step=2, loss=0.25)
    recs = read_jsonl(tmp_path / "log.jsonl")
    assert [r["step"] for r in recs] == [1, 2]
    assert all("elapsed" in r for r in recs)
    assert JsonlLog().records == []
