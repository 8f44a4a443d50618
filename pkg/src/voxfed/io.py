"""Binary persistence: VXF1 voxel fields, PPM (P6) images, PFM depth maps,
camera pose text files and line-delimited JSON logs.

VXF1 layout (all little-endian)::

    magic      4 bytes  b"VXF1"
    mode       u8       0 = activated density, 1 = raw logits
    dims       3 x u32  (X, Y, Z)
    origin     3 x f32
    voxel_size f32
    density    X*Y*Z f32
    sh         X*Y*Z*27 f32, 27 contiguous values per node
    occupancy  ceil(X*Y*Z / 8) bytes, packed LSB-first

Node order is X-fastest: node (i, j, k) is record ``i + X * (j + Y * k)``.
Values are stored as float32, so a field round-trips bit-exactly once its
arrays are float32-representable; ``quantize`` performs that projection.
"""

from __future__ import annotations

import json
import struct
import time
from pathlib import Path

import numpy as np

from .field import ACTIVATED, LOGIT, N_SH, VoxelField
from .geometry import Camera, Pose

MAGIC = b"VXF1"
_HEADER = struct.Struct("<4sB3I3ff")


def quantize(field: VoxelField) -> VoxelField:
    """Round every stored value to float32 precision."""

    def f32(a):
        return np.asarray(a, dtype=np.float32).astype(np.float64)

    return VoxelField(
        f32(field.origin), float(np.float32(field.voxel_size)), f32(field.density), f32(field.sh), field.occupancy.copy(), field.mode
    )


def encode_vxf(field: VoxelField) -> bytes:
    dims = field.dims
    header = _HEADER.pack(
        MAGIC, 0 if field.mode == ACTIVATED else 1, *dims, *np.asarray(field.origin, np.float32), np.float32(field.voxel_size)
    )
    # transpose to (Z, Y, X) so C order walks X fastest
    dens = np.ascontiguousarray(field.density.transpose(2, 1, 0), dtype="<f4")
    sh = np.ascontiguousarray(field.sh.transpose(2, 1, 0, 3), dtype="<f4")
    occ = np.packbits(field.occupancy.transpose(2, 1, 0).reshape(-1), bitorder="little")
    return header + dens.tobytes() + sh.tobytes() + occ.tobytes()


def decode_vxf(buf: bytes) -> VoxelField:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated VXF1 header")
    magic, mode, x, y, z, ox, oy, oz, vs = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if mode not in (0, 1):
        raise ValueError(f"bad mode byte {mode}")
    n = x * y * z
    off = _HEADER.size
    need = off + 4 * n + 4 * n * N_SH + (n + 7) // 8
    if len(buf) != need:
        raise ValueError(f"VXF1 size mismatch: {len(buf)} != {need}")
    dens = np.frombuffer(buf, "<f4", n, off).reshape(z, y, x).transpose(2, 1, 0)
    off += 4 * n
    sh = np.frombuffer(buf, "<f4", n * N_SH, off).reshape(z, y, x, N_SH).transpose(2, 1, 0, 3)
    off += 4 * n * N_SH
    bits = np.unpackbits(np.frombuffer(buf, np.uint8, (n + 7) // 8, off), count=n, bitorder="little")
    occ = bits.astype(bool).reshape(z, y, x).transpose(2, 1, 0)
    return VoxelField(
        np.array([ox, oy, oz], dtype=np.float64),
        float(vs),
        dens.astype(np.float64),
        sh.astype(np.float64),
        occ.copy(),
        ACTIVATED if mode == 0 else LOGIT,
    )


def save_vxf(path, field: VoxelField) -> None:
    Path(path).write_bytes(encode_vxf(field))


def load_vxf(path) -> VoxelField:
    return decode_vxf(Path(path).read_bytes())


def write_ppm(path, image) -> None:
    """8-bit binary PPM from an (H, W, 3) float image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, pos = [], 0
    while len(out) < count:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    return out, pos + 1


def read_ppm(path) -> np.ndarray:
    """Float image in [0, 1] from a P6 file with maxval 255."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P6":
        raise ValueError(f"not a P6 file: {magic!r}")
    if int(maxval) != 255:
        raise ValueError("only 8-bit PPM supported")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, np.uint8, w * h * 3, pos).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0


def write_pfm(path, image) -> None:
    """Little-endian PFM; rows are stored bottom-to-top per the format."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        kind = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError("PFM needs (H, W) or (H, W, 3)")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(kind + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (kind, w, h, scale), pos = _tokens(buf, 4)
    if kind not in (b"PF", b"Pf"):
        raise ValueError(f"not a PFM file: {kind!r}")
    w, h, scale = int(w), int(h), float(scale)
    ch = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype, w * h * ch, pos)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_poses(path, cameras: list[Camera]) -> None:
    """One camera per line: 12 floats of the row-major 3x4 camera-to-world
    matrix followed by fx fy cx cy width height."""
    with open(path, "w") as f:
        for cam in cameras:
            vals = cam.pose.to_list() + cam.intrinsics()
            f.write(" ".join(repr(float(v)) for v in vals) + "\n")


def read_poses(path) -> list[Camera]:
    cams = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        v = [float(t) for t in line.split()]
        if len(v) != 18:
            raise ValueError(f"pose line needs 18 values, got {len(v)}")
        cams.append(Camera(v[12], v[13], v[14], v[15], int(v[16]), int(v[17]), Pose.from_list(v[:12])))
    return cams


class JsonlLog:
    """Append-only line-delimited JSON records."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._t0 = time.perf_counter()

    def write(self, **record) -> None:
        record.setdefault("elapsed", round(time.perf_counter() - self._t0, 6))
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
