"""Rigid transforms, pinhole cameras, ray generation and the real SH basis.

Conventions: right-handed world frame with +z up; cameras look down their
local -z axis with +y up and +x right; image rows grow downward.  Poses are
camera-to-world (or local-to-global) maps ``x -> R @ x + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-9
UNIT_TOL = 1e-6

# real spherical harmonics constants, degree <= 2
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("pose must be finite")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, mat) -> Pose:
        mat = np.asarray(mat, dtype=np.float64)
        return cls(mat[:3, :3], mat[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), translation)

    @classmethod
    def rot_z(cls, degrees: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls.from_rotvec([0.0, 0.0, np.deg2rad(degrees)], translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def angle_deg(self) -> float:
        """Rotation angle of this pose in degrees."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

    def compose(self, other: Pose) -> Pose:
        return compose(self, other)

    def inverse(self) -> Pose:
        return inverse(self)

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def apply_dir(self, dirs) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def to_list(self) -> list[float]:
        """Row-major 3x4 matrix as 12 floats."""
        return self.matrix()[:3].reshape(-1).tolist()

    @classmethod
    def from_list(cls, values) -> Pose:
        m = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def __repr__(self):
        return (
            f"Pose(rotvec={np.round(self.rotvec(), 6).tolist()}, "
            f"t={np.round(self.translation, 6).tolist()})"
        )


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    rot = a.rotation @ b.rotation
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL:
        rot = orthonormalize(rot)
    return Pose(rot, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def apply(p: Pose, point) -> np.ndarray:
    pts = np.asarray(point, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts @ p.rotation.T + p.translation


def rotation_error_deg(est: Pose, true: Pose) -> float:
    """Geodesic angle of ``R_est @ R_true.T`` in degrees."""
    return Pose(est.rotation @ true.rotation.T).angle_deg()


def translation_error(est: Pose, true: Pose) -> float:
    return float(np.linalg.norm(est.translation - true.translation))


def look_rotation(forward, up_hint=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation whose -z axis points along ``forward``."""
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    up = np.asarray(up_hint, dtype=np.float64)
    if abs(np.dot(up, f)) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    z = -f
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float, pose: Pose | None = None) -> Camera:
        """Square-pixel camera with horizontal field of view ``fov_deg``."""
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height, pose or Pose())

    def with_pose(self, pose: Pose) -> Camera:
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation

    def intrinsics(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy, float(self.width), float(self.height)]

    def rays(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """World-space origins and unit directions for pixel coordinates.

        ``u`` is the column and ``v`` the row; the ray passes through
        ``(u + 0.5, v + 0.5)``.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if np.any((u < 0) | (u >= self.width) | (v < 0) | (v >= self.height)):
            raise ValueError("pixel outside image")
        d = np.stack(
            [
                (u + 0.5 - self.cx) / self.fx,
                -(v + 0.5 - self.cy) / self.fy,
                -np.ones_like(u),
            ],
            axis=-1,
        )
        d = d @ self.pose.rotation.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(self.pose.translation, d.shape).copy()
        return o, d

    def all_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Rays for every pixel in row-major order, shapes (H*W, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return self.rays(u.reshape(-1), v.reshape(-1))

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (u, v) of world points and an in-front mask."""
        p = np.asarray(points, dtype=np.float64)
        pc = (p - self.pose.translation) @ self.pose.rotation
        z = -pc[..., 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        u = self.fx * pc[..., 0] / zs + self.cx - 0.5
        v = -self.fy * pc[..., 1] / zs + self.cy - 0.5
        return np.stack([u, v], axis=-1), front

    def sees(self, points) -> np.ndarray:
        uv, front = self.project(points)
        inside = (
            (uv[..., 0] >= -0.5)
            & (uv[..., 0] < self.width - 0.5)
            & (uv[..., 1] >= -0.5)
            & (uv[..., 1] < self.height - 0.5)
        )
        return front & inside


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > ORTHO_TOL:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", _frozen(self.origin))
        object.__setattr__(self, "direction", _frozen(d))

    def at(self, s) -> np.ndarray:
        return self.origin + np.asarray(s, dtype=np.float64)[..., None] * self.direction


def pixel_ray(cam: Camera, px) -> Ray:
    """Ray through pixel ``px = (u, v)`` (column, row)."""
    o, d = cam.rays(px[0], px[1])
    return Ray(o, d)


def sh_basis(d) -> np.ndarray:
    """Real SH basis values up to degree 2, shape (..., 9).

    Order: Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > UNIT_TOL):
        raise ValueError("SH direction must be unit length")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    return np.stack(
        [
            np.full_like(x, SH_C0),
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ],
        axis=-1,
    )


def _fibonacci_dirs(n: int = 64) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sh_rotation(rot) -> np.ndarray:
    """9x9 matrix M with ``sh_basis(rot @ d) = M @ sh_basis(d)`` for all d.

    Each degree is closed under rotation, so a least-squares fit over a
    spread of directions recovers M to rounding.
    """
    d = _fibonacci_dirs()
    a = sh_basis(d)
    b = sh_basis(d @ np.asarray(rot, dtype=np.float64).T)
    return np.linalg.lstsq(a, b, rcond=None)[0].T


def rotate_sh(coeffs, rot) -> np.ndarray:
    """Coefficients (..., 27) re-expressed for directions in a frame that
    ``rot`` maps into the original one: the colour seen along ``d`` in the
    new frame equals the old colour along ``rot @ d``."""
    c = np.asarray(coeffs, dtype=np.float64)
    k = c.reshape(c.shape[:-1] + (3, 9))
    return (k @ sh_rotation(rot)).reshape(c.shape)


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def random_pose_noise(rng: np.random.Generator, max_trans: float, max_rot: float) -> Pose:
    """Uniform per-axis translation and uniform-angle, uniform-axis rotation.

    ``max_rot`` is in degrees.
    """
    if max_trans < 0 or max_rot < 0:
        raise ValueError("noise bounds must be non-negative")
    t = rng.uniform(-max_trans, max_trans, size=3)
    axis = random_unit_vector(rng)
    angle = np.deg2rad(rng.uniform(-max_rot, max_rot))
    return Pose.from_rotvec(axis * angle, t)


def perturb(pose: Pose, noise: Pose) -> Pose:
    """Sensor-style noise on a global pose: rotate, then offset translation."""
    return Pose(noise.rotation @ pose.rotation, pose.translation + noise.translation)
