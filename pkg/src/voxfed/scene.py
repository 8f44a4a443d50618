"""Procedural ground-truth scenes, camera trajectories and client data.

Scenes are a ground slab (smoothly textured or checkered) plus boxes and
spheres, voxelized into an activated VoxelField.  Clients own the k nearest
cameras to a random anchor and see them in a frame centred on the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import N_SH, RegionBounds, VoxelField
from .geometry import SH_C0, Camera, Pose, look_rotation, perturb, random_pose_noise
from .render import render_image
from .train import ClientDataset

BOX = "box"
SPHERE = "sphere"


def color_to_dc(rgb) -> np.ndarray:
    """Channel-major 27-vector whose DC term reproduces ``rgb`` in every direction."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 1e-4, 1 - 1e-4)
    k = np.zeros(rgb.shape[:-1] + (3, 9))
    k[..., 0] = np.log(rgb / (1.0 - rgb)) / SH_C0
    return k.reshape(rgb.shape[:-1] + (N_SH,))


@dataclass
class Primitive:
    kind: str
    center: np.ndarray
    size: np.ndarray  # box half-extents, or (radius, radius, radius)
    sigma: float
    sh: np.ndarray

    def sdf(self, p: np.ndarray) -> np.ndarray:
        if self.kind == SPHERE:
            return np.linalg.norm(p - self.center, axis=-1) - self.size[0]
        q = np.abs(p - self.center) - self.size
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(np.max(q, axis=-1), 0.0)

    @property
    def bounds(self) -> RegionBounds:
        return RegionBounds(self.center - self.size, self.center + self.size)

    def moved(self, offset) -> Primitive:
        return Primitive(self.kind, self.center + np.asarray(offset, float), self.size.copy(), self.sigma, self.sh.copy())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "size": self.size.tolist(),
            "sigma": self.sigma,
            "sh": self.sh.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> Primitive:
        return cls(d["kind"], np.array(d["center"], float), np.array(d["size"], float), float(d["sigma"]), np.array(d["sh"], float))


@dataclass
class SceneSpec:
    seed: int = 0
    bounds: RegionBounds = dc_field(default_factory=lambda: RegionBounds((-8, -8, 0), (8, 8, 5)))
    resolution: int = 64
    cubic: bool = True
    n_boxes: int = 6
    n_spheres: int = 3
    terrain: bool = True
    ground_height: float = 0.5
    texture: str = "smooth"  # smooth | checker | flat
    checker_period: float = 2.0
    sigma_range: tuple = (20.0, 40.0)
    tint: bool = True
    extra: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if self.sigma_range[0] <= 0:
            raise ValueError("primitive density must be positive")

    @property
    def voxel_size(self) -> float:
        ext = self.bounds.extent
        return float(max(ext[0], ext[1]) / (self.resolution - 1))

    @property
    def extent(self) -> float:
        """Horizontal scene extent used to scale noise and tolerances."""
        ext = self.bounds.extent
        return float(max(ext[0], ext[1]))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bounds": self.bounds.to_dict(),
            "resolution": self.resolution,
            "cubic": self.cubic,
            "n_boxes": self.n_boxes,
            "n_spheres": self.n_spheres,
            "terrain": self.terrain,
            "ground_height": self.ground_height,
            "texture": self.texture,
            "checker_period": self.checker_period,
            "sigma_range": list(self.sigma_range),
            "tint": self.tint,
            "extra": [p.to_dict() for p in self.extra],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        d = dict(d)
        if "bounds" in d and isinstance(d["bounds"], dict):
            d["bounds"] = RegionBounds.from_dict(d["bounds"])
        if "sigma_range" in d:
            d["sigma_range"] = tuple(d["sigma_range"])
        d["extra"] = [Primitive.from_dict(p) for p in d.get("extra", [])]
        return cls(**d)


def scene_primitives(spec: SceneSpec) -> list[Primitive]:
    """Random boxes and spheres standing on the ground, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.bounds.lo, spec.bounds.hi
    floor = lo[2] + (spec.ground_height if spec.terrain else 0.0)
    top = hi[2] - 0.25
    prims = []
    for kind, count in ((BOX, spec.n_boxes), (SPHERE, spec.n_spheres)):
        for _ in range(count):
            sigma = float(rng.uniform(*spec.sigma_range))
            rgb = rng.uniform(0.1, 0.9, 3)
            sh = color_to_dc(rgb)
            if spec.tint:
                sh.reshape(3, 9)[:, 1:4] += rng.normal(0.0, 0.3, (3, 3))
            if kind == BOX:
                half = np.array([rng.uniform(0.6, 1.8), rng.uniform(0.6, 1.8), 0.0])
                height = rng.uniform(1.0, min(4.0, top - floor))
                half[2] = height / 2
                margin = half[:2] + 0.5
                xy = rng.uniform(lo[:2] + margin, hi[:2] - margin)
                center = np.array([xy[0], xy[1], floor + half[2]])
            else:
                r = min(rng.uniform(0.7, 1.5), (top - lo[2]) / 2)
                half = np.full(3, r)
                xy = rng.uniform(lo[:2] + r + 0.5, hi[:2] - r - 0.5)
                z = max(floor + r * rng.uniform(0.7, 1.3), lo[2] + r)
                center = np.array([xy[0], xy[1], min(z, top - r)])
            prims.append(Primitive(kind, center, half, sigma, sh))
    return prims + list(spec.extra)


def ground_texture(spec: SceneSpec, xy: np.ndarray) -> np.ndarray:
    """RGB of the ground at horizontal positions ``xy`` (..., 2)."""
    if spec.texture == "checker":
        cell = np.floor(xy / spec.checker_period).astype(np.int64)
        on = (cell[..., 0] + cell[..., 1]) % 2 == 0
        return np.where(on[..., None], np.array([0.85, 0.85, 0.8]), np.array([0.15, 0.2, 0.25]))
    if spec.texture == "flat":
        return np.broadcast_to(np.array([0.45, 0.5, 0.4]), xy.shape[:-1] + (3,))
    rng = np.random.default_rng(spec.seed + 7919)
    out = np.full(xy.shape[:-1] + (3,), 0.5)
    for _ in range(6):
        wavelength = rng.uniform(2.5, 7.0)
        theta = rng.uniform(0, 2 * np.pi)
        k = 2 * np.pi / wavelength * np.array([np.cos(theta), np.sin(theta)])
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.12, 3) * rng.choice([-1, 1], 3)
        out = out + amp * np.sin(xy @ k + phase)[..., None]
    return np.clip(out, 0.05, 0.95)


def ground_primitive(spec: SceneSpec) -> Primitive:
    lo, hi = spec.bounds.lo, spec.bounds.hi
    pad = 4.0 * spec.voxel_size
    half = np.array([(hi[0] - lo[0]) / 2 + pad, (hi[1] - lo[1]) / 2 + pad, spec.ground_height / 2])
    center = np.array([(hi[0] + lo[0]) / 2, (hi[1] + lo[1]) / 2, lo[2] + spec.ground_height / 2])
    return Primitive(BOX, center, half, float(spec.sigma_range[1]), np.zeros(N_SH))


def build_scene(spec: SceneSpec) -> VoxelField:
    """Voxelize the scene into an activated field (occupancy = density > 0)."""
    vs = spec.voxel_size
    if spec.cubic:
        dims = (spec.resolution,) * 3
    else:
        dims = tuple(int(np.ceil(e / vs - 1e-9)) + 1 for e in spec.bounds.extent)
    gt = VoxelField.zeros(spec.bounds.lo, vs, dims)
    pos = gt.node_positions()
    prims = scene_primitives(spec)
    best_sd = np.full(dims, np.inf)
    for p in prims:
        sd = p.sdf(pos)
        inside = sd <= 0
        gt.density[inside] = np.maximum(gt.density[inside], p.sigma)
        closer = sd < best_sd
        # colour bleeds a voxel and a half outside so interpolation stays on-colour
        paint = closer & (sd <= 1.5 * vs)
        gt.sh[paint] = p.sh
        best_sd = np.where(closer, sd, best_sd)
    if spec.terrain:
        g = ground_primitive(spec)
        sd = g.sdf(pos)
        inside = sd <= 0
        gt.density[inside] = np.maximum(gt.density[inside], g.sigma)
        paint = (sd < best_sd) & (sd <= 1.5 * vs)
        gt.sh[paint] = color_to_dc(ground_texture(spec, pos[paint][:, :2]))
    gt.occupancy[:] = gt.density > 0
    return gt


def generate_trajectory(
    spec: SceneSpec,
    n_views: int,
    pattern: str = "grid-sweep",
    rng: np.random.Generator | None = None,
    altitude: float = 10.0,
    fov_deg: float = 60.0,
    width: int = 64,
    height: int = 64,
    tilt_deg: float = 20.0,
    radius: float | None = None,
    margin: float = 3.0,
) -> list[Camera]:
    """Cameras above the scene.

    ``orbit`` places ``n_views`` cameras at equal bearings on a circle,
    looking at the scene centre.  ``grid-sweep`` flies a near-square lattice
    over the scene; each camera tilts ``tilt_deg`` away from nadir toward
    the scene centre, give or take 60 degrees of random bearing.
    """
    if n_views < 1:
        raise ValueError("need at least one view")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    lo, hi = spec.bounds.lo, spec.bounds.hi
    ground = lo[2] + (spec.ground_height if spec.terrain else 0.0)
    centre = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, ground])
    cams = []
    if pattern == "orbit":
        r = radius if radius is not None else 0.5 * spec.extent
        for i in range(n_views):
            a = 2 * np.pi * i / n_views
            pos = centre + np.array([r * np.cos(a), r * np.sin(a), altitude])
            cams.append(Camera.from_fov(width, height, fov_deg, Pose(look_rotation(centre - pos), pos)))
        return cams
    if pattern != "grid-sweep":
        raise ValueError(f"unknown trajectory pattern {pattern!r}")
    cols = int(np.ceil(np.sqrt(n_views)))
    rows = int(np.ceil(n_views / cols))
    xs = _lattice(lo[0] + margin, hi[0] - margin, cols)
    ys = _lattice(lo[1] + margin, hi[1] - margin, rows)
    tilt = np.deg2rad(tilt_deg)
    for i in range(n_views):
        x, y = xs[i % cols], ys[i // cols]
        pos = np.array([x, y, ground + altitude])
        to_centre = centre[:2] - pos[:2]
        if np.linalg.norm(to_centre) > 1e-6:
            bearing = np.arctan2(to_centre[1], to_centre[0]) + rng.uniform(-np.pi / 3, np.pi / 3)
        else:
            bearing = rng.uniform(0, 2 * np.pi)
        fwd = np.array([np.sin(tilt) * np.cos(bearing), np.sin(tilt) * np.sin(bearing), -np.cos(tilt)])
        cams.append(Camera.from_fov(width, height, fov_deg, Pose(look_rotation(fwd), pos)))
    return cams


def _lattice(a: float, b: float, n: int) -> np.ndarray:
    return np.array([(a + b) / 2]) if n == 1 else np.linspace(a, b, n)


@dataclass
class ClientAssignment:
    client_id: int
    indices: list
    true_global_pose: Pose = dc_field(default_factory=Pose)
    noisy_global_pose: Pose = dc_field(default_factory=Pose)

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("client owns no images")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicate image indices")

    @property
    def anchor(self) -> int:
        return self.indices[0]

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "indices": list(map(int, self.indices)),
            "true_global_pose": self.true_global_pose.to_list(),
            "noisy_global_pose": self.noisy_global_pose.to_list(),
        }

    @classmethod
    def from_dict(cls, d) -> ClientAssignment:
        return cls(
            int(d["client_id"]),
            list(d["indices"]),
            Pose.from_list(d["true_global_pose"]),
            Pose.from_list(d["noisy_global_pose"]),
        )


def camera_positions(cameras: list[Camera]) -> np.ndarray:
    return np.array([c.position for c in cameras])


def partition_clients(cameras: list[Camera], n_clients: int, k_range, rng: np.random.Generator) -> list[ClientAssignment]:
    """Independent k-NN draws: random anchor, random k, k nearest by position.

    The anchor comes first in each index list; clients may overlap.
    """
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if n_clients < 1:
        raise ValueError("need at least one client")
    if not 1 <= k_min <= k_max:
        raise ValueError(f"bad k range {k_range}")
    if k_max > len(cameras):
        raise ValueError(f"k_max={k_max} exceeds {len(cameras)} cameras")
    pos = camera_positions(cameras)
    out = []
    for cid in range(n_clients):
        anchor = int(rng.integers(len(cameras)))
        k = int(rng.integers(k_min, k_max + 1))
        dist = np.linalg.norm(pos - pos[anchor], axis=1)
        dist[anchor] = -1.0
        order = np.argsort(dist, kind="stable")[:k]
        anchor_pose = Pose(np.eye(3), pos[anchor])
        out.append(ClientAssignment(cid, order.tolist(), anchor_pose, anchor_pose))
    return out


def localize_client(assignment: ClientAssignment, cameras: list[Camera], yaw_deg: float = 0.0) -> tuple[list[Camera], Pose]:
    """Client cameras in a frame at the anchor camera, axis-aligned up to a yaw.

    Returns the local cameras and the local-to-global pose.
    """
    anchor = cameras[assignment.anchor].position
    true_pose = Pose.rot_z(yaw_deg, anchor)
    to_local = true_pose.inverse()
    local = [cameras[i].with_pose(to_local.compose(cameras[i].pose)) for i in assignment.indices]
    return local, true_pose


def inject_noise(assignments: list[ClientAssignment], rng, max_trans: float, max_rot: float) -> None:
    """Set each client's claimed global pose to its true pose plus sensor noise."""
    for a in assignments:
        a.noisy_global_pose = perturb(a.true_global_pose, random_pose_noise(rng, max_trans, max_rot))


def render_views(gt: VoxelField, cameras: list[Camera], n_samples: int, bounds: RegionBounds | None = None, workers: int = 1):
    """RGB and depth images of the ground truth for each camera."""
    rgbs, depths = [], []
    for cam in cameras:
        rgb, depth = render_image(gt, cam, n_samples, bounds, workers=workers)
        rgbs.append(rgb)
        depths.append(depth)
    return rgbs, depths


def render_client_dataset(
    gt: VoxelField,
    cameras: list[Camera],
    local_cameras: list[Camera] | None = None,
    local_bounds: RegionBounds | None = None,
    n_samples: int = 128,
    bounds: RegionBounds | None = None,
    images: list | None = None,
) -> ClientDataset:
    """Render (or reuse) the images of ``cameras`` and pair them with local cameras."""
    if images is None:
        images, _ = render_views(gt, cameras, n_samples, bounds)
    local_cameras = local_cameras if local_cameras is not None else cameras
    local_bounds = local_bounds if local_bounds is not None else (bounds or gt.bounds)
    return ClientDataset(list(images), list(local_cameras), local_bounds)
