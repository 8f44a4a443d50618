"""Server-side merging of client fields into the global voxel grid.

Each global node whose pre-image under the client's corrected pose lies in
the client's modeled region takes the client field's (activated) output
there; touched nodes then blend as ``V <- eta V + (1 - eta) V_client``.
A node's first write stores the client value directly.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import N_SH, RegionBounds, VoxelField, cell_occupied, occupied_bounds, sample
from .geometry import Pose
from .io import load_vxf, read_jsonl, save_vxf

REGION_MASK = "mask"
REGION_BOX = "box"


@dataclass
class ClientUpdate:
    local_field: VoxelField
    corrected_pose: Pose
    region: RegionBounds
    client_id: int = -1

    @classmethod
    def from_field(cls, local_field: VoxelField, pose: Pose, client_id: int = -1) -> ClientUpdate:
        return cls(local_field, pose, occupied_bounds(local_field), client_id)


@dataclass
class CachedEntries:
    nodes: np.ndarray  # flat global node indices, unique and ascending
    density: np.ndarray
    sh: np.ndarray

    def __len__(self):
        return len(self.nodes)


class GlobalModel:
    """Activated global field plus per-node update counts.

    Writers hold ``lock`` for the whole merge, and readers that take a
    ``snapshot`` see either the state before or after a merge.
    """

    def __init__(self, field: VoxelField, eta: float = 0.9, counts: np.ndarray | None = None):
        if not 0.0 < eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if field.mode != "activated":
            raise ValueError("the global model stores activated density")
        self.field = field
        self.eta = float(eta)
        self.counts = np.zeros(field.dims, dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64)
        self.lock = threading.RLock()

    @classmethod
    def empty(cls, bounds: RegionBounds, voxel_size: float = 0.25, eta: float = 0.9) -> GlobalModel:
        return cls(VoxelField.covering(bounds, voxel_size), eta)

    def snapshot(self) -> GlobalModel:
        with self.lock:
            return GlobalModel(self.field.copy(), self.eta, self.counts.copy())

    def save(self, path) -> None:
        """``path`` gets the VXF1 field; ``path + '.counts.npy'`` the counts."""
        with self.lock:
            save_vxf(path, self.field)
            np.save(str(path) + ".counts.npy", self.counts)

    @classmethod
    def load(cls, path, eta: float = 0.9) -> GlobalModel:
        return cls(load_vxf(path), eta, np.load(str(path) + ".counts.npy"))

    def __eq__(self, other):
        if not isinstance(other, GlobalModel):
            return NotImplemented
        return self.eta == other.eta and self.field == other.field and np.array_equal(self.counts, other.counts)


def _candidate_nodes(gfield: VoxelField, world_box: RegionBounds) -> np.ndarray:
    """Flat indices of global nodes inside ``world_box`` (a superset of the hits)."""
    gb = world_box.intersect(gfield.bounds)
    if gb.is_empty:
        return np.zeros(0, dtype=np.int64)
    lo = np.maximum(np.floor((gb.lo - gfield.origin) / gfield.voxel_size - 1e-9), 0).astype(int)
    hi = np.minimum(np.ceil((gb.hi - gfield.origin) / gfield.voxel_size + 1e-9), np.array(gfield.dims) - 1).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    ii, jj, kk = np.meshgrid(*axes, indexing="ij")
    return np.ravel_multi_index((ii.ravel(), jj.ravel(), kk.ravel()), gfield.dims)


def in_region(update: ClientUpdate, local_points, region_mode: str = REGION_MASK) -> np.ndarray:
    """Whether local-frame points fall inside the client's modeled region."""
    inside = update.region.contains(local_points)
    if region_mode == REGION_MASK:
        inside &= cell_occupied(update.local_field, local_points)
    elif region_mode != REGION_BOX:
        raise ValueError(f"unknown region mode {region_mode!r}")
    return inside


def cache_region(update: ClientUpdate, gfield: VoxelField, region_mode: str = REGION_MASK) -> CachedEntries:
    """Client-field outputs at every global node whose pre-image is in the region."""
    if update.region.is_empty:
        return CachedEntries(np.zeros(0, np.int64), np.zeros(0), np.zeros((0, N_SH)))
    world_box = update.region.transformed(update.corrected_pose)
    cand = _candidate_nodes(gfield, world_box)
    ijk = np.stack(np.unravel_index(cand, gfield.dims), axis=-1)
    world = gfield.origin + gfield.voxel_size * ijk
    local = update.corrected_pose.inverse().apply(world)
    keep = in_region(update, local, region_mode)
    dens, coeffs = sample(update.local_field, local[keep])
    return CachedEntries(cand[keep], dens, coeffs)


def ema_merge(model: GlobalModel, cached: CachedEntries) -> GlobalModel:
    with model.lock:
        idx = cached.nodes
        dens = model.field.density.reshape(-1)
        sh = model.field.sh.reshape(-1, N_SH)
        counts = model.counts.reshape(-1)
        first = counts[idx] == 0
        eta = model.eta
        dens[idx] = np.where(first, cached.density, eta * dens[idx] + (1.0 - eta) * cached.density)
        sh[idx] = np.where(first[:, None], cached.sh, eta * sh[idx] + (1.0 - eta) * cached.sh)
        counts[idx] += 1
        model.field.occupancy.reshape(-1)[idx] = True
    return model


def aggregate(model: GlobalModel, update: ClientUpdate, region_mode: str = REGION_MASK) -> tuple[GlobalModel, int]:
    """Cache then merge; returns the model and the number of touched nodes."""
    cached = cache_region(update, model.field, region_mode)
    ema_merge(model, cached)
    return model, len(cached)


class Journal:
    """Append-only record of merges, enough to rebuild the global model.

    Each line names the client, its corrected pose, region, touched-node
    count, the persisted client field and a wall-clock timestamp.
    """

    def __init__(self, path):
        self.path = Path(path)

    def append(self, client_id: int, pose: Pose, region: RegionBounds, node_count: int, field_path, region_mode: str = REGION_MASK) -> None:
        rec = {
            "client_id": int(client_id),
            "pose": pose.to_list(),
            "region": region.to_dict(),
            "node_count": int(node_count),
            "field_path": str(field_path),
            "region_mode": region_mode,
            "timestamp": time.time(),
        }
        with open(self.path, "a") as f:
            f.write(json.dumps(rec) + "\n")

    def records(self) -> list[dict]:
        return read_jsonl(self.path) if self.path.exists() else []


def replay(journal: Journal, model: GlobalModel) -> GlobalModel:
    """Re-apply every journaled merge onto ``model`` in order."""
    for rec in journal.records():
        field = load_vxf(rec["field_path"])
        region = RegionBounds.from_dict(rec["region"])
        update = ClientUpdate(field, Pose.from_list(rec["pose"]), region, rec["client_id"])
        _, n = aggregate(model, update, rec.get("region_mode", REGION_MASK))
        if n != rec["node_count"]:
            raise RuntimeError(f"replay of client {rec['client_id']} touched {n} nodes, journal says {rec['node_count']}")
    return model
