"""Federated voxel radiance-field mapping.

Clients fit voxel radiance fields to their own images in their own
frames; a server aligns each client's noisy global pose against the
global model and merges the client field into the global grid by an
exponential moving average.
"""

from .aggregate import ClientUpdate, GlobalModel, Journal, aggregate, cache_region, ema_merge, replay
from .align import AlignmentError, AlignmentProblem, MCConfig, ViewConfig, align, build_problem, inject_and_recover
from .field import RegionBounds, VoxelField, sample, trilinear
from .geometry import Camera, Pose, Ray, sh_basis
from .io import decode_vxf, encode_vxf, load_vxf, save_vxf
from .render import composite, psnr, render_image, render_pixel, render_rays
from .scene import SceneSpec, build_scene, generate_trajectory, localize_client, partition_clients
from .train import ClientDataset, TrainConfig, forward_backward, train_client

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "AlignmentProblem", "Camera", "ClientDataset", "ClientUpdate", "GlobalModel", "Journal",
    "MCConfig", "Pose", "Ray", "RegionBounds", "SceneSpec", "TrainConfig", "ViewConfig", "VoxelField", "aggregate",
    "align", "build_problem", "build_scene", "cache_region", "composite", "decode_vxf", "ema_merge", "encode_vxf",
    "forward_backward", "generate_trajectory", "inject_and_recover", "load_vxf", "localize_client",
    "partition_clients", "psnr", "render_image", "render_pixel", "render_rays", "replay", "sample", "save_vxf",
    "sh_basis", "train_client", "trilinear",
]
