import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxfed.geometry import (
    Camera,
    Pose,
    Ray,
    orthonormalize,
    perturb,
    pixel_ray,
    random_pose_noise,
    rotation_error_deg,
    sh_basis,
    translation_error,
)

from .helpers import random_pose

seeds = st.integers(0, 2**32 - 1)


def test_compose_identity_and_inverse(rng):
    p = random_pose(rng)
    assert Pose.identity().compose(p).allclose(p)
    assert p.compose(p.inverse()).allclose(Pose.identity())


def test_compose_matches_homogeneous_product():
    a = Pose.rot_z(90.0, (1.0, 0.0, 0.0))
    c = a.compose(a)
    assert c.allclose(Pose.rot_z(180.0, (1.0, 1.0, 0.0)))
    assert np.allclose(c.matrix(), a.matrix() @ a.matrix(), atol=1e-12)


def test_apply_examples():
    assert np.allclose(Pose.identity().apply([1, 2, 3]), [1, 2, 3])
    assert np.allclose(Pose(np.eye(3), (5, 0, 0)).apply([1, 2, 3]), [6, 2, 3])
    assert np.allclose(Pose.rot_z(90).apply([1, 0, 0]), [0, 1, 0], atol=1e-12)


@given(seeds)
def test_long_composition_chain_stays_orthonormal(seed):
    rng = np.random.default_rng(seed)
    p = Pose.identity()
    for _ in range(50):
        p = p.compose(random_pose(rng))
    r = p.rotation
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(r) - 1.0) < 1e-9
    assert p.compose(p.inverse()).allclose(Pose.identity(), atol=1e-9)


def test_pose_rejects_bad_input():
    with pytest.raises(ValueError):
        Pose(np.eye(2))
    with pytest.raises(ValueError):
        Pose(np.eye(3), (np.nan, 0, 0))


def test_orthonormalize_fixes_reflection(rng):
    m = rng.normal(size=(3, 3))
    r = orthonormalize(m)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) > 0


def test_pose_list_round_trip(rng):
    p = random_pose(rng)
    assert Pose.from_list(p.to_list()).allclose(p, atol=0)


def test_camera_principal_point_and_translation():
    cam = Camera(100.0, 100.0, 100.0, 100.0, 200, 200)
    o, d = cam.rays(np.array([99.5]), np.array([99.5]))
    assert np.allclose(d[0], [0, 0, -1])
    moved = cam.with_pose(Pose(np.eye(3), (3, 0, 0)))
    o2, d2 = moved.rays(np.array([99.5]), np.array([99.5]))
    assert np.allclose(o2[0], [3, 0, 0]) and np.allclose(d2, d)


def test_camera_corner_pixel_direction():
    cam = Camera(100.0, 100.0, 100.0, 100.0, 200, 200)
    ray = pixel_ray(cam, (0, 0))
    want = np.array([-0.995, 0.995, -1.0])
    assert np.allclose(ray.direction, want / np.linalg.norm(want), atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 4.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 1.0, 1.0, 4, 4).rays(np.array([4]), np.array([0]))


def test_ray_requires_unit_direction():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))


@given(seeds)
def test_project_inverts_rays(seed):
    rng = np.random.default_rng(seed)
    cam = Camera.from_fov(32, 24, 60.0, random_pose(rng))
    u = rng.uniform(0, 31.99, 20)
    v = rng.uniform(0, 23.99, 20)
    o, d = cam.rays(u, v)
    uv, front = cam.project(o + rng.uniform(0.5, 10.0, (20, 1)) * d)
    assert front.all()
    assert np.allclose(uv, np.stack([u, v], axis=-1), atol=1e-8)


def test_sh_basis_constant_and_pole():
    d = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    b = sh_basis(d)
    assert np.allclose(b[:, 0], 1.0 / (2.0 * np.sqrt(np.pi)))
    assert np.isclose(b[0, 2], np.sqrt(3.0 / (4.0 * np.pi)))
    for i in (1, 3, 4, 5, 7, 8):
        assert abs(b[0, i]) < 1e-15
    assert np.isclose(b[1, 6], b[2, 6])


def test_sh_basis_orthonormal_on_sphere():
    # Gauss-Legendre in cos(theta) times uniform phi is exact for degree <= 4 products
    x, wx = np.polynomial.legendre.leggauss(12)
    phi = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    stheta = np.sqrt(1 - ct**2)
    d = np.stack([stheta * np.cos(ph), stheta * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    w = (wx[:, None] * np.full(24, 2 * np.pi / 24)[None, :]).reshape(-1)
    b = sh_basis(d)
    gram = (b * w[:, None]).T @ b
    assert np.allclose(gram, np.eye(9), atol=1e-12)


def test_sh_basis_rejects_non_unit():
    with pytest.raises(ValueError):
        sh_basis([0.0, 0.0, 2.0])


def test_noise_zero_and_bounds():
    rng = np.random.default_rng(0)
    assert random_pose_noise(rng, 0.0, 0.0).allclose(Pose.identity())
    draws = [random_pose_noise(rng, 20.0, 15.0) for _ in range(10_000)]
    t = np.array([p.translation for p in draws])
    assert t.min() >= -20 and t.max() <= 20
    assert np.all(np.abs(t.mean(axis=0)) < 0.5)
    assert max(p.angle_deg() for p in draws) <= 15.0 + 1e-9
    with pytest.raises(ValueError):
        random_pose_noise(rng, -1.0, 0.0)


def test_error_metrics(rng):
    p = random_pose(rng)
    noise = Pose.from_rotvec([0, 0, np.deg2rad(7.0)], (3.0, 4.0, 0.0))
    q = perturb(p, noise)
    assert np.isclose(translation_error(q, p), 5.0)
    assert np.isclose(rotation_error_deg(q, p), 7.0)


@given(st.integers(0, 2**32 - 1))
def test_rotated_sh_preserves_colour(seed):
    from voxfed.geometry import rotate_sh, sh_rotation

    rng = np.random.default_rng(seed)
    rot = random_pose(rng).rotation
    k = rng.normal(size=27)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    k_new = rotate_sh(k, rot).reshape(3, 9)
    assert np.allclose(sh_basis(d) @ k_new.T, sh_basis(d @ rot.T) @ k.reshape(3, 9).T, atol=1e-10)
    assert np.allclose(sh_rotation(np.eye(3)), np.eye(9), atol=1e-12)
    # rotations preserve each degree's norm
    m = sh_rotation(rot)
    assert np.allclose(m @ m.T, np.eye(9), atol=1e-10)
