import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxfed.field import RegionBounds, occupied_bounds
from voxfed.scene import (
    BOX,
    ClientAssignment,
    Primitive,
    SceneSpec,
    build_scene,
    camera_positions,
    color_to_dc,
    generate_trajectory,
    inject_noise,
    localize_client,
    partition_clients,
    render_client_dataset,
    scene_primitives,
)


seeds = st.integers(0, 2**32 - 1)


def small_spec(**kw):
    base = dict(seed=0, bounds=RegionBounds((-4, -4, 0), (4, 4, 3)), resolution=17, n_boxes=2, n_spheres=1)
    base.update(kw)
    return SceneSpec(**base)


def test_build_scene_examples():
    empty = build_scene(small_spec(n_boxes=0, n_spheres=0, terrain=False))
    assert not empty.density.any() and not empty.occupancy.any()

    box = Primitive(BOX, np.array([0.5, -1.0, 1.0]), np.array([1.0, 1.5, 0.75]), 30.0, color_to_dc([0.2, 0.4, 0.6]))
    one = build_scene(small_spec(n_boxes=0, n_spheres=0, terrain=False, extra=[box]))
    ob = occupied_bounds(one)
    assert np.all(np.abs(ob.lo - (box.center - box.size)) <= one.voxel_size)
    assert np.all(np.abs(ob.hi - (box.center + box.size)) <= one.voxel_size)

    spec = small_spec(seed=5)
    assert build_scene(spec) == build_scene(spec)
    assert build_scene(spec) != build_scene(small_spec(seed=6))
    assert np.all(build_scene(spec).density >= 0)


def test_color_to_dc_round_trip():
    from scipy.special import expit

    from voxfed.geometry import sh_basis

    rgb = np.array([0.1, 0.5, 0.9])
    k = color_to_dc(rgb).reshape(3, 9)
    assert np.allclose(expit(k @ sh_basis(np.array([0.3, 0.4, np.sqrt(0.75)]))), rgb)


@given(seeds)
@settings(max_examples=15)
def test_primitives_lie_inside_bounds(seed):
    spec = small_spec(seed=seed, n_boxes=3, n_spheres=2)
    for p in scene_primitives(spec):
        assert p.sigma > 0
        assert np.all(p.center - p.size >= spec.bounds.lo - 1e-9)
        assert np.all(p.center + p.size <= spec.bounds.hi + 1e-9)


def test_trajectory_examples(rng):
    spec = small_spec()
    cams = generate_trajectory(spec, 4, "orbit", rng, altitude=6.0)
    pos = camera_positions(cams)
    centre = np.array([0.0, 0.0, spec.ground_height])
    rel = pos[:, :2] - centre[:2]
    assert np.allclose(np.linalg.norm(rel, axis=1), np.linalg.norm(rel[0]))
    ang = np.degrees(np.arctan2(rel[:, 1], rel[:, 0]))
    assert np.allclose(np.diff(ang) % 360, 90.0)

    cams = generate_trajectory(spec, 9, "grid-sweep", rng, altitude=6.0, margin=1.0)
    pos = camera_positions(cams)
    assert sorted(set(np.round(pos[:, 0], 9))) == pytest.approx([-3.0, 0.0, 3.0])
    assert sorted(set(np.round(pos[:, 1], 9))) == pytest.approx([-3.0, 0.0, 3.0])
    assert np.allclose(pos[:, 2], spec.ground_height + 6.0)
    with pytest.raises(ValueError):
        generate_trajectory(spec, 0)
    with pytest.raises(ValueError):
        generate_trajectory(spec, 3, "spiral")


@given(seeds)
@settings(max_examples=10)
def test_every_primitive_is_seen(seed):
    spec = small_spec(seed=seed)
    cams = generate_trajectory(spec, 9, "grid-sweep", np.random.default_rng(seed), altitude=8.0, margin=1.5)
    for p in scene_primitives(spec):
        assert any(c.sees(p.center[None])[0] for c in cams)


def _knn_oracle(pos, anchor, k):
    d = [(float(np.linalg.norm(pos[i] - pos[anchor])), i) for i in range(len(pos))]
    d.sort(key=lambda t: (t[1] != anchor, t[0], t[1]))
    return [i for _, i in d[:k]]


@given(seeds, st.integers(1, 6), st.integers(1, 20))
@settings(max_examples=30)
def test_partition_matches_brute_force_knn(seed, n_clients, k_hi):
    rng = np.random.default_rng(seed)
    spec = small_spec()
    cams = generate_trajectory(spec, 20, "grid-sweep", rng)
    k_lo = max(1, k_hi - 5)
    parts = partition_clients(cams, n_clients, (k_lo, k_hi), np.random.default_rng(seed))
    pos = camera_positions(cams)
    assert len(parts) == n_clients
    for a in parts:
        assert k_lo <= len(a.indices) <= k_hi
        assert len(set(a.indices)) == len(a.indices)
        assert a.indices == _knn_oracle(pos, a.anchor, len(a.indices))
        owned = np.linalg.norm(pos[a.indices] - pos[a.anchor], axis=1)
        rest = np.setdiff1d(np.arange(len(cams)), a.indices)
        if len(rest):
            assert owned.max() <= np.linalg.norm(pos[rest] - pos[a.anchor], axis=1).min()
    again = partition_clients(cams, n_clients, (k_lo, k_hi), np.random.default_rng(seed))
    assert [a.indices for a in again] == [a.indices for a in parts]


def test_partition_edge_cases(rng):
    cams = generate_trajectory(small_spec(), 6, "grid-sweep", rng)
    (a,) = partition_clients(cams, 1, (6, 6), rng)
    assert sorted(a.indices) == list(range(6))
    for a in partition_clients(cams, 4, (1, 1), rng):
        assert a.indices == [a.anchor]
    with pytest.raises(ValueError):
        partition_clients(cams, 1, (2, 7), rng)
    with pytest.raises(ValueError):
        partition_clients(cams, 0, (1, 2), rng)
    with pytest.raises(ValueError):
        ClientAssignment(0, [])
    with pytest.raises(ValueError):
        ClientAssignment(0, [1, 1])


@given(seeds, st.floats(-180, 180))
@settings(max_examples=20)
def test_localize_round_trip(seed, yaw):
    rng = np.random.default_rng(seed)
    cams = generate_trajectory(small_spec(), 12, "grid-sweep", rng)
    a, b = partition_clients(cams, 2, (6, 12), rng)
    for asg in (a, b):
        local, true = localize_client(asg, cams, yaw)
        assert np.allclose(local[0].position, 0.0, atol=1e-12)
        for i, lc in zip(asg.indices, local):
            back = true.compose(lc.pose)
            assert np.allclose(back.translation, cams[i].position, atol=1e-9)
            assert np.allclose(back.rotation, cams[i].pose.rotation, atol=1e-9)
    shared = set(a.indices) & set(b.indices)
    la, ta = localize_client(a, cams, yaw)
    lb, tb = localize_client(b, cams, -yaw)
    for i in shared:
        pa = ta.apply(la[a.indices.index(i)].position)
        pb = tb.apply(lb[b.indices.index(i)].position)
        assert np.allclose(pa, pb, atol=1e-9)


def test_noise_injection_bounds(rng):
    cams = generate_trajectory(small_spec(), 10, "grid-sweep", rng)
    parts = partition_clients(cams, 30, (2, 4), rng)
    inject_noise(parts, rng, 0.5, 3.0)
    for a in parts:
        d = a.true_global_pose.inverse().compose(a.noisy_global_pose)
        assert np.all(np.abs(a.noisy_global_pose.translation - a.true_global_pose.translation) <= 0.5 + 1e-12)
        assert d.angle_deg() <= 3.0 + 1e-9
    inject_noise(parts, rng, 0.0, 0.0)
    assert all(a.noisy_global_pose.allclose(a.true_global_pose) for a in parts)


def test_client_dataset_rendering():
    spec = small_spec(n_boxes=0, n_spheres=0, terrain=False)
    gt = build_scene(spec)
    cams = generate_trajectory(spec, 3, "orbit", width=8, height=8, altitude=5.0)
    ds = render_client_dataset(gt, cams, n_samples=16)
    assert len(ds.images) == len(ds.cameras) == 3
    assert all(np.all(img == 0) for img in ds.images)
    full = build_scene(small_spec())
    a = render_client_dataset(full, cams, n_samples=16)
    b = render_client_dataset(full, cams, n_samples=16)
    assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
    assert any(np.any(img > 0) for img in a.images)


def test_scene_spec_dict_round_trip():
    box = Primitive(BOX, np.array([0.0, 0.0, 1.0]), np.array([1.0, 1.0, 1.0]), 20.0, color_to_dc([0.5, 0.5, 0.5]))
    spec = small_spec(seed=3, texture="checker", extra=[box])
    again = SceneSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
    assert build_scene(again) == build_scene(spec)
    with pytest.raises(ValueError):
        small_spec(resolution=1)
    with pytest.raises(ValueError):
        small_spec(sigma_range=(0.0, 1.0))
