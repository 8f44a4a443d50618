import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxfed.field import ACTIVATED, VoxelField
from voxfed.geometry import Camera, Pose, look_rotation
from voxfed.render import psnr, render_image
from voxfed.train import (
    AdamState,
    Batch,
    ClientDataset,
    Grads,
    TrainConfig,
    adam_step,
    forward_backward,
    forward_backward_sparse,
    init_field,
    make_batch,
    photometric_loss,
    train_client,
)

from .helpers import fd_gradients, fd_gradients_fast, max_rel_error, random_batch, random_field


def orbit(n, radius=4.0, height=2.5, size=16, fov=50.0):
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        pos = np.array([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(Camera.from_fov(size, size, fov, Pose(look_rotation(-pos), pos)))
    return cams


def test_loss_examples(rng):
    f = random_field(rng)
    b = random_batch(rng, f)
    # target equal to the render: zero loss
    same = Batch(b.origins, b.dirs, np.zeros_like(b.target), b.s, b.deltas)
    from voxfed.render import render_rays

    out = render_rays(f, b.origins, b.dirs, near_far=(b.s[:, 0] - b.deltas[:, 0] / 2, b.s[:, -1] + b.deltas[:, -1] / 2),
                      n_samples=b.s.shape[1])
    same.target = out.color
    assert photometric_loss(f, same) == pytest.approx(0.0, abs=1e-20)
    g = forward_backward(f, same)
    assert g.loss == pytest.approx(0.0, abs=1e-20)
    assert np.max(np.abs(g.density)) < 1e-12 and np.max(np.abs(g.sh)) < 1e-12

    # black (empty) field against white: 3 per ray
    empty = VoxelField.zeros(f.origin, f.voxel_size, f.dims, mode=ACTIVATED)
    white = Batch(b.origins, b.dirs, np.ones_like(b.target), b.s, b.deltas)
    assert photometric_loss(empty, white) == pytest.approx(3.0)
    assert forward_backward(empty, white).loss == pytest.approx(3.0)


def test_loss_matches_independent_oracle(rng):
    from .helpers import _stack_loss
    from voxfed.field import interpolation_matrix

    for _ in range(5):
        f = random_field(rng)
        b = random_batch(rng, f)
        pts = b.origins[:, None, :] + b.s[..., None] * b.dirs[:, None, :]
        mat, _, inside = interpolation_matrix(f, pts.reshape(-1, 3))
        raw = (mat @ f.density.reshape(-1))[None]
        k = (mat @ f.sh.reshape(-1, 27))[None]
        want = _stack_loss(raw, k, inside, b)[0]
        assert photometric_loss(f, b) == pytest.approx(want, rel=1e-12)
        assert forward_backward(f, b).loss == pytest.approx(want, rel=1e-12)
        assert forward_backward_sparse(f, b).loss == pytest.approx(want, rel=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(3):
        f = random_field(rng)
        b = random_batch(rng, f)
        g = forward_backward(f, b)
        gs = forward_backward_sparse(f, b)
        fd_d, fd_s = fd_gradients(f, b)
        for grads in (g, gs):
            assert max_rel_error(grads.density, fd_d) <= 1e-3
            assert max_rel_error(grads.sh, fd_s) <= 1e-3


@given(st.integers(0, 2**32 - 1), st.sampled_from(["logit", "activated"]))
@settings(max_examples=15)
def test_compiled_and_sparse_gradients_agree(seed, mode):
    rng = np.random.default_rng(seed)
    f = random_field(rng, mode=mode)
    b = random_batch(rng, f, n_rays=6, n_samples=12, jitter=True)
    g = forward_backward(f, b)
    gs = forward_backward_sparse(f, b)
    assert g.loss == pytest.approx(gs.loss, rel=1e-10)
    assert np.allclose(g.density, gs.density, rtol=1e-8, atol=1e-13)
    assert np.allclose(g.sh, gs.sh, rtol=1e-8, atol=1e-13)
    assert np.array_equal(np.sort(g.touched), np.sort(gs.touched))
    fd_d, fd_s = fd_gradients_fast(f, b)
    assert max_rel_error(g.density, fd_d) <= 1e-3
    assert max_rel_error(g.sh, fd_s) <= 1e-3


def test_unsampled_nodes_get_zero_gradient(rng):
    f = random_field(rng, dims=(8, 8, 8), voxel_size=0.25, origin=(-1, -1, -1))
    # one ray straight down the x = y = -0.1 line touches only four node columns
    o = np.array([[-0.1, -0.1, 3.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    b = make_batch(f, o, d, np.full((1, 3), 0.5), 16)
    g = forward_backward(f, b)
    mask = np.zeros(f.n_nodes, bool)
    mask[g.touched] = True
    assert mask.sum() == 4 * 8
    assert np.all(g.density.reshape(-1)[~mask] == 0.0)
    assert np.all(g.sh.reshape(f.n_nodes, -1)[~mask] == 0.0)


def test_adam_examples():
    f = VoxelField.zeros((0, 0, 0), 1.0, (2, 2, 2), mode="logit")
    cfg = TrainConfig(lr_density=0.1, lr_sh=0.05)
    state = AdamState.for_field(f)
    state.m_density[:] = 1.0
    state.v_density[:] = 4.0
    zero = Grads(np.zeros_like(f.density), np.zeros_like(f.sh), 0.0)
    before = f.copy()
    adam_step(f, state, zero, cfg)
    # moments decay; the update uses the decayed first moment
    assert np.allclose(state.m_density, 0.9) and np.allclose(state.v_density, 4.0 * 0.99)
    f = before.copy()
    state = AdamState.for_field(f)
    adam_step(f, state, zero, cfg)
    assert f == before

    g = np.full_like(f.density, 0.3)
    g[0, 0, 0] = -2.0
    grads = Grads(g, np.full_like(f.sh, 1e-3), 0.0)
    state = AdamState.for_field(f)
    adam_step(f, state, grads, cfg)
    # first step: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert np.allclose(f.density, -0.1 * g / (np.abs(g) + cfg.eps), rtol=1e-12)
    assert np.allclose(f.sh, -0.05 * 1e-3 / (1e-3 + cfg.eps), rtol=1e-12)
    with pytest.raises(ValueError):
        adam_step(VoxelField.zeros((0, 0, 0), 1.0, (3, 2, 2), mode="logit"), state, grads, cfg)


def test_train_config_rejects_bad_values():
    with pytest.raises(ValueError):
        TrainConfig(lr_density=0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(min_views=0)


def _solid_dataset(n_views=6, size=16, color=(0.8, 0.3, 0.1)):
    gt = VoxelField.zeros((-1, -1, -1), 0.25, (9, 9, 9), mode=ACTIVATED)
    gt.density[2:7, 2:7, 2:7] = 30.0
    from voxfed.scene import color_to_dc

    gt.sh[:] = color_to_dc(np.array(color))
    cams = orbit(n_views, size=size)
    images = [render_image(gt, c, 64)[0] for c in cams]
    return ClientDataset(images, cams, gt.bounds), gt


def test_epochs_zero_keeps_initialisation():
    ds, _ = _solid_dataset(2, 8)
    cfg = TrainConfig(epochs=0, voxel_size=0.25, n_samples=16)
    f = train_client(ds, cfg)
    assert f == init_field(ds.bounds, cfg)
    assert not f.occupancy.any()
    with pytest.raises(ValueError):
        train_client(ClientDataset([], [], ds.bounds), cfg)


def test_training_recovers_solid_scene_and_is_deterministic():
    ds, _ = _solid_dataset()
    cfg = TrainConfig(epochs=30, batch_size=512, voxel_size=0.25, n_samples=48, lr_density=0.2, lr_sh=0.1, seed=3)
    f = train_client(ds, cfg)
    scores = [psnr(render_image(f, c, 48, ds.bounds)[0], img) for c, img in zip(ds.cameras, ds.images)]
    assert min(scores) >= 30.0, scores
    assert f == train_client(ds, cfg)
    assert f.occupancy.any()
