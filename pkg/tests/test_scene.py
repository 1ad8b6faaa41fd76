import numpy as np
import pytest

from roce import geometry as geo, scene
from roce.scene import (
    Blob,
    SyntheticScene,
    blob_center_at,
    make_dataset,
    project_to_tokens,
    random_scene,
    render_scene,
    render_video,
    toy_intrinsics,
)


def test_toy_intrinsics():
    intr = toy_intrinsics(6, 6)
    assert intr.fx == intr.fy == 6.0
    assert intr.cx == intr.cy == 3.0
    assert intr.width == intr.height == 6.0


def test_random_scene_invariants():
    for seed in range(10):
        sc = random_scene(np.random.default_rng(seed))
        assert sc.moving_index == 0
        assert len(sc.blobs) >= 2
        # moving blob strictly brighter than every static one
        m = sc.blobs[0].color.min()
        for b in sc.blobs[1:]:
            assert m > b.color.max()
        assert np.all(np.abs(sc.velocity) <= 0.1)
        assert np.all(sc.blobs[0].center[2] > 0)


def test_random_scene_deterministic():
    a = random_scene(np.random.default_rng(42))
    b = random_scene(np.random.default_rng(42))
    assert np.array_equal(a.blobs[0].center, b.blobs[0].center)
    assert np.array_equal(a.velocity, b.velocity)


def test_blob_center_at():
    sc = random_scene(np.random.default_rng(1))
    c0 = blob_center_at(sc, 0, 0.0)
    c3 = blob_center_at(sc, 0, 3.0)
    assert np.allclose(c3 - c0, 3.0 * sc.velocity)
    # static blobs do not move
    s0 = blob_center_at(sc, 1, 0.0)
    s9 = blob_center_at(sc, 1, 9.0)
    assert np.array_equal(s0, s9)


def test_scene_validation():
    with pytest.raises(ValueError):
        Blob(center=np.zeros(3), radius=-0.1, color=np.ones(3))
    blob = Blob(center=np.array([0, 0, 4.0]), radius=0.3, color=np.ones(3))
    with pytest.raises(ValueError):
        SyntheticScene(blobs=(blob,), moving_index=5, velocity=np.zeros(3), background=np.zeros(3))


# --- projection -----------------------------------------------------------------


def test_project_on_axis_hits_grid_center():
    intr = toy_intrinsics(6, 6)
    u, v, z = project_to_tokens(geo.identity_pose(), intr, np.array([0.0, 0.0, 4.0]), 6, 6)
    # cx = w/2 pixels -> token coordinate (w-1)/2
    assert u == pytest.approx(2.5, abs=1e-12)
    assert v == pytest.approx(2.5, abs=1e-12)
    assert z == pytest.approx(4.0)


def test_project_behind_camera_is_nan():
    intr = toy_intrinsics(4, 4)
    u, v, z = project_to_tokens(geo.identity_pose(), intr, np.array([0.0, 0.0, -2.0]), 4, 4)
    assert np.isnan(u) and np.isnan(v) and z < 0


def test_project_respects_pose():
    intr = toy_intrinsics(4, 4)
    # camera moved +1 in x: a point at x=+1 lands back on the axis
    pose = geo.CameraPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    u, _, _ = project_to_tokens(pose, intr, np.array([1.0, 0.0, 3.0]), 4, 4)
    assert u == pytest.approx(1.5, abs=1e-12)  # (w-1)/2 for w=4


def test_project_depth_is_camera_z():
    intr = toy_intrinsics(4, 4)
    R = geo.yaw_rotation(np.pi / 2)  # camera now looks along world +x
    pose = geo.CameraPose(R, np.zeros(3))
    _, _, z = project_to_tokens(pose, intr, np.array([2.0, 0.0, 0.0]), 4, 4)
    assert z == pytest.approx(2.0, abs=1e-12)


# --- rendering ------------------------------------------------------------------


def test_render_background_only():
    sc = SyntheticScene(
        blobs=(Blob(center=np.array([0, 0, -5.0]), radius=0.3, color=np.ones(3)),),
        moving_index=None,
        velocity=np.zeros(3),
        background=np.full(3, 0.07),
    )
    img = render_scene(sc, geo.identity_pose(), toy_intrinsics(4, 4), 4, 4)
    assert img.shape == (4, 4, 3)
    assert np.allclose(img, 0.07)  # blob behind the camera leaves pure background


def test_render_peak_at_projected_center():
    sc = SyntheticScene(
        blobs=(Blob(center=np.array([0.0, 0.0, 4.0]), radius=0.35, color=np.ones(3)),),
        moving_index=None,
        velocity=np.zeros(3),
        background=np.zeros(3),
    )
    h = w = 7  # odd grid: token (3,3) sits exactly on the axis
    intr = toy_intrinsics(h, w)
    img = render_scene(sc, geo.identity_pose(), intr, h, w)
    lum = img.sum(axis=-1)
    vmax, umax = np.unravel_index(np.argmax(lum), lum.shape)
    assert (vmax, umax) == (3, 3)
    assert lum[3, 3] > 10 * lum[0, 0]


def test_render_moving_blob_shifts():
    sc = SyntheticScene(
        blobs=(Blob(center=np.array([-0.8, 0.0, 4.0]), radius=0.3, color=np.ones(3)),),
        moving_index=0,
        velocity=np.array([0.4, 0.0, 0.0]),
        background=np.zeros(3),
    )
    intr = toy_intrinsics(7, 7)
    img0 = render_scene(sc, geo.identity_pose(), intr, 7, 7, t_frame=0.0)
    img4 = render_scene(sc, geo.identity_pose(), intr, 7, 7, t_frame=4.0)
    u0 = np.argmax(img0.sum(axis=-1).max(axis=0))
    u4 = np.argmax(img4.sum(axis=-1).max(axis=0))
    assert u4 > u0  # moved right in the image


def test_render_occlusion_order():
    # a bright near blob in front of a dim far blob along the same ray
    near = Blob(center=np.array([0.0, 0.0, 3.0]), radius=0.3, color=np.array([1.0, 0.0, 0.0]))
    far = Blob(center=np.array([0.0, 0.0, 6.0]), radius=0.6, color=np.array([0.0, 1.0, 0.0]))
    sc = SyntheticScene(blobs=(far, near), moving_index=None, velocity=np.zeros(3), background=np.zeros(3))
    img = render_scene(sc, geo.identity_pose(), toy_intrinsics(7, 7), 7, 7)
    # at the shared center the near (red) blob dominates
    assert img[3, 3, 0] > img[3, 3, 1]


def test_render_video_timestamps_and_stride():
    sc = random_scene(np.random.default_rng(5))
    intr = toy_intrinsics(4, 4)
    traj = geo.make_trajectory("pan_right", 7, intr)
    vid = render_video(sc, traj, f=3, h=4, w=4, stride=3)
    assert vid.shape == (3, 4, 4, 3)
    # latent frame i equals a direct render at video frame i*stride
    direct = render_scene(sc, traj.poses[3], intr, 4, 4, t_frame=3.0)
    assert np.allclose(vid[1], direct, atol=1e-12)


def test_render_video_frame_shortfall():
    sc = random_scene(np.random.default_rng(6))
    intr = toy_intrinsics(4, 4)
    traj = geo.make_trajectory("pan_right", 5, intr)
    with pytest.raises(ValueError):
        render_video(sc, traj, f=4, h=4, w=4, stride=2)  # needs 7 frames


# --- paired dataset -----------------------------------------------------------------


def test_dataset_shapes_and_determinism():
    a = make_dataset(6, f=2, h=4, w=4, seed=9)
    b = make_dataset(6, f=2, h=4, w=4, seed=9)
    assert len(a) == 6
    for x, y in zip(a, b):
        assert x.source_latents.shape == (2, 4, 4, 3)
        assert x.source_latents.dtype == np.float32
        assert np.array_equal(x.source_latents, y.source_latents)
        assert np.array_equal(x.target_latents, y.target_latents)
        assert x.kind_t == y.kind_t and x.is_reversed == y.is_reversed


def test_dataset_identity_items_share_everything():
    items = make_dataset(40, f=2, h=4, w=4, seed=3, identity_ratio=0.5)
    ids = [it for it in items if it.is_identity]
    assert ids, "expected some identity retakes at ratio 0.5"
    for it in ids:
        assert it.kind_s == it.kind_t
        assert np.array_equal(it.source_latents, it.target_latents)
        for p, q in zip(it.traj_s.poses, it.traj_t.poses):
            assert np.array_equal(p.rotation, q.rotation)


def test_dataset_reversed_items_flip_both():
    items = make_dataset(40, f=3, h=4, w=4, seed=4, reverse_ratio=1.0, identity_ratio=0.0)
    straight = make_dataset(40, f=3, h=4, w=4, seed=4, reverse_ratio=0.0, identity_ratio=0.0)
    for rev, fwd in zip(items, straight):
        assert rev.is_reversed and not fwd.is_reversed
        assert np.array_equal(rev.source_latents, fwd.source_latents[::-1])
        assert np.array_equal(rev.target_latents, fwd.target_latents[::-1])
        assert np.array_equal(
            rev.traj_t.poses[0].rotation, fwd.traj_t.poses[-1].rotation
        )


def test_dataset_ratios_roughly_hold():
    items = make_dataset(300, f=2, h=3, w=3, seed=11, identity_ratio=0.1, reverse_ratio=0.25)
    id_frac = np.mean([it.is_identity for it in items])
    rev_frac = np.mean([it.is_reversed for it in items])
    assert 0.04 < id_frac < 0.18
    assert 0.17 < rev_frac < 0.34


def test_dataset_kinds_restricted():
    items = make_dataset(20, f=2, h=3, w=3, seed=12, kinds=("zoom_in", "pan_left"))
    for it in items:
        assert it.kind_s in ("zoom_in", "pan_left")
        assert it.kind_t in ("zoom_in", "pan_left")
