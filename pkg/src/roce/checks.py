"""Self-contained invariant suites behind the ``check`` CLI command.

Every check is a zero-argument callable that raises AssertionError (or any
exception) on failure; suites are deterministic (fixed seeds) and independent
of each other, so they can run concurrently. The rotary checks compare the
main path against the complex-domain reference, which hardcodes its own
frequency base — perturbing `rope.ROPE_BASE` must make this suite fail.
"""
from __future__ import annotations

import os
import tempfile
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import attention, autodiff as ad, flow, geometry as geo, oracle, rope

CheckResult = namedtuple("CheckResult", ["suite", "name", "passed", "detail"])

SUITES = ("geometry", "rope", "roce", "flow")


# =============================================================================
# geometry
# =============================================================================


def _random_pose(rng) -> geo.CameraPose:
    # rotation via QR of a random matrix, det fixed to +1
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] *= -1
    return geo.CameraPose(q, rng.normal(size=3))


def check_se3_group_laws():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b, c = (_random_pose(rng) for _ in range(3))
        ab_c = geo.compose(geo.compose(a, b), c)
        a_bc = geo.compose(a, geo.compose(b, c))
        assert np.allclose(ab_c.rotation, a_bc.rotation, atol=1e-12), "compose not associative"
        assert np.allclose(ab_c.translation, a_bc.translation, atol=1e-11), "compose not associative"
        inv = geo.compose(a, geo.inverse(a))
        assert np.allclose(inv.rotation, np.eye(3), atol=1e-12), "a * a^-1 != I"
        assert np.allclose(inv.translation, 0, atol=1e-12), "a * a^-1 != I"
        rel = geo.relative_pose(a, a)
        assert np.allclose(rel.rotation, np.eye(3), atol=1e-12), "relative_pose(a, a) != I"


def check_quat_roundtrip():
    rng = np.random.default_rng(12)
    for _ in range(50):
        R = _random_pose(rng).rotation
        q = geo.rotation_to_quat_wxyz(R)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12, "quaternion not unit"
        R2 = geo.quat_wxyz_to_rotation(q)
        assert np.max(np.abs(R - R2)) < 1e-12, "quat roundtrip drifted"


def check_pluecker_constraints():
    rng = np.random.default_rng(13)
    intr = geo.Intrinsics(fx=420.0, fy=380.0, cx=200.0, cy=150.0, width=400.0, height=300.0)
    for _ in range(5):
        pose = _random_pose(rng)
        pm = geo.pluecker_map(pose, intr, 6, 8)
        d = pm.rays[..., :3]
        m = pm.rays[..., 3:]
        assert np.max(np.abs(np.linalg.norm(d, axis=-1) - 1.0)) < 1e-7, "directions not unit"
        assert np.max(np.abs(np.sum(d * m, axis=-1))) < 1e-7, "moment not orthogonal"


def check_pluecker_center_token():
    intr = geo.Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100.0, height=100.0)
    pm = geo.pluecker_map(geo.identity_pose(), intr, 5, 5)
    center = pm.rays[2, 2]
    assert np.max(np.abs(center - np.array([0, 0, 1, 0, 0, 0.0]))) < 1e-12, (
        f"center ray {center} != (0,0,1,0,0,0)"
    )


def check_pluecker_scale_rule():
    # the token sampling rule makes rays invariant to joint rescaling of the
    # pixel frame (intrinsics and image size together)
    rng = np.random.default_rng(14)
    pose = _random_pose(rng)
    base = geo.Intrinsics(fx=300.0, fy=280.0, cx=160.0, cy=120.0, width=320.0, height=240.0)
    ref = geo.pluecker_map(pose, base, 4, 6).rays
    for s in (0.5, 2.0, 3.75):
        scaled = geo.Intrinsics(
            fx=base.fx * s, fy=base.fy * s, cx=base.cx * s, cy=base.cy * s,
            width=base.width * s, height=base.height * s,
        )
        got = geo.pluecker_map(pose, scaled, 4, 6).rays
        assert np.max(np.abs(got - ref)) < 1e-12, f"rays changed under joint scale {s}"


_TOTALS = {
    "pan_right": (20.0, np.zeros(3)),
    "pan_left": (20.0, np.zeros(3)),
    "tilt_up": (10.0, np.zeros(3)),
    "tilt_down": (10.0, np.zeros(3)),
    "zoom_in": (0.0, np.array([0, 0, 2.0])),
    "zoom_out": (0.0, np.array([0, 0, -2.0])),
    "translate_up": (14.0, np.array([0, 1.0, -0.12])),
    "translate_down": (14.0, np.array([0, -1.0, -0.12])),
    "arc_left": (30.0, np.array([-2.0, 0, 0.01])),
    "arc_right": (30.0, np.array([2.0, 0, 0.01])),
}


def check_trajectory_totals():
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    for kind, (deg, t_total) in _TOTALS.items():
        for frames in (2, 5, 81, 241):
            traj = geo.make_trajectory(kind, frames, intr)
            assert traj.frames == frames
            assert np.allclose(traj.poses[0].rotation, np.eye(3)) and np.allclose(
                traj.poses[0].translation, 0
            ), "first pose not identity"
            last = traj.poses[-1]
            angle = geo.rotation_angle_deg(last.rotation)
            assert abs(angle - deg) < 1e-7 * max(1.0, deg), (
                f"{kind} F={frames}: total angle {angle} != {deg}"
            )
            assert np.max(np.abs(last.translation - t_total)) < 1e-7, (
                f"{kind} F={frames}: total translation {last.translation} != {t_total}"
            )
            # constant per-frame increments: every successive relative pose matches
            rel0 = geo.relative_pose(traj.poses[0], traj.poses[1])
            per_angle = geo.rotation_angle_deg(rel0.rotation)
            assert abs(per_angle - deg / (frames - 1)) < 1e-8 * max(1.0, deg), (
                f"{kind}: per-frame angle {per_angle} != {deg / (frames - 1)}"
            )
            for i in (1, frames - 1):
                rel = geo.relative_pose(traj.poses[i - 1], traj.poses[i])
                assert abs(geo.rotation_angle_deg(rel.rotation) - per_angle) < 1e-8, (
                    f"{kind}: per-frame rotation drifts at {i}"
                )
                assert abs(np.linalg.norm(rel.translation) - np.linalg.norm(t_total) / (frames - 1)) < 1e-9, (
                    f"{kind}: per-frame translation magnitude drifts at {i}"
                )


def check_trajectory_scale():
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    traj = geo.make_trajectory("pan_right", 9, intr, scale=2.0)
    assert abs(geo.rotation_angle_deg(traj.poses[-1].rotation) - 40.0) < 1e-8, "scale=2 total != 40 deg"
    traj = geo.make_trajectory("zoom_in", 9, intr, scale=0.5)
    assert abs(traj.poses[-1].translation[2] - 1.0) < 1e-12, "scale=0.5 zoom total != 1 m"


def check_time_reverse_involution():
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    traj = geo.make_trajectory("arc_left", 7, intr)
    back = geo.time_reverse(geo.time_reverse(traj))
    for p, q in zip(traj.poses, back.poses):
        assert np.array_equal(p.rotation, q.rotation) and np.array_equal(p.translation, q.translation)
    arr = np.arange(24.0).reshape(4, 3, 2)
    assert np.array_equal(geo.time_reverse(geo.time_reverse(arr)), arr)


def check_metrics_zero_and_bruteforce():
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    gt = geo.make_trajectory("arc_right", 6, intr)
    assert geo.rot_err(gt, gt) == 0.0, "rot_err not zero on identical"
    assert geo.trans_err(gt, gt) == 0.0, "trans_err not zero on identical"
    # yaw each pose by 5 deg * frame index (gt tilts about x, so nothing
    # commutes and pair angles stay O(degrees)); brute-force via quaternions
    tilt = geo.make_trajectory("tilt_up", 6, intr)
    pred = geo.Trajectory(
        poses=tuple(
            geo.CameraPose(p.rotation @ geo.yaw_rotation(np.radians(5.0 * i)), p.translation)
            for i, p in enumerate(tilt.poses)
        ),
        intrinsics=intr,
    )
    gt = tilt
    got = geo.rot_err(pred, gt)
    expected = []
    n = gt.frames
    for i in range(n):
        for j in range(i + 1, n):
            rp = geo.relative_pose(pred.poses[i], pred.poses[j]).rotation
            rg = geo.relative_pose(gt.poses[i], gt.poses[j]).rotation
            w = geo.rotation_to_quat_wxyz(rp.T @ rg)[0]
            expected.append(np.degrees(2.0 * np.arccos(min(1.0, abs(w)))))
    assert abs(got - float(np.mean(expected))) < 1e-9, "rot_err disagrees with quaternion loop"


def check_trans_err_scale_alignment():
    rng = np.random.default_rng(15)
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    poses = tuple(_random_pose(rng) for _ in range(5))
    gt = geo.Trajectory(poses=poses, intrinsics=intr)
    scaled = geo.Trajectory(
        poses=tuple(geo.CameraPose(p.rotation, 3.7 * p.translation) for p in poses),
        intrinsics=intr,
    )
    assert geo.trans_err(scaled, gt) < 1e-9, "global scale not absorbed"
    assert geo.rot_err(scaled, gt) < 1e-12, "rotation affected by translation scale"


def check_jsonl_roundtrip():
    intr = geo.Intrinsics(fx=500.0, fy=500.0, cx=416.0, cy=240.0, width=832.0, height=480.0)
    traj = geo.make_trajectory("translate_down", 5, intr, scale=1.5)
    fd, path = tempfile.mkstemp(suffix=".jsonl")
    os.close(fd)
    try:
        geo.write_trajectory_jsonl(path, traj)
        back = geo.read_trajectory_jsonl(path)
        assert back.frames == traj.frames
        for p, q in zip(traj.poses, back.poses):
            assert np.max(np.abs(p.rotation - q.rotation)) < 1e-9, "rotation drifted through file"
            assert np.max(np.abs(p.translation - q.translation)) < 1e-12, "translation drifted"
        # corrupted quaternion must be rejected
        with open(path) as fh:
            lines = fh.readlines()
        import json as _json

        rec = _json.loads(lines[0])
        rec["quat_wxyz"] = [1.0, 0.1, 0.0, 0.0]
        with open(path, "w") as fh:
            fh.write(_json.dumps(rec) + "\n")
        try:
            geo.read_trajectory_jsonl(path)
            assert False, "non-unit quaternion accepted"
        except ValueError:
            pass
    finally:
        os.unlink(path)


# =============================================================================
# rope
# =============================================================================


def check_frequency_schedule_values():
    # direct high-precision evaluation with the canonical base; this check is
    # the negative control for a perturbed rope.ROPE_BASE
    for d_head in (12, 48, 96):
        sched = rope.frequency_schedule(d_head)
        half = d_head // 2
        ref = np.array([10000.0 ** (-(c - 1) / half) for c in range(1, half + 1)])
        assert np.max(np.abs(sched - ref)) < 1e-15, f"schedule mismatch for d_head={d_head}"


def check_frequency_schedule_invariants():
    sched = rope.frequency_schedule(48)
    assert sched[0] == 1.0, "theta_1 != 1"
    assert np.all(np.diff(sched) < 0), "schedule not strictly decreasing"
    assert np.all(sched > 0), "schedule not positive"


def check_rope3d_matches_reference():
    for f, h, w, d in ((1, 2, 2, 12), (2, 3, 3, 12), (2, 2, 2, 48)):
        field = rope.rope_3d(f, h, w, d)
        ref = oracle.oracle_rope_3d(f, h, w, d)
        assert np.max(np.abs(field.cos - ref.real)) < 1e-12, "cos table mismatch"
        assert np.max(np.abs(field.sin - ref.imag)) < 1e-12, "sin table mismatch"


def check_shift_invariance_1d():
    rng = np.random.default_rng(21)
    L, C = 8, 6
    q = rng.normal(size=(L, 2 * C))
    k = rng.normal(size=(L, 2 * C))
    base_field = rope.rope_1d(L, C)
    ref = rope.apply_rotation(q, base_field) @ rope.apply_rotation(k, base_field).T
    for shift in (1, 3, 5):
        field = rope.rope_1d(L + shift, C)
        sub = rope.RotationField(
            angles=field.angles[shift:], cos=field.cos[shift:], sin=field.sin[shift:]
        )
        got = rope.apply_rotation(q, sub) @ rope.apply_rotation(k, sub).T
        assert np.max(np.abs(got - ref)) < 1e-6, f"1d logits changed under shift {shift}"


def check_shift_invariance_3d():
    rng = np.random.default_rng(22)
    f, h, w, d = 2, 2, 3, 12
    n = f * h * w
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    base = rope.rope_3d(f, h, w, d)
    ref = rope.apply_rotation(q, base) @ rope.apply_rotation(k, base).T
    for df, dh, dw in ((1, 0, 0), (0, 2, 1), (3, 2, 1)):
        big = rope.rope_3d(f + df, h + dh, w + dw, d)
        rows = []
        for fi in range(f):
            for hi in range(h):
                for wi in range(w):
                    rows.append(((fi + df) * (h + dh) + (hi + dh)) * (w + dw) + (wi + dw))
        sub = rope.RotationField(
            angles=big.angles[rows], cos=big.cos[rows], sin=big.sin[rows]
        )
        got = rope.apply_rotation(q, sub) @ rope.apply_rotation(k, sub).T
        assert np.max(np.abs(got - ref)) < 1e-6, f"3d logits changed under shift {(df, dh, dw)}"


def check_axis_separability():
    d = 12
    field = rope.rope_3d(3, 3, 3, d)
    per = d // 6

    def row(fi, hi, wi):
        return field.angles[(fi * 3 + hi) * 3 + wi]

    a = row(1, 2, 0)
    b = row(1, 2, 2)  # moved along w only
    assert np.array_equal(a[: 2 * per], b[: 2 * per]), "f/h blocks changed with w move"
    assert not np.array_equal(a[2 * per :], b[2 * per :]), "w block did not change"


def check_rotation_norm_preservation():
    rng = np.random.default_rng(23)
    field = rope.rope_3d(2, 2, 2, 12)
    x = rng.normal(size=(8, 12))
    y = rope.apply_rotation(x, field)
    nx = np.hypot(x[:, 0::2], x[:, 1::2])
    ny = np.hypot(y[:, 0::2], y[:, 1::2])
    assert np.max(np.abs(nx - ny)) < 1e-12, "pair norms not preserved"


def check_pair_broadcast():
    rng = np.random.default_rng(24)
    field = rope.rope_1d(4, 3)
    x = rng.normal(size=(8, 6))
    got = rope.apply_rotation(x, field)
    pair = rope.shared_rope_for_pair(field)
    want = rope.apply_rotation(x, pair)
    assert np.array_equal(got, want), "2-block broadcast disagrees with explicit stacking"


# =============================================================================
# roce (camera-phase attention)
# =============================================================================


def _plain_rope_attention(q, k, v, field):
    # independent baseline: rotate, scaled dot product, softmax, mix
    qr = rope.apply_rotation(q, field)
    kr = rope.apply_rotation(k, field)
    logits = qr @ kr.T / np.sqrt(q.shape[-1])
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=-1, keepdims=True)
    return attn @ v


def check_zero_phase_reduction():
    rng = np.random.default_rng(31)
    f, h, w, d = 2, 2, 2, 12
    n = 2 * f * h * w
    field = rope.shared_rope_for_pair(rope.rope_3d(f, h, w, d))
    net_qk = attention.PhaseNetwork(n_out=d // 3, rng=rng, dtype=np.float64)
    net_vo = attention.PhaseNetwork(n_out=d // 3, rng=rng, dtype=np.float64)
    cams = rng.normal(size=(n, 6))
    phi_qk = attention.build_phase(net_qk, cams, d)
    phi_vo = attention.build_phase(net_vo, cams, d)
    assert np.all(phi_qk.data == 0) and np.all(phi_vo.data == 0), "fresh networks not zero"
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    out = attention.roce_attention(q, k, v, field, phi_qk, phi_vo)
    ref = _plain_rope_attention(q, k, v, field)
    assert np.max(np.abs(out.data - ref)) < 1e-6, "zero phases do not reduce to plain rotary"


def check_reference_agreement():
    rng = np.random.default_rng(32)
    f, h, w, d = 1, 2, 3, 12
    n = 2 * f * h * w
    field = rope.shared_rope_for_pair(rope.rope_3d(f, h, w, d))
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    phi_qk = np.concatenate([np.zeros((n, d // 6)), rng.normal(size=(n, d // 3))], axis=1)
    phi_vo = np.concatenate([np.zeros((n, d // 6)), rng.normal(size=(n, d // 3))], axis=1)
    out, logits, attn = attention.roce_attention(
        q, k, v, field, phi_qk, phi_vo, return_intermediates=True
    )
    ref_logits, ref_attn, ref_out = oracle.oracle_roce_attention(
        q, k, v, field.angles, phi_qk, phi_vo
    )
    assert np.max(np.abs(logits.data - ref_logits)) < 1e-9, "logits disagree with reference"
    assert np.max(np.abs(attn.data - ref_attn)) < 1e-9, "attention disagrees with reference"
    assert np.max(np.abs(out.data - ref_out)) < 1e-9, "outputs disagree with reference"


def check_constant_vo_cancellation():
    rng = np.random.default_rng(33)
    f, h, w, d = 1, 2, 2, 12
    n = 2 * f * h * w
    field = rope.shared_rope_for_pair(rope.rope_3d(f, h, w, d))
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    phi_const = np.tile(
        np.concatenate([np.zeros(d // 6), rng.normal(size=d // 3)])[None, :], (n, 1)
    )
    out = attention.roce_attention(q, k, v, field, None, phi_const)
    ref = attention.roce_attention(q, k, v, field, None, None)
    assert np.max(np.abs(out.data - ref.data)) < 1e-6, "token-constant vo phase did not cancel"


def check_vo_norm_preservation():
    rng = np.random.default_rng(34)
    f, h, w, d = 1, 2, 2, 12
    n = 2 * f * h * w
    field = rope.shared_rope_for_pair(rope.rope_3d(f, h, w, d))
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    phi_vo = np.concatenate([np.zeros((n, d // 6)), rng.normal(size=(n, d // 3))], axis=1)
    out, _, attn = attention.roce_attention(q, k, v, field, None, phi_vo, return_intermediates=True)
    # the final rotation is norm-preserving: pair norms equal the pre-rotation mix
    vr = rope.apply_rotation(v, rope.RotationField.from_angles(-phi_vo.astype(np.float64)))
    mixed = attn.data @ vr
    nm = np.hypot(mixed[:, 0::2], mixed[:, 1::2])
    no = np.hypot(out.data[:, 0::2], out.data[:, 1::2])
    assert np.max(np.abs(nm - no)) < 1e-9, "output rotation changed pair norms"


def check_logit_swap_symmetry():
    rng = np.random.default_rng(35)
    d = 12
    q = rng.normal(size=d)
    k = rng.normal(size=d)
    an = rng.normal(size=d // 2)
    am = rng.normal(size=d // 2)
    pn = rng.normal(size=d // 2)
    pm = rng.normal(size=d // 2)
    a = oracle.oracle_attention_logit(q, k, an, am, pn, pm)
    b = oracle.oracle_attention_logit(k, q, am, an, pm, pn)
    assert abs(a - b) < 1e-10, "swapping roles and indices changed the logit"


def check_softmax_rows():
    rng = np.random.default_rng(36)
    field = rope.rope_1d(6, 6)
    q = rng.normal(size=(6, 12))
    _, _, attn = attention.roce_attention(q, q, q, field, return_intermediates=True)
    assert np.max(np.abs(attn.data.sum(-1) - 1.0)) < 1e-6, "attention rows do not sum to 1"
    assert np.all(attn.data >= 0), "negative attention weight"


def check_phase_map_cases():
    n = 4
    phases = np.zeros((2 * n, 6))
    m = attention.phase_attention_map(phases, 0)
    assert np.array_equal(m, np.ones(n)), "zero phases should give all-ones map"
    phases[n + 2, 3] = np.pi  # one source token shifted by pi on one channel
    m = attention.phase_attention_map(phases, 0, channels=[3])
    assert abs(m[2] + 1.0) < 1e-12, "pi shift should give -1"
    assert np.all(m <= 1.0 + 1e-12) and np.all(m >= -1.0 - 1e-12), "map out of [-1,1]"
    rng = np.random.default_rng(37)
    phases = rng.normal(size=(2 * n, 6))
    phases[n:] = phases[:n]  # identical trajectories: mirrored rows equal
    m = attention.phase_attention_map(phases, 1, block="source")
    assert abs(m[1] - 1.0) < 1e-12, "mirrored token should score 1"


def check_camera_tokens_identity():
    intr = geo.Intrinsics(fx=6.0, fy=6.0, cx=3.0, cy=3.0, width=6.0, height=6.0)
    static = geo.Trajectory(poses=tuple(geo.identity_pose() for _ in range(4)), intrinsics=intr)
    toks = attention.build_camera_tokens(static, static, f=2, h=3, w=3, stride=1)
    n = 2 * 3 * 3
    assert toks.shape == (2 * n, 6)
    assert np.array_equal(toks[:n], toks[n:]), "identical trajectories give different blocks"
    d = toks[:, :3]
    m = toks[:, 3:]
    assert np.max(np.abs(np.linalg.norm(d, axis=1) - 1)) < 1e-7, "directions not unit"
    assert np.max(np.abs(np.sum(d * m, axis=1))) < 1e-7, "moments not orthogonal"
    center = toks[4]  # center token of first frame (3x3 grid, centered pp)
    assert np.max(np.abs(center - np.array([0, 0, 1, 0, 0, 0.0]))) < 1e-9, "center ray off axis"


def check_gradient_attention():
    rng = np.random.default_rng(38)
    f, h, w, d = 1, 2, 2, 12
    n = 2 * f * h * w
    field = rope.shared_rope_for_pair(rope.rope_3d(f, h, w, d))
    net_qk = attention.PhaseNetwork(n_out=d // 3, hidden=8, rng=rng, dtype=np.float64)
    net_vo = attention.PhaseNetwork(n_out=d // 3, hidden=8, rng=rng, dtype=np.float64)
    for net in (net_qk, net_vo):  # move off the zero init so gradients flow everywhere
        net.w2.data = rng.normal(0, 0.3, net.w2.data.shape)
        net.b2.data = rng.normal(0, 0.3, net.b2.data.shape)
    cams = rng.normal(size=(n, 6))
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    weight = rng.normal(size=(n, d))

    def loss_fn():
        phi_qk = attention.build_phase(net_qk, cams, d)
        phi_vo = attention.build_phase(net_vo, cams, d)
        out = attention.roce_attention(q, k, v, field, phi_qk, phi_vo)
        return (out * weight).sum()

    loss = loss_fn()
    loss.backward()
    params = [t for net in (net_qk, net_vo) for t in net.params().values()]
    checked = 0
    for p in params:
        flat = p.data.reshape(-1)
        for _ in range(5):
            idx = np.unravel_index(int(rng.integers(flat.size)), p.data.shape)
            num = ad.numeric_gradient(lambda: loss_fn().data, p, idx, eps=1e-5)
            ana = p.grad[idx]
            rel = ad.gradient_rel_error(ana, num)
            assert rel < 1e-4, f"gradient mismatch {rel:.2e} (analytic {ana}, numeric {num})"
            checked += 1
    assert checked >= 30


def check_phase_checkpoint_roundtrip():
    from . import tensorio

    rng = np.random.default_rng(39)
    net = attention.PhaseNetwork(n_out=4, hidden=8, rng=rng, dtype=np.float64)
    net.w2.data = rng.normal(size=net.w2.data.shape)
    arrays = {f"net.{k}": v.data for k, v in net.params().items()}
    with tempfile.TemporaryDirectory() as d:
        tensorio.save_checkpoint(d, arrays, {k: "phase_qk" for k in arrays})
        back, roles = tensorio.load_checkpoint(d)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]), f"{k} drifted through checkpoint"
        assert roles[k] == "phase_qk"


# =============================================================================
# flow
# =============================================================================


def check_interpolate_endpoints():
    rng = np.random.default_rng(41)
    z0 = rng.normal(size=(3, 4))
    z1 = rng.normal(size=(3, 4))
    assert np.array_equal(flow.interpolate(z0, z1, 0.0), z0), "t=0 is not the data end"
    assert np.array_equal(flow.interpolate(z0, z1, 1.0), z1), "t=1 is not the noise end"


def check_interpolate_affine():
    rng = np.random.default_rng(42)
    z0 = rng.normal(size=(5,))
    z1 = rng.normal(size=(5,))
    for t in (0.25, 0.5, 0.9):
        want = t * z1 + (1 - t) * z0
        assert np.max(np.abs(flow.interpolate(z0, z1, t) - want)) < 1e-15


def check_cfm_trivial_cases():
    z0 = np.zeros((2, 3))
    z1 = np.ones((2, 3))
    zero_model = lambda z, t, c: np.zeros_like(z)
    assert abs(flow.cfm_loss(zero_model, z0, z1, 0.5) - 1.0) < 1e-12, "unit velocity loss != 1"
    perfect = lambda z, t, c: np.ones_like(z)
    assert flow.cfm_loss(perfect, z0, z1, 0.3) < 1e-15, "perfect model has nonzero loss"


def check_sampler_constant_field():
    z1 = np.full((2, 2), 5.0)
    model = lambda z, t, c: np.ones_like(z)
    out = flow.sample(model, z1, steps=10)
    assert np.max(np.abs(out - 4.0)) < 1e-12, "constant field should move z by exactly -1"


def check_sampler_linear_model():
    z1 = np.array([8.0, -4.0])
    model = lambda z, t, c: z
    out = flow.sample(model, z1, steps=4)
    assert np.max(np.abs(out - z1 * (0.75**4))) < 1e-12, "linear field closed form violated"


def check_sampler_step_count():
    calls = []
    model = lambda z, t, c: (calls.append(t), np.zeros_like(z))[1]
    flow.sample(model, np.zeros(3), steps=7)
    assert len(calls) == 7, f"expected 7 velocity evaluations, got {len(calls)}"
    assert abs(calls[0] - 1.0) < 1e-12 and calls[-1] > 0, "time grid must run from 1 toward 0"


def check_time_samplers():
    rng = np.random.default_rng(43)
    u = flow.sample_times(1000, rng)
    assert np.all((u >= 0) & (u <= 1)), "uniform draw out of range"
    ln = flow.sample_times(1000, rng, scheme="logit_normal")
    assert np.all((ln > 0) & (ln < 1)), "logit-normal draw out of range"


# =============================================================================
# runner
# =============================================================================

_SUITE_CHECKS = {
    "geometry": [
        check_se3_group_laws,
        check_quat_roundtrip,
        check_pluecker_constraints,
        check_pluecker_center_token,
        check_pluecker_scale_rule,
        check_trajectory_totals,
        check_trajectory_scale,
        check_time_reverse_involution,
        check_metrics_zero_and_bruteforce,
        check_trans_err_scale_alignment,
        check_jsonl_roundtrip,
    ],
    "rope": [
        check_frequency_schedule_values,
        check_frequency_schedule_invariants,
        check_rope3d_matches_reference,
        check_shift_invariance_1d,
        check_shift_invariance_3d,
        check_axis_separability,
        check_rotation_norm_preservation,
        check_pair_broadcast,
    ],
    "roce": [
        check_zero_phase_reduction,
        check_reference_agreement,
        check_constant_vo_cancellation,
        check_vo_norm_preservation,
        check_logit_swap_symmetry,
        check_softmax_rows,
        check_phase_map_cases,
        check_camera_tokens_identity,
        check_gradient_attention,
        check_phase_checkpoint_roundtrip,
    ],
    "flow": [
        check_interpolate_endpoints,
        check_interpolate_affine,
        check_cfm_trivial_cases,
        check_sampler_constant_field,
        check_sampler_linear_model,
        check_sampler_step_count,
        check_time_samplers,
    ],
}


def _run_one(suite: str, fn) -> CheckResult:
    name = fn.__name__.removeprefix("check_")
    try:
        fn()
        return CheckResult(suite, name, True, "ok")
    except AssertionError as e:
        return CheckResult(suite, name, False, str(e) or "assertion failed")
    except Exception as e:  # noqa: BLE001 - any failure is a check failure
        return CheckResult(suite, name, False, f"{type(e).__name__}: {e}")


def run_suite(suite: str) -> list[CheckResult]:
    if suite not in _SUITE_CHECKS:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    return [_run_one(suite, fn) for fn in _SUITE_CHECKS[suite]]


def run_suites(suites=SUITES, jobs: int = 1) -> list[CheckResult]:
    suites = list(suites)
    if jobs <= 1 or len(suites) <= 1:
        out = []
        for s in suites:
            out.extend(run_suite(s))
        return out
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        chunks = list(ex.map(run_suite, suites))
    out = []
    for c in chunks:
        out.extend(c)
    return out
