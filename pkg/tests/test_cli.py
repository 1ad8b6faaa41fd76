import json

import numpy as np
import pytest

from roce import cli, geometry as geo, rope, tensorio
from roce.toymodel import ToyConfig


def run(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tiny_config_file(tmp_path, **kw):
    base = dict(
        f=2,
        h=4,
        w=4,
        d_head=12,
        heads=2,
        d_ff=32,
        train_items=2,
        val_items=1,
        val_t_draws=1,
        batch_size=2,
        steps=2,
        val_interval=1,
        seed=0,
    )
    base.update(kw)
    path = tmp_path / "tiny.json"
    ToyConfig(**base).to_json(path)
    return str(path)


# --- dispatch / usage errors ------------------------------------------------------


def test_no_command_is_usage_error(capsys):
    code, _, err = run(capsys, [])
    assert code == 2


def test_unknown_command_is_usage_error(capsys):
    assert run(capsys, ["frobnicate"])[0] == 2


def test_entry_raises_systemexit(monkeypatch, capsys):
    monkeypatch.setattr("sys.argv", ["roce"])
    with pytest.raises(SystemExit) as exc:
        cli.entry()
    assert exc.value.code == 2
    capsys.readouterr()


def test_missing_file_is_input_error(tmp_path, capsys):
    code, _, err = run(capsys, ["eval", "--pred", str(tmp_path / "a.jsonl"), "--gt", str(tmp_path / "b.jsonl")])
    assert code == 2
    assert "error" in err


# --- gen-traj ----------------------------------------------------------------------


def test_gen_traj_stdout(capsys):
    code, out, _ = run(capsys, ["gen-traj", "--kind", "pan_left", "--frames", "5"])
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5
    recs = [json.loads(ln) for ln in lines]
    assert [r["frame"] for r in recs] == list(range(5))
    assert all(len(r["quat_wxyz"]) == 4 for r in recs)


def test_gen_traj_file_matches_library(tmp_path, capsys):
    out = tmp_path / "arc.jsonl"
    code, msg, _ = run(capsys, ["gen-traj", "--kind", "arc_left", "--frames", "9", "--out", str(out)])
    assert code == 0
    assert "wrote 9 poses" in msg
    traj = geo.read_trajectory_jsonl(out)
    ref = geo.make_trajectory("arc_left", 9, traj.intrinsics)
    for p, q in zip(traj.poses, ref.poses):
        assert np.array_equal(p.translation, q.translation)
        assert np.allclose(p.rotation, q.rotation, atol=1e-15)


def test_gen_traj_rejects_bad_inputs(capsys):
    assert run(capsys, ["gen-traj", "--kind", "spiral", "--frames", "5"])[0] == 2
    code, _, err = run(capsys, ["gen-traj", "--kind", "pan_left", "--frames", "1"])
    assert code == 2
    assert "frames" in err


# --- check -------------------------------------------------------------------------


def test_check_single_suite_passes(capsys):
    code, out, _ = run(capsys, ["check", "--suite", "geometry"])
    assert code == 0
    lines = out.strip().splitlines()
    assert all(ln.startswith("ok   geometry.") for ln in lines[:-1])
    assert lines[-1].endswith("checks passed")


def test_check_json_payload(capsys):
    code, out, _ = run(capsys, ["check", "--suite", "flow", "--json"])
    assert code == 0
    payload = json.loads(out)
    assert payload["passed"] is True
    assert payload["counts"]["failed"] == 0
    for r in payload["results"]:
        assert set(r) == {"suite", "name", "passed", "detail"}
        assert r["suite"] == "flow"


def test_check_all_with_jobs(capsys):
    code, out, _ = run(capsys, ["check", "--jobs", "4"])
    assert code == 0
    # every suite contributed
    for suite in ("geometry", "rope", "roce", "flow"):
        assert f"ok   {suite}." in out


def test_check_detects_broken_rope_base(monkeypatch, capsys):
    # negative control: a wrong frequency base must fail the rope suite
    monkeypatch.setattr(rope, "ROPE_BASE", 9000.0)
    code, out, _ = run(capsys, ["check", "--suite", "rope"])
    assert code == 1
    assert "FAIL rope.frequency_schedule_values" in out


# --- eval --------------------------------------------------------------------------


def test_eval_identical_trajectories_are_exactly_zero(tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    run(capsys, ["gen-traj", "--kind", "tilt_up", "--frames", "6", "--out", str(a)])
    code, out, _ = run(capsys, ["eval", "--pred", str(a), "--gt", str(a), "--json"])
    assert code == 0
    payload = json.loads(out)
    assert payload["rot_err_deg"] == 0.0
    assert payload["trans_err"] == 0.0
    assert payload["frames"] == 6


def test_eval_differing_trajectories(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run(capsys, ["gen-traj", "--kind", "pan_left", "--frames", "6", "--out", str(a)])
    run(capsys, ["gen-traj", "--kind", "tilt_up", "--frames", "6", "--out", str(b)])
    code, out, _ = run(capsys, ["eval", "--pred", str(a), "--gt", str(b)])
    assert code == 0
    rot = float(out.splitlines()[0].split()[-1])
    assert rot > 0.1


# --- dump --------------------------------------------------------------------------


def test_dump_freqs(tmp_path, capsys):
    out = tmp_path / "freqs.rctd"
    code, _, _ = run(capsys, ["dump", "--what", "freqs", "--d-head", "12", "--out", str(out)])
    assert code == 0
    arr = tensorio.read_tensor(out)
    assert arr.dtype == np.float32
    assert np.array_equal(arr, rope.frequency_schedule(12).astype(np.float32))


def test_dump_freqs_f64_bit_exact(tmp_path, capsys):
    out = tmp_path / "freqs64.rctd"
    run(capsys, ["dump", "--what", "freqs", "--d-head", "48", "--out", str(out), "--f64"])
    arr = tensorio.read_tensor(out)
    assert arr.dtype == np.float64
    assert arr.tobytes() == rope.frequency_schedule(48).tobytes()


def test_dump_rope3d(tmp_path, capsys):
    out = tmp_path / "angles.rctd"
    code, msg, _ = run(
        capsys, ["dump", "--what", "rope3d", "--fhw", "2", "2", "2", "--d-head", "12", "--out", str(out)]
    )
    assert code == 0
    arr = tensorio.read_tensor(out)
    assert arr.shape == (8, 6)


def test_dump_pluecker(tmp_path, capsys):
    traj = tmp_path / "t.jsonl"
    run(capsys, ["gen-traj", "--kind", "zoom_in", "--frames", "4", "--out", str(traj)])
    out = tmp_path / "rays.rctd"
    code, _, _ = run(
        capsys,
        ["dump", "--what", "pluecker", "--traj", str(traj), "--frame", "3", "--hw", "6", "6", "--out", str(out)],
    )
    assert code == 0
    arr = tensorio.read_tensor(out)
    assert arr.shape == (6, 6, 6)  # (h, w, ray) grid
    assert np.allclose(np.linalg.norm(arr[..., :3], axis=-1), 1.0, atol=1e-6)


def test_dump_pluecker_requires_traj(tmp_path, capsys):
    code, _, err = run(capsys, ["dump", "--what", "pluecker", "--out", str(tmp_path / "x.rctd")])
    assert code == 2
    assert "--traj" in err


def test_dump_pluecker_frame_out_of_range(tmp_path, capsys):
    traj = tmp_path / "t.jsonl"
    run(capsys, ["gen-traj", "--kind", "zoom_in", "--frames", "3", "--out", str(traj)])
    code, _, err = run(
        capsys,
        ["dump", "--what", "pluecker", "--traj", str(traj), "--frame", "7", "--out", str(tmp_path / "x.rctd")],
    )
    assert code == 2
    assert "out of range" in err


# --- ROCE_SEED ----------------------------------------------------------------------


def test_malformed_roce_seed(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ROCE_SEED", "xyz")
    cfgp = tiny_config_file(tmp_path)
    code, _, err = run(capsys, ["train", "--config", cfgp, "--steps", "1"])
    assert code == 2
    assert "ROCE_SEED" in err


def test_roce_seed_overrides_default(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ROCE_SEED", "7")
    cfgp = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    code, _, _ = run(capsys, ["train", "--config", cfgp, "--steps", "1", "--out", str(out)])
    assert code == 0
    assert ToyConfig.from_json(out / "config.json").seed == 7
    # an explicit flag still beats the environment
    out2 = tmp_path / "run2"
    run(capsys, ["train", "--config", cfgp, "--steps", "1", "--seed", "3", "--out", str(out2)])
    assert ToyConfig.from_json(out2 / "config.json").seed == 3


# --- train -> phase-map / sample pipeline --------------------------------------------


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_pipeline")
    cfgp = tiny_config_file(tmp)
    out = tmp / "run"
    code = cli.main(["train", "--config", cfgp, "--steps", "2", "--out", str(out)])
    assert code == 0
    tt, ts = tmp / "tt.jsonl", tmp / "ts.jsonl"
    for kind, path in (("pan_right", tt), ("zoom_in", ts)):
        assert (
            cli.main(
                ["gen-traj", "--kind", kind, "--frames", "2", "--out", str(path),
                 "--fx", "4", "--fy", "4", "--cx", "2", "--cy", "2", "--width", "4", "--height", "4"]
            )
            == 0
        )
    return tmp, out, tt, ts


def test_train_prints_log(tmp_path, capsys):
    cfgp = tiny_config_file(tmp_path)
    code, out, _ = run(capsys, ["train", "--config", cfgp, "--steps", "2"])
    assert code == 0
    assert "step     0" in out
    assert "final val loss" in out


def test_train_no_camera_flag(tmp_path, capsys):
    cfgp = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    code, _, _ = run(capsys, ["train", "--config", cfgp, "--steps", "1", "--no-camera", "--out", str(out)])
    assert code == 0
    assert ToyConfig.from_json(out / "config.json").camera is False


def test_phase_map_from_checkpoint(trained_run, capsys):
    tmp, out, tt, ts = trained_run
    dst = tmp / "map.rctd"
    code, msg, _ = run(
        capsys,
        ["phase-map", "--ckpt", str(out / "checkpoint"), "--traj-t", str(tt), "--traj-s", str(ts),
         "--token", "5", "--role", "vo", "--block", "target", "--out", str(dst)],
    )
    assert code == 0
    arr = tensorio.read_tensor(dst)
    assert arr.shape == (2, 4, 4)
    assert np.all(np.abs(arr) <= 1.0 + 1e-6)  # mean cosine alignment


def test_phase_map_rejects_bad_layer(trained_run, capsys):
    tmp, out, tt, ts = trained_run
    code, _, err = run(
        capsys,
        ["phase-map", "--ckpt", str(out / "checkpoint"), "--traj-t", str(tt), "--traj-s", str(ts),
         "--token", "0", "--layer", "9", "--out", str(tmp / "x.rctd")],
    )
    assert code == 2
    assert "--layer" in err


def test_phase_map_rejects_bad_channels(trained_run, capsys):
    tmp, out, tt, ts = trained_run
    code, _, err = run(
        capsys,
        ["phase-map", "--ckpt", str(out / "checkpoint"), "--traj-t", str(tt), "--traj-s", str(ts),
         "--token", "0", "--channels", "0,zz", "--out", str(tmp / "x.rctd")],
    )
    assert code == 2
    assert "channels" in err


def test_sample_from_checkpoint(trained_run, capsys):
    tmp, out, tt, ts = trained_run
    dst = tmp / "clip.rctd"
    code, msg, _ = run(
        capsys,
        ["sample", "--ckpt", str(out / "checkpoint"), "--traj-t", str(tt), "--traj-s", str(ts),
         "--scene-seed", "5", "--steps", "3", "--out", str(dst)],
    )
    assert code == 0
    arr = tensorio.read_tensor(dst)
    assert arr.shape == (2, 4, 4, 3)
    assert arr.dtype == np.float32
    assert np.all(np.isfinite(arr))


def test_sample_deterministic_given_seed(trained_run, capsys):
    tmp, out, tt, ts = trained_run
    a, b = tmp / "a.rctd", tmp / "b.rctd"
    argv = ["sample", "--ckpt", str(out / "checkpoint"), "--traj-t", str(tt), "--traj-s", str(ts),
            "--scene-seed", "9", "--steps", "2"]
    assert run(capsys, argv + ["--out", str(a)])[0] == 0
    assert run(capsys, argv + ["--out", str(b)])[0] == 0
    assert tensorio.read_tensor(a).tobytes() == tensorio.read_tensor(b).tobytes()
