import hashlib
import json

import numpy as np
import pytest

from clihelp import kv, run, seq_spec, surface_accuracy_from_files, surface_weight_share
from voxfuse.geometry import relative_in_frame
from voxfuse.kitti_io import read_calib, read_label, read_poses, write_label
from voxfuse.metrics import consistency
from voxfuse.temporal import warp_label_grid
from voxfuse.voxel import LabelGrid


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    code, out, _ = run("synth", "--seed", 3, "--recipe", "ground-plane,boxes,random-blobs", "--frames", 3,
                       "--out", root / "w")
    assert code == 0 and kv(out)["frames"] == "3"
    return root / "w", root / "w" / "sequences" / "00"


def tree_digest(d):
    return {p.relative_to(d).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(d.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_synth_deterministic_and_sized(synth, tmp_path):
    root, seq = synth
    run("synth", "--seed", 3, "--recipe", "ground-plane,boxes,random-blobs", "--frames", 3, "--out", tmp_path / "w")
    assert tree_digest(root) == tree_digest(tmp_path / "w")
    n = 32 * 32 * 16
    assert (seq / "voxels" / "000000.label").stat().st_size == 2 * n
    assert (seq / "voxels" / "000000.invalid").stat().st_size == n // 8
    assert (seq / "visible" / "000002.bin").stat().st_size == n // 8
    assert (root / "world.label").stat().st_size == 2 * 64 * 64 * 16
    assert len(read_poses((seq / "poses.txt").read_text())) == 3


def test_eval_gt_against_itself(synth):
    _, seq = synth
    lab = seq / "voxels" / "000001.label"
    code, out, _ = run("eval", "--pred", lab, "--gt", lab, "--grid", seq / "grid.json",
                       "--invalid", seq / "voxels" / "000001.invalid")
    r = kv(out)
    assert code == 0 and r["sc_iou"] == "100.00" and r["miou"] == "100.00"


def test_project_end_to_end(synth, tmp_path):
    _, seq = synth
    code, out, _ = run("project", "--sequence", seq, "--frame", 0, "--sigma", 1, "--out", tmp_path / "p1")
    assert code == 0 and int(kv(out)["touched_voxels"]) > 0
    assert surface_accuracy_from_files(seq, tmp_path / "p1") >= 0.99
    run("project", "--sequence", seq, "--frame", 0, "--sigma", 256, "--out", tmp_path / "p256")
    assert surface_weight_share(seq, tmp_path / "p1") > surface_weight_share(seq, tmp_path / "p256")
    man = json.loads((tmp_path / "p1" / "manifest.json").read_text())
    assert man["config"]["gdp"]["sigma"] == 1.0 and "labels.label" in man["outputs"]


def test_replay_reproduces(synth, tmp_path):
    _, seq = synth
    run("project", "--sequence", seq, "--frame", 1, "--sigma", 2, "--out", tmp_path / "a")
    code, _, err = run("--replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b")
    assert code == 0 and "match" in err
    assert (tmp_path / "a" / "features.npy").read_bytes() == (tmp_path / "b" / "features.npy").read_bytes()


def test_missing_calib_exit_2(synth, tmp_path):
    _, seq = synth
    code, _, err = run("project", "--calib", tmp_path / "nope.txt", "--features", seq / "features" / "000000.pfm",
                       "--depth", seq / "depth" / "000000.pfm", "--grid", seq / "grid.json", "--out", tmp_path / "o")
    assert code == 2 and "error" in err and not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [
    ["project", "--sigma", "-1"],
    ["project", "--normalization", "pixel"],
    ["frobnicate"],
    ["project", "--depth", "x.pfm", "--relative-depth", "y.pfm"],
])
def test_validation_exit_3(synth, tmp_path, argv):
    _, seq = synth
    code, _, err = run(*argv, "--sequence", seq, "--frame", 0, "--out", tmp_path / "o")
    assert code == 3 and err.startswith("voxfuse: error:")


def test_warp_identity_and_known_shift(synth, tmp_path):
    _, seq = synth
    lab = seq / "voxels" / "000000.label"
    code, _, _ = run("warp", "--input", lab, "--poses", seq / "poses.txt", "--pair", 0, 0,
                     "--grid", seq / "grid.json", "--out", tmp_path / "id")
    assert code == 0 and (tmp_path / "id" / "warped.label").read_bytes() == lab.read_bytes()
    code, _, _ = run("warp", "--input", lab, "--poses", seq / "poses.txt", "--pair", 0, 1, "--calib",
                     seq / "calib.txt", "--grid", seq / "grid.json", "--out", tmp_path / "sh")
    spec = seq_spec(seq)
    poses = read_poses((seq / "poses.txt").read_text())
    rel = relative_in_frame(poses[0], poses[1], read_calib((seq / "calib.txt").read_text()).lidar_to_cam2)
    ref = warp_label_grid(read_label(lab.read_bytes(), spec), rel, spec)
    assert code == 0 and (tmp_path / "sh" / "warped.label").read_bytes() == write_label(ref)
    code, _, _ = run("warp", "--input", lab, "--poses", seq / "poses.txt", "--pair", 0, 1, "--warp-mode",
                     "trilinear", "--grid", seq / "grid.json", "--out", tmp_path / "bad")
    assert code == 3


def test_warp_spec_mismatch(synth, tmp_path):
    _, seq = synth
    np.save(tmp_path / "f.npy", np.zeros((4, 4, 4, 2)))
    code, _, _ = run("warp", "--input", tmp_path / "f.npy", "--poses", seq / "poses.txt", "--pair", 0, 1,
                     "--grid", seq / "grid.json", "--out", tmp_path / "o")
    assert code == 3


def test_consistency(synth, tmp_path):
    _, seq = synth
    code, out, _ = run("consistency", "--sequence", seq)
    r = kv(out)
    assert code == 0 and r["pairs"] == "2" and r["mean_iou"] == "100.00" and r["mean_miou"] == "100.00"
    # random predictions: each pair agrees with the library call
    spec = seq_spec(seq)
    pred = tmp_path / "pred"
    pred.mkdir()
    rng = np.random.default_rng(0)
    grids = [LabelGrid(spec, rng.integers(0, 4, spec.dims).astype(np.uint8)) for _ in range(3)]
    for i, g in enumerate(grids):
        (pred / f"{i:06d}.label").write_bytes(write_label(g))
    code, out, _ = run("consistency", "--sequence", seq, "--pred-dir", pred)
    poses = read_poses((seq / "poses.txt").read_text())
    tr = read_calib((seq / "calib.txt").read_text()).lidar_to_cam2
    iou, mi = consistency(grids[0], grids[1], relative_in_frame(poses[0], poses[1], tr))
    r = kv(out)
    assert code == 0 and r["pair.000000-000001.iou"] == f"{100 * iou:.2f}"
    assert r["pair.000000-000001.miou"] == f"{100 * mi:.2f}"


def test_consistency_needs_two_frames(tmp_path):
    run("synth", "--seed", 0, "--frames", 1, "--out", tmp_path / "one")
    code, _, _ = run("consistency", "--sequence", tmp_path / "one" / "sequences" / "00")
    assert code == 3


def test_eval_hand_counts_and_fuzz(synth, tmp_path):
    _, seq = synth
    spec = seq_spec(seq)
    gt = read_label((seq / "voxels" / "000000.label").read_bytes(), spec)
    pred = gt.labels.copy()
    pred[gt.labels == 0] = 0
    flip = np.argwhere(gt.labels == 9)[:10]
    pred[tuple(flip.T)] = 0
    (tmp_path / "p.label").write_bytes(write_label(LabelGrid(spec, pred)))
    code, out, _ = run("eval", "--pred", tmp_path / "p.label", "--gt", seq / "voxels" / "000000.label",
                       "--grid", seq / "grid.json", "--out", tmp_path / "rep")
    r = kv(out)
    assert code == 0 and r["counts.road"].split(",")[2] == "10"
    doc = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert doc["sc_fn"] == 10 and (tmp_path / "rep" / "report.txt").read_text() == out
