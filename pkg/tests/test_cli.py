import json

import pytest

from pigeonpose.cli import main
from pigeonpose.pipeline import TrajectorySet


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--out", str(out), "--seed", "5", "--n-individuals", "4", "--n-frames", "8"]) == 0
    return out


def _lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def test_synth_writes_all_files(scene_dir):
    for name in ("calibration.json", "detections.jsonl", "ground_truth_2d.jsonl", "ground_truth_3d.jsonl"):
        assert (scene_dir / name).exists()
    header = _lines(scene_dir / "detections.jsonl")[0]["header"]
    assert header["rng"] and header["config"]["n_individuals"] == 4
    assert len(json.loads((scene_dir / "calibration.json").read_text())) == 4


def test_run_then_eval_3d(scene_dir, tmp_path, capsys):
    traj = tmp_path / "traj.jsonl"
    assert main(["run", "--calib", str(scene_dir / "calibration.json"),
                 "--detections", str(scene_dir / "detections.jsonl"), "--out", str(traj)]) == 0
    assert len(TrajectorySet.read(traj).entries()) == 4 * 8
    report = tmp_path / "r.json"
    assert main(["eval", "--pred", str(traj), "--gt", str(scene_dir / "ground_truth_3d.jsonl"),
                 "--out", str(report), "--table", str(tmp_path / "t.txt")]) == 0
    doc = json.loads(report.read_text())
    assert doc["unit"] == "mm" and doc["rmse"] < 1e-3 and doc["pck05"] == 100.0
    table = capsys.readouterr().out
    assert table == (tmp_path / "t.txt").read_text()
    assert [ln.split("  ")[0].strip() for ln in table.splitlines()[1:]] == \
        ["RMSE (mm)", "Median (mm)", "PCK05 (%)", "PCK10 (%)"]


def test_eval_2d(scene_dir, tmp_path):
    report = tmp_path / "r.json"
    assert main(["eval", "--pred", str(scene_dir / "detections.jsonl"),
                 "--gt", str(scene_dir / "ground_truth_2d.jsonl"), "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["unit"] == "px" and doc["rmse"] == 0.0


def test_match(scene_dir, tmp_path):
    out = tmp_path / "m.json"
    assert main(["match", "--calib", str(scene_dir / "calibration.json"),
                 "--detections", str(scene_dir / "detections.jsonl"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["n_ids"] == 4 and len(doc["assignment"]) == 16
    truth = _lines(scene_dir / "ground_truth_2d.jsonl")[1]["cameras"]
    gid_to_identity = {}
    for a in doc["assignment"]:
        identity = truth[a["camera_id"]][a["detection"]]["identity"]
        assert gid_to_identity.setdefault(a["global_id"], identity) == identity


def test_track(scene_dir, tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["track", "--calib", str(scene_dir / "calibration.json"),
                 "--detections", str(scene_dir / "detections.jsonl"), "--out", str(out)]) == 0
    frames = _lines(out)
    assert [f["frame"] for f in frames] == list(range(8))
    for f in frames:
        for rows in f["tracks"].values():
            assert len(rows) == 4 and all(r["global_id"] is not None for r in rows)


def test_track_without_calibration(scene_dir, tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["track", "--detections", str(scene_dir / "detections.jsonl"), "--out", str(out)]) == 0
    assert all(r["global_id"] is None for f in _lines(out) for rows in f["tracks"].values() for r in rows)


def test_triangulate(scene_dir, tmp_path):
    out = tmp_path / "tri.jsonl"
    assert main(["triangulate", "--calib", str(scene_dir / "calibration.json"),
                 "--detections", str(scene_dir / "detections.jsonl"), "--out", str(out)]) == 0
    ts = TrajectorySet.read(out)
    assert len(ts.entries()) == 32
    assert all(e.reprojection_rmse.max() < 1e-6 for e in ts.entries())


def test_run_with_masks(tmp_path):
    scene = tmp_path / "s"
    assert main(["synth", "--out", str(scene), "--seed", "1", "--n-individuals", "2", "--n-frames", "3",
                 "--masks", "--speckle", "3"]) == 0
    assert len(list((scene / "masks").glob("*.pgm"))) == 2 * 4 * 3
    traj = tmp_path / "a.jsonl"
    assert main(["run", "--calib", str(scene / "calibration.json"), "--detections",
                 str(scene / "detections.jsonl"), "--use-masks", "--out", str(traj)]) == 0
    assert len(TrajectorySet.read(traj).entries()) == 6


def test_bad_input_exit_1(tmp_path, scene_dir, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["run", "--calib", str(scene_dir / "calibration.json"), "--detections", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err
    assert main(["run", "--calib", str(tmp_path / "missing.json"),
                 "--detections", str(scene_dir / "detections.jsonl")]) == 1


def test_invariant_violation_exit_2(monkeypatch, scene_dir):
    from pigeonpose import cli
    from pigeonpose.errors import InvariantViolation

    def boom(*a, **k):
        raise InvariantViolation("broken")

    monkeypatch.setattr(cli, "run_pipeline", boom)
    assert main(["run", "--calib", str(scene_dir / "calibration.json"),
                 "--detections", str(scene_dir / "detections.jsonl")]) == 2


def test_synth_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / d), "--seed", "9", "--n-individuals", "3",
                     "--n-frames", "4", "--noise-sigma", "1", "--swap-prob", "0.2", "--dropout", "0.1"]) == 0
    for name in ("calibration.json", "detections.jsonl", "ground_truth_2d.jsonl", "ground_truth_3d.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
