import csv
import json

import numpy as np
import pytest

from planegeom import __version__
from planegeom.cli import main
from planegeom.io import read_frame, read_plane_table, write_depth_raw
from planegeom.geometry import DepthMap


@pytest.fixture
def three(tmp_path):
    assert main(["synth", "three-planes", "--out", str(tmp_path / "three")]) == 0
    return tmp_path / "three"


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_usage_errors_exit_2(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["build-gt", "--frame", str(tmp_path)])
    assert exc.value.code == 2
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1


def test_missing_frame_exit_2(tmp_path, capsys):
    rc = main(["build-gt", "--frame", str(tmp_path / "nope"), "--inlier-tol", "0.01", "--seed", "0"])
    assert rc == 2
    assert capsys.readouterr().err.startswith("planegeom: error:")


def test_build_gt_and_self_eval(three, tmp_path, capsys):
    out = tmp_path / "gt"
    rc = main(["build-gt", "--frame", str(three), "--inlier-tol", "0.01", "--seed", "0", "--min-area", "300", "--out", str(out)])
    assert rc == 0
    assert len(read_plane_table(out / "planes.csv")) == 3
    capsys.readouterr()
    curve = tmp_path / "curve.csv"
    assert main(["eval", "--pred", str(out), "--gt", str(out), "--curve", str(curve)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["recall_curve"]["recall"]) == {1.0}
    assert report["ap_04"] == 1.0 and report["voi"] == 0.0 and report["ri"] == 1.0
    rows = list(csv.reader(curve.open()))
    assert rows[0] == ["threshold", "recall"] and len(rows) == 22


def test_plane_offset(three, capsys):
    bundle = read_frame(three)
    n = bundle.planes[1].plane.normal
    rc = main(["plane", "offset", "--frame", str(three), "--mask", "1", "--normal=" + ",".join(repr(float(x)) for x in n)])
    assert rc == 0
    assert float(capsys.readouterr().out) == pytest.approx(bundle.planes[1].plane.offset, abs=1e-6)
    assert main(["plane", "offset", "--frame", str(three), "--mask", "9", "--normal", "0,0,1"]) == 2


def test_warp_loss_grad_check(tmp_path, capsys):
    assert main(["synth", "warp-pair", "--out", str(tmp_path / "w")]) == 0
    capsys.readouterr()
    rc = main(["warp-loss", "--current", str(tmp_path / "w" / "current"), "--nearby", str(tmp_path / "w" / "nearby"),
               "--grad-check", "--entries", "30"])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0
    assert out["loss"] > 0.01 and out["grad_check"]["passed"] and out["grad_check"]["checked"] == 30


def test_filter_pose_log(three, tmp_path, capsys):
    depth = read_frame(three).depth.values.copy()
    depth[depth > 0] += 0.2
    write_depth_raw(tmp_path / "sensor.pgdm", DepthMap(depth))
    log = tmp_path / "log.csv"
    for _ in range(2):
        assert main(["filter-pose", "--frame", str(three), "--sensor", str(tmp_path / "sensor.pgdm"), "--log", str(log)]) == 0
    row = capsys.readouterr().out.splitlines()[0].split(",")
    assert row[0] == "three" and float(row[1]) == pytest.approx(0.2, abs=1e-6) and row[2] == "0"
    lines = log.read_text().splitlines()
    assert lines[0] == "frame_id,discrepancy,kept" and len(lines) == 3


def test_complete_masks_room(tmp_path, capsys):
    room = tmp_path / "room"
    assert main(["synth", "room", "--out", str(room)]) == 0
    capsys.readouterr()
    assert main(["complete-masks", "--frame", str(room)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["available"] and summary["planes"] == [0, 1]
    bundle = read_frame(room)
    assert bundle.layout_depth is not None
    floor = bundle.complete_masks[0].membership
    assert floor.sum() > bundle.masks[0].area
    assert np.all(floor >= bundle.masks[0].membership)


def test_anchors_cluster(tmp_path):
    rng = np.random.default_rng(0)
    n = rng.normal(size=(60, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    (tmp_path / "n.txt").write_text("\n".join(" ".join(repr(float(x)) for x in row) for row in n))
    assert main(["anchors", "cluster", "--input", str(tmp_path / "n.txt"), "--k", "4", "--seed", "1",
                 "--out", str(tmp_path / "a.txt")]) == 0
    assert (tmp_path / "a.txt").read_text().splitlines()[0] == "4"
    (tmp_path / "bad.txt").write_text("1 2\n")
    assert main(["anchors", "cluster", "--input", str(tmp_path / "bad.txt"), "--seed", "1", "--out", str(tmp_path / "b")]) == 2
