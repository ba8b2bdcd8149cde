import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pigeonpose.errors import (
    CalibrationError,
    DegenerateGeometry,
    InsufficientViews,
    PointBehindCamera,
    SchemaMismatch,
)
from pigeonpose.geometry import (
    CameraCalibration,
    load_calibration,
    project,
    reprojection_error,
    save_calibration,
    triangulate_batch,
    triangulate_point,
    triangulate_pose,
)
from pigeonpose.skeleton import Pose2D
from pigeonpose.synthetic import look_at

from conftest import random_arena_points


def simple_camera(**kw):
    params = dict(fx=100.0, fy=100.0, cx=0.0, cy=0.0, rotation=np.eye(3), translation=np.zeros(3),
                  width=640, height=480)
    params.update(kw)
    return CameraCalibration.from_params("c", **params)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def camera_at(cam_id, center, target=(0.0, 0.0, 0.0), f=800.0):
    R, t = look_at(center, target, up=(0.0, 1.0, 0.0))
    return CameraCalibration.from_params(cam_id, f, f, 320.0, 240.0, R, t, 640, 480)


# -- project -----------------------------------------------------------------

def test_project_principal_axis():
    assert np.allclose(project(simple_camera(), [0, 0, 1]), [0, 0])


def test_project_similar_triangles():
    assert np.allclose(project(simple_camera(), [0.5, 0, 1]), [50, 0])


def test_project_behind_camera():
    with pytest.raises(PointBehindCamera):
        project(simple_camera(), [0, 0, -1])
    with pytest.raises(PointBehindCamera):
        project(simple_camera(), [0, 0, 0])


def test_project_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        R = random_rotation(rng)
        t = rng.normal(size=3)
        fx, fy = rng.uniform(200, 2000, 2)
        cx, cy = rng.uniform(0, 1000, 2)
        cam = CameraCalibration.from_params("r", fx, fy, cx, cy, R, t, 1000, 1000)
        p = R.T @ (np.array([*rng.normal(size=2), rng.uniform(0.5, 5)]) - t)
        # oracle written out scalar by scalar
        xc = [sum(R[i][j] * p[j] for j in range(3)) + t[i] for i in range(3)]
        expect = (fx * xc[0] / xc[2] + cx, fy * xc[1] / xc[2] + cy)
        assert np.max(np.abs(project(cam, p) - expect)) < 1e-9


def test_project_batch_shape():
    pts = np.array([[0, 0, 1], [0.5, 0, 1]])
    assert project(simple_camera(), pts).shape == (2, 2)


# -- reprojection_error ------------------------------------------------------

def test_reprojection_error_zero_and_345():
    cam = simple_camera()
    p = np.array([0.2, -0.1, 2.0])
    uv = project(cam, p)
    assert reprojection_error(cam, p, uv) == 0.0
    assert reprojection_error(cam, p, uv + [3, 4]) == pytest.approx(5.0, abs=1e-12)


def test_reprojection_error_hypot_oracle():
    rng = np.random.default_rng(1)
    cam = simple_camera()
    for _ in range(100):
        p = np.array([*rng.normal(size=2), rng.uniform(1, 4)])
        d = rng.normal(scale=10, size=2)
        uv = project(cam, p)
        assert abs(reprojection_error(cam, p, uv + d) - np.hypot(*d)) < 1e-12


# -- calibration validation and files ---------------------------------------

@pytest.mark.parametrize("kw", [
    dict(fx=-1.0),
    dict(fy=0.0),
    dict(rotation=np.diag([1.0, 1.0, -1.0])),
    dict(rotation=np.eye(3) * 1.001),
    dict(width=0),
    dict(translation=[np.nan, 0, 0]),
])
def test_calibration_rejects_invalid(kw):
    with pytest.raises(CalibrationError):
        simple_camera(**kw)


def test_calibration_rejects_lower_triangular_intrinsics():
    K = np.array([[100.0, 0, 0], [1.0, 100, 0], [0, 0, 1]])
    with pytest.raises(CalibrationError):
        CameraCalibration("c", K, np.eye(3), np.zeros(3), 10, 10)


def test_calibration_file_round_trip(tmp_path, rig):
    path = tmp_path / "calib.json"
    save_calibration(path, rig)
    loaded = load_calibration(path)
    assert [c.camera_id for c in loaded] == [c.camera_id for c in rig]
    for a, b in zip(rig, loaded):
        assert np.allclose(a.projection_matrix, b.projection_matrix, atol=1e-12)
    assert all(d["format_version"] == 1 for d in json.loads(path.read_text()))


def test_calibration_load_reorthonormalizes(tmp_path, rig):
    d = rig[0].to_dict()
    d["rotation"] = [x + 1e-8 for x in d["rotation"]]
    path = tmp_path / "c.json"
    path.write_text(json.dumps([d]))
    R = load_calibration(path)[0].rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(rotation=[2.0] * 9),
    lambda d: d.update(distortion=[0.1, 0, 0, 0, 0]),
    lambda d: d.pop("fx"),
    lambda d: d.update(format_version=2),
])
def test_calibration_load_errors(tmp_path, rig, mutate):
    d = rig[0].to_dict()
    mutate(d)
    path = tmp_path / "c.json"
    path.write_text(json.dumps([d]))
    with pytest.raises(CalibrationError):
        load_calibration(path)


def test_calibration_zero_distortion_accepted(tmp_path, rig):
    d = rig[0].to_dict()
    d["distortion"] = [0, 0, 0, 0, 0]
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"cameras": [d]}))
    assert load_calibration(path)[0].camera_id == "cam0"


def test_calibration_duplicate_ids(tmp_path, rig):
    path = tmp_path / "c.json"
    path.write_text(json.dumps([rig[0].to_dict(), rig[0].to_dict()]))
    with pytest.raises(CalibrationError, match="duplicate"):
        load_calibration(path)


# -- triangulate_point -------------------------------------------------------

def test_two_camera_recovery():
    cams = [camera_at("a", (1.0, 0.0, 0.0), (0, 0, 2)), camera_at("b", (-1.0, 0.0, 0.0), (0, 0, 2))]
    p = np.array([0.0, 0.0, 2.0])
    xyz, rmse = triangulate_point([(c, project(c, p)) for c in cams])
    assert np.max(np.abs(xyz - p)) < 1e-6
    assert rmse < 1e-6


def test_single_observation_insufficient(rig):
    with pytest.raises(InsufficientViews):
        triangulate_point([(rig[0], (600.0, 500.0))])


def test_low_confidence_views_not_used(rig):
    p = np.array([0.1, 0.2, 0.3])
    obs = [(c, (*project(c, p), 0.9)) for c in rig[:2]] + [(rig[2], (*project(rig[2], p) + 50, 0.1))]
    xyz, rmse = triangulate_point(obs)
    assert np.max(np.abs(xyz - p)) < 1e-6
    with pytest.raises(InsufficientViews):
        triangulate_point(obs, confidence_threshold=0.95)


def test_identical_cameras_degenerate(rig):
    p = np.array([0.1, 0.2, 0.3])
    uv = project(rig[0], p)
    with pytest.raises(DegenerateGeometry):
        triangulate_point([(rig[0], uv), (rig[0], uv)])


def test_round_trip_1000_points(rig):
    rng = np.random.default_rng(5)
    pts = random_arena_points(rng, 1000)
    uv = np.stack([project(c, pts) for c in rig], axis=1)
    xyz, rmse, degen = triangulate_batch(rig, uv, np.ones((1000, 4), dtype=bool))
    assert not degen.any()
    assert np.max(np.abs(xyz - pts)) < 1e-6
    assert np.max(rmse) < 1e-6


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n_views=st.integers(2, 6),
)
def test_round_trip_property(seed, n_views):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.5, 0.5, 3)
    cams = []
    for k in range(n_views):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        center = p + rng.uniform(1.0, 6.0) * d
        R, t = look_at(center, p + rng.normal(scale=0.05, size=3), up=np.cross(d, rng.normal(size=3)))
        cams.append(CameraCalibration.from_params(f"c{k}", 900, 900, 500, 400, R, t, 1000, 800))
    # skip configurations where two rays are nearly parallel
    dirs = np.array([(c.center - p) / np.linalg.norm(c.center - p) for c in cams])
    cosines = np.abs(dirs @ dirs.T)[np.triu_indices(n_views, 1)]
    if np.min(1 - cosines) < 1e-3:
        return
    xyz, rmse = triangulate_point([(c, project(c, p)) for c in cams])
    assert np.max(np.abs(xyz - p)) < 1e-6


def test_behind_camera_solution_gives_infinite_rmse(rig):
    p = np.array([0.0, 0.0, 0.2])
    uv = np.stack([project(c, p) for c in rig[:2]])[None]
    # mirror one observation through the principal point; the ray pair now meets behind a camera
    uv[0, 1] = 2 * rig[1].intrinsics[:2, 2] - uv[0, 1]
    _, rmse, _ = triangulate_batch(rig[:2], uv, np.ones((1, 2), dtype=bool))
    assert rmse[0] > 1.0


def test_batch_rows_with_one_view_are_nan(rig):
    uv = np.zeros((2, 4, 2))
    use = np.array([[True, False, False, False], [False, False, False, False]])
    xyz, rmse, degen = triangulate_batch(rig, uv, use)
    assert np.isnan(xyz).all() and np.isnan(rmse).all() and not degen.any()


# -- triangulate_pose ----------------------------------------------------------

def _views_of(rig, xyz, conf=None):
    out = []
    for c in rig:
        uv = project(c, xyz)
        out.append((c, Pose2D(uv, np.ones(len(xyz)) if conf is None else conf)))
    return out


def test_triangulate_pose_all_valid(rig, small_scene):
    scene, _ = small_scene
    gt = scene.poses[0, 0]
    pose, err = triangulate_pose(_views_of(rig, gt))
    assert pose.valid.all()
    assert np.max(np.abs(pose.xyz - gt)) < 1e-6
    assert np.all(err < 1e-6)


def test_triangulate_pose_single_view_keypoint_invalid(rig, small_scene):
    scene, _ = small_scene
    gt = scene.poses[0, 1]
    views = _views_of(rig, gt)
    views = [(c, Pose2D(p.uv, np.where(np.arange(9) == 4, float(k == 0), 1.0))) for k, (c, p) in enumerate(views)]
    pose, err = triangulate_pose(views)
    assert pose.valid.sum() == 8 and not pose.valid[4]
    assert np.isnan(pose.xyz[4]).all() and np.isnan(err[4])
    assert np.max(np.abs(pose.xyz[pose.valid] - gt[pose.valid])) < 1e-6


def test_triangulate_pose_zero_confidence(rig, small_scene):
    scene, _ = small_scene
    pose, err = triangulate_pose(_views_of(rig, scene.poses[0, 0], conf=np.zeros(9)))
    assert not pose.valid.any()
    assert not np.isfinite(pose.xyz).any()


def test_triangulate_pose_schema_mismatch(rig):
    a = Pose2D(np.zeros((9, 2)), np.ones(9))
    b = Pose2D(np.zeros((8, 2)), np.ones(8))
    with pytest.raises(SchemaMismatch):
        triangulate_pose([(rig[0], a), (rig[1], b)])


def test_noise_increases_error(rig):
    rng = np.random.default_rng(11)
    pts = random_arena_points(rng, 400)
    exact = np.stack([project(c, pts) for c in rig], axis=1)
    use = np.ones((400, 4), dtype=bool)
    errs = []
    for sigma in (0.0, 1.0, 4.0):
        xyz, _, _ = triangulate_batch(rig, exact + rng.normal(scale=sigma, size=exact.shape), use)
        errs.append(np.mean(np.linalg.norm(xyz - pts, axis=1)))
    assert errs[0] < errs[1] < errs[2]
