"""Command line interface.

Subcommands: ``synth``, ``match``, ``track``, ``triangulate``, ``run``, ``eval``.
Exit status: 0 on success, 1 on bad input, 2 on an internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import __version__
from .errors import FormatError, InvariantViolation, PoseToolkitError
from .geometry import load_calibration, save_calibration, triangulate_pose
from .matching import ViewDetections, match_identities
from .metrics import EvalPair, per_keypoint_report
from .pipeline import PipelineConfig, TrajectoryEntry, TrajectorySet, run_pipeline
from .records import FORMAT_VERSION, Detection, FrameRecord, read_frames, write_frames
from .silhouette import write_mask
from .skeleton import N_KEYPOINTS, Pose2D, Pose3D
from .synthetic import (
    RNG_ALGORITHM,
    SceneConfig,
    config_dict,
    generate_rig,
    generate_scene,
    make_rng,
    render_detections,
    render_silhouette,
)
from .tracking import SortTracker, TrackerConfig, propagate_global_ids


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(max_age=args.max_age, min_hits=args.min_hits, iou_threshold=args.iou_threshold)


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        confidence_threshold=args.confidence_threshold,
        tracker=_tracker_config(args),
        resolve_lr=getattr(args, "resolve_lr", False),
        use_masks=getattr(args, "use_masks", False),
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = SceneConfig(
        n_individuals=args.n_individuals,
        n_frames=args.n_frames,
        arena_radius=args.arena_radius,
        seed=args.seed,
        noise_sigma=args.noise_sigma,
        dropout_prob=args.dropout,
        swap_prob=args.swap_prob,
    )
    rig = generate_rig(args.n_cameras, args.rig_radius, args.rig_height, (args.width, args.height), args.focal)
    scene = generate_scene(config)
    # detection corruption uses its own stream derived from the scene seed
    det_seed = (args.seed + 1) % 2**64
    rendered = render_detections(scene, rig, config.noise_sigma, config.dropout_prob, config.swap_prob, det_seed)

    if args.masks:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        rng = make_rng((args.seed + 2) % 2**64)
        calib_by_id = {c.camera_id: c for c in rig}
        cam_index = {c.camera_id: i for i, c in enumerate(rig)}
        for rec, truth in zip(rendered.frames, rendered.truth):
            for cam, dets in rec.cameras.items():
                for k, (det, tru) in enumerate(zip(dets, truth[cam])):
                    mask = render_silhouette(calib_by_id[cam], scene.poses[rec.frame, tru.identity],
                                             n_speckle=args.speckle, rng=rng)
                    name = f"masks/frame{rec.frame}_cam{cam_index[cam]}_id{k}.pgm"
                    write_mask(out / name, mask)
                    dets[k] = Detection(det.bbox, det.pose, name)

    header = {
        "generator": "pigeonpose.synthetic",
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "detection_seed": det_seed,
        "config": config_dict(config),
    }
    save_calibration(out / "calibration.json", rig)
    write_frames(out / "detections.jsonl", rendered.frames, header)

    with open(out / "ground_truth_2d.jsonl", "w") as fh:
        fh.write(_dump({"format_version": FORMAT_VERSION, "header": header}) + "\n")
        for rec, truth in zip(rendered.frames, rendered.truth):
            cams = {}
            for cam, tru in truth.items():
                cams[cam] = [
                    {
                        "bbox": [float(x) for x in t.bbox_exact],
                        "keypoints": [[float(u), float(v), 1.0] for u, v in t.uv_exact],
                        "mask": None,
                        "identity": t.identity,
                        "swapped": list(t.swapped),
                        "dropped": [bool(x) for x in t.dropped],
                    }
                    for t in tru
                ]
            fh.write(_dump({"format_version": FORMAT_VERSION, "frame": rec.frame, "cameras": cams}) + "\n")

    gt = TrajectorySet(metadata={"ground_truth": True, **header})
    for t in range(scene.n_frames):
        for i in range(scene.n_individuals):
            gt.add(TrajectoryEntry(t, i, Pose3D(scene.poses[t, i]), np.zeros(N_KEYPOINTS)))
    gt.write(out / "ground_truth_3d.jsonl")
    print(f"wrote synthetic scene to {out}")
    return 0


# ---------------------------------------------------------------------------
# match / track / triangulate / run
# ---------------------------------------------------------------------------

def _first_frame(path) -> FrameRecord:
    for rec in read_frames(path):
        return rec
    raise FormatError(f"{path}: no frames")


def _views(rec: FrameRecord, cams) -> list[ViewDetections]:
    return [ViewDetections(c, [d.pose for d in rec.detections(c)]) for c in sorted(cams) if rec.detections(c)]


def cmd_match(args) -> int:
    calibs = load_calibration(args.calib)
    rec = _first_frame(args.detections)
    result = match_identities(_views(rec, [c.camera_id for c in calibs]), calibs,
                              confidence_threshold=args.confidence_threshold)
    doc = {
        "format_version": FORMAT_VERSION,
        "frame": rec.frame,
        "n_ids": result.n_ids,
        "total_cost": result.total_cost,
        "assignment": [
            {"camera_id": cam, "detection": idx, "global_id": gid}
            for (cam, idx), gid in sorted(result.mapping.items())
        ],
    }
    _emit(args.out, _dump(doc) + "\n")
    return 0


def cmd_track(args) -> int:
    calibs = load_calibration(args.calib) if args.calib else None
    cfg = _tracker_config(args)
    trackers: dict[str, SortTracker] = {}
    lines = []
    for n, rec in enumerate(read_frames(args.detections)):
        cams = [c.camera_id for c in calibs] if calibs else sorted(rec.cameras)
        for cam in cams:
            trackers.setdefault(cam, SortTracker(cfg, cam))
        emitted = {cam: trk.step([(d.bbox, d.confidence) for d in rec.detections(cam)])
                   for cam, trk in trackers.items()}
        if n == 0 and calibs is not None:
            assignment = match_identities(_views(rec, trackers), calibs,
                                          confidence_threshold=args.confidence_threshold)
            propagate_global_ids(trackers, assignment, {c: len(rec.detections(c)) for c in trackers})
        tracks = {}
        for cam in sorted(emitted):
            rows = []
            for tb in emitted[cam]:
                state = trackers[cam].track(tb.track_id)
                rows.append({"track_id": tb.track_id, "bbox": [float(x) for x in tb.bbox],
                             "detection": tb.detection_index,
                             "global_id": None if state is None else state.global_id})
            tracks[cam] = rows
        lines.append(_dump({"format_version": FORMAT_VERSION, "frame": rec.frame, "tracks": tracks}))
    _emit(args.out, "".join(line + "\n" for line in lines))
    return 0


def cmd_triangulate(args) -> int:
    """Triangulate each frame independently; IDs come from per-frame matching."""
    calibs = load_calibration(args.calib)
    by_id = {c.camera_id: c for c in calibs}
    out = TrajectorySet(metadata={"toolkit": "pigeonpose", "version": __version__, "mode": "per-frame"})
    for rec in read_frames(args.detections):
        views = _views(rec, by_id)
        if len(views) < 2:
            continue
        result = match_identities(views, calibs, confidence_threshold=args.confidence_threshold)
        for gid in range(result.n_ids):
            members = result.members(gid)
            if len(members) < 2:
                continue
            obs = [(by_id[cam], rec.detections(cam)[idx].pose) for cam, idx in sorted(members.items())]
            pose, err = triangulate_pose(obs, args.confidence_threshold)
            out.add(TrajectoryEntry(rec.frame, gid, pose, err, tuple(sorted(members))))
    _write_trajectories(out, args.out)
    return 0


def cmd_run(args) -> int:
    calibs = load_calibration(args.calib)
    base_dir = Path(args.detections).resolve().parent
    result = run_pipeline(calibs, read_frames(args.detections), _pipeline_config(args), base_dir)
    _write_trajectories(result, args.out)
    return 0


def _write_trajectories(ts: TrajectorySet, out) -> None:
    if out:
        ts.write(out)
    else:
        for e in ts.entries():
            sys.stdout.write(_dump(e.to_dict()) + "\n")
        sys.stdout.write(_dump({"format_version": FORMAT_VERSION, "metadata": ts.metadata}) + "\n")


def _emit(out, text: str) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _file_kind(path) -> str:
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if "header" in d or "metadata" in d:
                continue
            return "2d" if "cameras" in d else "3d"
    raise FormatError(f"{path}: empty file")


def pair_trajectories(pred: TrajectorySet, gt: TrajectorySet) -> list[EvalPair]:
    """Evaluation pairs for every ground-truth pose.

    Predicted global IDs are mapped to ground-truth identities by Hungarian
    assignment on mean 3D keypoint distance over shared frames. Ground-truth
    poses without a mapped prediction enter as all-invalid predictions.
    """
    gt_ids = sorted(gt.trajectories)
    pred_ids = sorted(pred.trajectories)
    cost = np.full((len(pred_ids), len(gt_ids)), 1e12)
    for a, pid in enumerate(pred_ids):
        p_frames = {e.frame: e.pose.xyz for e in pred.trajectories[pid]}
        for b, gid in enumerate(gt_ids):
            d = []
            for e in gt.trajectories[gid]:
                if e.frame in p_frames:
                    diff = np.linalg.norm(p_frames[e.frame] - e.pose.xyz, axis=1)
                    d.extend(diff[np.isfinite(diff)])
            if d:
                cost[a, b] = float(np.mean(d))
    mapping = {}
    if cost.size:
        rows, cols = linear_sum_assignment(cost)
        mapping = {gt_ids[c]: pred_ids[r] for r, c in zip(rows, cols) if cost[r, c] < 1e12}
    pairs = []
    for gid in gt_ids:
        p_frames = {}
        if gid in mapping:
            p_frames = {e.frame: e.pose for e in pred.trajectories[mapping[gid]]}
        for e in gt.trajectories[gid]:
            pairs.append(EvalPair(p_frames.get(e.frame, Pose3D.invalid(e.pose.n_keypoints)), e.pose))
    return pairs


def pair_detections(pred_path, gt_path) -> list[EvalPair]:
    """2D pairs matched by (frame, camera, detection index)."""
    gt = {r.frame: r for r in read_frames(gt_path)}
    pairs = []
    for rec in read_frames(pred_path):
        g = gt.get(rec.frame)
        if g is None:
            continue
        for cam, gdets in g.cameras.items():
            pdets = rec.detections(cam)
            for k, gd in enumerate(gdets):
                pred = pdets[k].pose if k < len(pdets) else Pose2D(np.zeros((N_KEYPOINTS, 2)), np.zeros(N_KEYPOINTS))
                pairs.append(EvalPair(pred, gd.pose, gd.bbox))
    return pairs


def cmd_eval(args) -> int:
    kind = args.mode or _file_kind(args.gt)
    if kind == "3d":
        pairs = pair_trajectories(TrajectorySet.read(args.pred), TrajectorySet.read(args.gt))
        report = per_keypoint_report(pairs, unit="mm", scale=1000.0)
    else:
        report = per_keypoint_report(pair_detections(args.pred, args.gt), unit="px")
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.table:
        Path(args.table).write_text(report.format_table())
    sys.stdout.write(report.format_table())
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pigeonpose",
                                description="Multi-view bird pose triangulation, identity matching and tracking.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, calib_required=True):
        sp.add_argument("--calib", required=calib_required, help="calibration JSON")
        sp.add_argument("--detections", required=True, help="detections JSONL")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--confidence-threshold", type=float, default=0.5)

    def tracker_flags(sp):
        sp.add_argument("--iou-threshold", type=float, default=0.3)
        sp.add_argument("--max-age", type=int, default=1)
        sp.add_argument("--min-hits", type=int, default=3)

    s = sub.add_parser("synth", help="write a synthetic scene")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-individuals", type=int, default=10)
    s.add_argument("--n-frames", type=int, default=50)
    s.add_argument("--n-cameras", type=int, default=4)
    s.add_argument("--arena-radius", type=float, default=1.5)
    s.add_argument("--rig-radius", type=float, default=3.0)
    s.add_argument("--rig-height", type=float, default=2.0)
    s.add_argument("--focal", type=float, default=1000.0)
    s.add_argument("--width", type=int, default=1280)
    s.add_argument("--height", type=int, default=1024)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--swap-prob", type=float, default=0.0)
    s.add_argument("--masks", action="store_true", help="also write silhouette masks (PGM)")
    s.add_argument("--speckle", type=int, default=0, help="speckle blobs per mask")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("match", help="first-frame cross-view identity matching")
    common(s)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("track", help="per-view SORT tracking")
    common(s, calib_required=False)
    tracker_flags(s)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("triangulate", help="per-frame matching and triangulation, no tracking")
    common(s)
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("run", help="full pipeline")
    common(s)
    tracker_flags(s)
    s.add_argument("--resolve-lr", action="store_true", help="undo left/right swaps before triangulating")
    s.add_argument("--use-masks", action="store_true", help="derive bboxes from the referenced masks")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mode", choices=("2d", "3d"), help="default: inferred from the ground-truth file")
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--table", help="plain-text table path")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except (PoseToolkitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
