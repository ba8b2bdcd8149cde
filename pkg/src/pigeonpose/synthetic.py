"""Deterministic synthetic multi-camera scenes with known ground truth.

Birds are rigid nine-keypoint skeletons walking on the ground plane
(``z = 0``) of a circular arena. A ring of cameras looks at the arena centre.
All randomness comes from numpy's PCG64 bit generator seeded explicitly, so
every output is a pure function of its configuration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidConfig
from .geometry import MIN_DEPTH, CameraCalibration, camera_depth
from .records import Detection, FrameRecord
from .silhouette import BoundingBox
from .skeleton import KEYPOINT_INDEX, N_KEYPOINTS, SYMMETRIC_PAIRS, Pose2D

RNG_ALGORITHM = "numpy.random.PCG64"

# Body frame: +x forward (beak), +y to the bird's left, +z up. Meters.
# Roughly pigeon sized: 0.31 m beak to tail, 0.03 m between the eyes.
TEMPLATE_OFFSETS = np.array(
    [
        [0.160, 0.000, 0.240],  # beak
        [0.130, 0.000, 0.250],  # nose
        [0.110, 0.015, 0.260],  # eye_left
        [0.110, -0.015, 0.260],  # eye_right
        [0.030, 0.050, 0.180],  # shoulder_left
        [0.030, -0.050, 0.180],  # shoulder_right
        [0.070, 0.000, 0.150],  # keel_top
        [0.020, 0.000, 0.080],  # keel_bottom
        [-0.150, 0.000, 0.120],  # tail
    ]
)
BODY_DIAMETER = 0.4
# largest heading change per frame (rad), the slower turn made while
# standing still, and move attempts before standing still
MAX_TURN = 0.2
IN_PLACE_TURN = 0.1
MOVE_RETRIES = 200

# (start keypoint, end keypoint, radius in meters); None marks the eye midpoint
_K = KEYPOINT_INDEX
SILHOUETTE_SEGMENTS = (
    (_K["beak"], _K["tail"], 0.035),
    (None, None, 0.025),
    (_K["beak"], _K["nose"], 0.012),
    (_K["nose"], _K["eye_left"], 0.012),
    (_K["nose"], _K["eye_right"], 0.012),
    (_K["eye_left"], _K["shoulder_left"], 0.02),
    (_K["eye_right"], _K["shoulder_right"], 0.02),
    (_K["shoulder_left"], _K["keel_top"], 0.025),
    (_K["shoulder_right"], _K["keel_top"], 0.025),
    (_K["shoulder_left"], _K["tail"], 0.025),
    (_K["shoulder_right"], _K["tail"], 0.025),
    (_K["keel_top"], _K["keel_bottom"], 0.03),
    (_K["keel_bottom"], _K["tail"], 0.025),
)


@dataclass(frozen=True)
class BirdTemplate:
    offsets: np.ndarray = field(default_factory=lambda: TEMPLATE_OFFSETS.copy())

    def validate(self) -> None:
        off = np.asarray(self.offsets)
        if off.shape != (N_KEYPOINTS, 3):
            raise InvalidConfig("template needs 9 three-dimensional offsets")
        mirror = np.array([1.0, -1.0, 1.0])
        for pair in SYMMETRIC_PAIRS:
            if np.max(np.abs(off[pair.left_index] * mirror - off[pair.right_index])) > 1e-12:
                raise InvalidConfig("template is not bilaterally symmetric")
        if np.argmax(off[:, 0]) != _K["beak"]:
            raise InvalidConfig("beak must be the most anterior keypoint")

    def pose(self, position, heading) -> np.ndarray:
        c, s = np.cos(heading), np.sin(heading)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return np.asarray(self.offsets) @ rot.T + np.array([position[0], position[1], 0.0])


@dataclass(frozen=True)
class SceneConfig:
    n_individuals: int = 5
    n_frames: int = 50
    arena_radius: float = 1.5
    seed: int = 0
    noise_sigma: float = 0.0
    dropout_prob: float = 0.0
    swap_prob: float = 0.0
    step_size: float = 0.02
    turn_sigma: float = 0.1
    min_separation: float = BODY_DIAMETER

    def validate(self) -> None:
        if not 1 <= self.n_individuals <= 10:
            raise InvalidConfig("n_individuals must be in [1, 10]")
        if self.n_frames < 1:
            raise InvalidConfig("n_frames must be >= 1")
        if not self.arena_radius > self.min_separation:
            raise InvalidConfig("arena_radius must exceed min_separation")
        if self.noise_sigma < 0 or self.step_size < 0 or self.turn_sigma < 0:
            raise InvalidConfig("noise_sigma, step_size and turn_sigma must be non-negative")
        for name in ("dropout_prob", "swap_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")


@dataclass
class Scene:
    config: SceneConfig
    positions: np.ndarray  # (F, N, 2)
    headings: np.ndarray  # (F, N)
    poses: np.ndarray  # (F, N, 9, 3)

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]

    @property
    def n_individuals(self) -> int:
        return self.poses.shape[1]


@dataclass(frozen=True)
class ViewTruth:
    """Oracle record for one rendered detection."""

    identity: int
    uv_exact: np.ndarray  # (9, 2)
    bbox_exact: BoundingBox
    swapped: tuple[bool, ...]  # one flag per symmetric pair
    dropped: np.ndarray  # (9,) bool


@dataclass
class RenderedDetections:
    frames: list[FrameRecord]
    truth: list[dict[str, list[ViewTruth]]]  # aligned with frames[f].cameras[cam]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# rig
# ---------------------------------------------------------------------------

def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation and translation for a camera at ``center`` facing ``target``."""
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise InvalidConfig("camera looks straight along the up vector")
    right /= norm
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ center


def generate_rig(n_cameras: int = 4, radius: float = 3.0, height: float = 2.0,
                 image_size=(1280, 1024), focal: float = 1000.0) -> list[CameraCalibration]:
    """Cameras evenly spaced on a circle of ``radius`` at ``height``, all aimed at the origin."""
    if n_cameras < 2:
        raise InvalidConfig("a rig needs at least 2 cameras")
    if radius <= 0 or focal <= 0:
        raise InvalidConfig("radius and focal must be positive")
    width, height_px = (int(x) for x in image_size)
    if width <= 0 or height_px <= 0:
        raise InvalidConfig("image size must be positive")
    rig = []
    for k in range(n_cameras):
        angle = 2.0 * np.pi * k / n_cameras
        center = (radius * np.cos(angle), radius * np.sin(angle), height)
        R, t = look_at(center, (0.0, 0.0, 0.0))
        rig.append(CameraCalibration.from_params(
            f"cam{k}", focal, focal, width / 2.0, height_px / 2.0, R, t, width, height_px))
    return rig


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------

def _clear(pos, others, min_sep) -> bool:
    if others.shape[0] == 0:
        return True
    return bool(np.min(np.hypot(*(others - pos).T)) >= min_sep)


def generate_scene(config: SceneConfig, template: BirdTemplate | None = None) -> Scene:
    """Seeded random walks with heading-aligned bodies, bounded and collision free."""
    config.validate()
    template = template or BirdTemplate()
    template.validate()
    rng = make_rng(config.seed)
    n, f = config.n_individuals, config.n_frames
    # keep the whole body inside the arena
    inner = config.arena_radius - np.max(np.hypot(template.offsets[:, 0], template.offsets[:, 1]))
    if inner <= 0:
        raise InvalidConfig("arena too small for the bird template")
    pos = np.zeros((f, n, 2))
    head = np.zeros((f, n))
    for i in range(n):
        for _ in range(1000):
            r = inner * np.sqrt(rng.random())
            a = 2 * np.pi * rng.random()
            cand = np.array([r * np.cos(a), r * np.sin(a)])
            if _clear(cand, pos[0, :i], config.min_separation):
                break
        else:
            raise InvalidConfig("could not place individuals without collision (1000 retries)")
        pos[0, i] = cand
        head[0, i] = 2 * np.pi * rng.random()

    for t in range(1, f):
        pos[t] = pos[t - 1]
        for i in range(n):
            others = np.delete(pos[t], i, axis=0)
            heading = head[t - 1, i] + np.clip(config.turn_sigma * rng.standard_normal(), -MAX_TURN, MAX_TURN)
            step = config.step_size * (0.5 + rng.random())
            for k in range(MOVE_RETRIES):
                cand = pos[t - 1, i] + step * np.array([np.cos(heading), np.sin(heading)])
                if np.hypot(*cand) <= inner and _clear(cand, others, config.min_separation):
                    break
                # blocked: turn within a window that widens with each retry
                # (never beyond MAX_TURN) and shorten the stride
                heading = head[t - 1, i] + min(MAX_TURN, 0.05 * (k + 1)) * (2 * rng.random() - 1)
                step *= 0.98
            else:
                # no free move: stay put (always collision free) and turn toward the centre
                cand = pos[t - 1, i]
                to_centre = np.arctan2(-cand[1], -cand[0]) - head[t - 1, i]
                to_centre = np.mod(to_centre + np.pi, 2 * np.pi) - np.pi
                heading = head[t - 1, i] + np.clip(to_centre, -IN_PLACE_TURN, IN_PLACE_TURN)
            pos[t, i] = cand
            head[t, i] = np.mod(heading, 2 * np.pi)

    poses = np.stack([[template.pose(pos[t, i], head[t, i]) for i in range(n)] for t in range(f)])
    return Scene(config, pos, head, poses.reshape(f, n, N_KEYPOINTS, 3))


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

def _silhouette_segments(calib: CameraCalibration, pose3d):
    """Pixel-space capsules ``(S, 4)`` and radii ``(S,)``; segments behind the camera are dropped."""
    pose3d = np.asarray(pose3d)
    eye_mid = 0.5 * (pose3d[_K["eye_left"]] + pose3d[_K["eye_right"]])
    starts, ends, radii_m = [], [], []
    for a, b, r in SILHOUETTE_SEGMENTS:
        starts.append(eye_mid if a is None else pose3d[a])
        ends.append(eye_mid if b is None else pose3d[b])
        radii_m.append(r)
    starts, ends, radii_m = np.array(starts), np.array(ends), np.array(radii_m)
    d0, d1 = camera_depth(calib, starts), camera_depth(calib, ends)
    ok = (d0 > MIN_DEPTH) & (d1 > MIN_DEPTH)
    if not ok.any():
        return np.zeros((0, 4)), np.zeros(0)
    P = calib.projection_matrix

    def _proj(x):
        h = np.column_stack([x, np.ones(len(x))]) @ P.T
        return h[:, :2] / h[:, 2:3]

    segs = np.hstack([_proj(starts[ok]), _proj(ends[ok])])
    mid_depth = 0.5 * (d0[ok] + d1[ok])
    radii = calib.intrinsics[0, 0] * radii_m[ok] / mid_depth
    return segs, radii


def silhouette_extent(calib: CameraCalibration, pose3d) -> BoundingBox | None:
    """Continuous bounding box of the rendered silhouette, or None if nothing is in front."""
    segs, radii = _silhouette_segments(calib, pose3d)
    if segs.shape[0] == 0:
        return None
    xs = np.concatenate([segs[:, 0] - radii, segs[:, 2] - radii, segs[:, 0] + radii, segs[:, 2] + radii])
    ys = np.concatenate([segs[:, 1] - radii, segs[:, 3] - radii, segs[:, 1] + radii, segs[:, 3] + radii])
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def _visible(calib: CameraCalibration, pose3d, box: BoundingBox | None) -> bool:
    if box is None or np.any(camera_depth(calib, pose3d) <= MIN_DEPTH):
        return False
    return box.x_min >= 0 and box.y_min >= 0 and box.x_max <= calib.image_width and box.y_max <= calib.image_height


def render_detections(scene: Scene, rig, noise_sigma: float = 0.0, dropout_prob: float = 0.0,
                      swap_prob: float = 0.0, seed: int = 0, shuffle: bool = True) -> RenderedDetections:
    """Project every individual into every camera and corrupt the keypoints.

    Per (frame, camera, individual) the generator always draws the same
    random numbers in the same order (keypoint noise, dropout, swap, bbox
    noise), so varying one corruption level leaves the others unchanged.
    Only individuals whose silhouette lies fully inside the image are
    detected. Detection order within a view is shuffled when ``shuffle``.
    """
    if noise_sigma < 0 or not 0 <= dropout_prob <= 1 or not 0 <= swap_prob <= 1:
        raise InvalidConfig("bad corruption parameters")
    rng = make_rng(seed)
    frames, truth = [], []
    n_pairs = len(SYMMETRIC_PAIRS)
    for t in range(scene.n_frames):
        rec = FrameRecord(t)
        frame_truth = {}
        for calib in rig:
            dets, tru = [], []
            for i in range(scene.n_individuals):
                pose3d = scene.poses[t, i]
                noise = rng.standard_normal((N_KEYPOINTS, 2))
                drop_u = rng.random(N_KEYPOINTS)
                swap_u = rng.random(n_pairs)
                box_noise = rng.standard_normal(4)
                box = silhouette_extent(calib, pose3d)
                if not _visible(calib, pose3d, box):
                    continue
                h = np.column_stack([pose3d, np.ones(N_KEYPOINTS)]) @ calib.projection_matrix.T
                exact = h[:, :2] / h[:, 2:3]
                uv = exact + noise_sigma * noise
                dropped = drop_u < dropout_prob
                conf = np.where(dropped, 0.0, 1.0)
                swapped = swap_u < swap_prob
                for pair, flag in zip(SYMMETRIC_PAIRS, swapped):
                    if flag:
                        li, ri = pair
                        uv[[li, ri]] = uv[[ri, li]]
                        conf[[li, ri]] = conf[[ri, li]]
                noisy_box = box.as_array() + noise_sigma * box_noise
                dets.append(Detection(BoundingBox(*noisy_box), Pose2D(uv, conf)))
                tru.append(ViewTruth(i, exact, box, tuple(bool(x) for x in swapped), dropped))
            order = rng.permutation(len(dets)) if shuffle else np.arange(len(dets))
            rec.cameras[calib.camera_id] = [dets[k] for k in order]
            frame_truth[calib.camera_id] = [tru[k] for k in order]
        frames.append(rec)
        truth.append(frame_truth)
    return RenderedDetections(frames, truth)


# ---------------------------------------------------------------------------
# silhouettes
# ---------------------------------------------------------------------------

def render_silhouette(calib: CameraCalibration, pose3d, image_size=None, n_speckle: int = 0,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Rasterise one bird's silhouette as a full-image boolean mask.

    ``n_speckle`` small blobs are scattered near the bird without touching
    it or each other, so each stays a separate (and smaller) component.
    """
    width, height = image_size or (calib.image_width, calib.image_height)
    segs, radii = _silhouette_segments(calib, pose3d)
    mask = kernels.render_capsules(segs, radii, height, width)
    if n_speckle <= 0 or not mask.any():
        return mask
    if rng is None:
        raise InvalidConfig("speckle rendering needs an rng")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    lo = np.maximum([cols[0] - 30.0, rows[0] - 30.0], 0.0)
    hi = np.minimum([cols[-1] + 30.0, rows[-1] + 30.0], [width - 1.0, height - 1.0])
    # speckle centres stay in [lo, hi]; pad by the largest radius plus margin
    # so every blob fits in the window we draw on
    x0 = max(int(lo[0]) - 5, 0)
    y0 = max(int(lo[1]) - 5, 0)
    x1 = min(int(hi[0]) + 5, width - 1)
    y1 = min(int(hi[1]) + 5, height - 1)
    win_h, win_w = y1 - y0 + 1, x1 - x0 + 1
    occupied = mask.copy()
    window = occupied[y0:y1 + 1, x0:x1 + 1]
    placed = 0
    for _ in range(50 * n_speckle):
        if placed == n_speckle:
            break
        c = lo + rng.random(2) * (hi - lo)
        r = 1.0 + 1.5 * rng.random()
        seg = np.array([[c[0] - x0, c[1] - y0, c[0] - x0, c[1] - y0]])
        # 1.5 px margin > sqrt(2) keeps speckles out of 8-neighbourhoods
        if (kernels.render_capsules(seg, [r + 1.5], win_h, win_w) & window).any():
            continue
        blob = kernels.render_capsules(seg, [r], win_h, win_w)
        if not blob.any():
            continue
        window |= blob
        placed += 1
    return occupied


def render_masks(scene: Scene, rig, image_size=None, n_speckle: int = 0, seed: int = 0, frames=None):
    """Silhouettes keyed by ``(frame, camera_id, identity)``."""
    rng = make_rng(seed)
    out = {}
    for t in range(scene.n_frames) if frames is None else frames:
        for calib in rig:
            for i in range(scene.n_individuals):
                out[(t, calib.camera_id, i)] = render_silhouette(
                    calib, scene.poses[t, i], image_size, n_speckle, rng)
    return out


def config_dict(config: SceneConfig) -> dict:
    return asdict(config)
