"""Synthetic ground-truth mask videos of hinged two-box objects."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    ArticulatedModel, HingeSpec, MotionParams, PoseParams, assemble, axis_angle_to_matrix, face_width,
    matrix_to_axis_angle, surface_centroid,
)
from .objective import HumanObservation
from .render import CameraIntrinsics, HullRaster, project

# generation softness; masks are the tau -> 0 limit of the soft renderer
MASK_TAU = 1e-9
PARTS = ("object", "base", "moving")

# (w, h, d) ranges and the hinge edges that make sense for each category
CATEGORIES = {
    "cabinet": dict(dims=((0.5, 0.8), (0.8, 1.2), (0.4, 0.6)), edges=(0, 1)),
    "microwave": dict(dims=((0.5, 0.7), (0.3, 0.42), (0.35, 0.5)), edges=(0, 1, 3)),
    "laptop": dict(dims=((0.3, 0.4), (0.22, 0.3), (0.02, 0.04)), edges=(2, 3)),
    "fridge": dict(dims=((0.6, 0.8), (1.4, 1.8), (0.6, 0.8)), edges=(0, 1)),
}
EXTENT_MODES = {"full": (0.0, 1.0), "half_a": (0.0, 0.5), "half_b": (0.5, 0.5)}


class SceneError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(150.0, 150.0, 64.0, 64.0, 128, 128)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    category: str | None = None          # None: drawn uniformly
    edge_id: int | None = None           # None: drawn from the category's edges
    extent_mode: str | None = None       # None: drawn from EXTENT_MODES
    thickness: tuple[float, float] = (0.02, 0.04)
    camera: CameraIntrinsics = field(default_factory=default_camera)
    yaw_deg: float = 35.0
    pitch_deg: float = 20.0
    roll_deg: float = 5.0
    fill: tuple[float, float] = (0.4, 0.6)   # projected base size / image width
    n_frames: int = 30
    max_angle_deg: tuple[float, float] = (60.0, 110.0)
    shape: str | None = None             # "open" | "open-close"; None: drawn
    hand_noise: float = 0.0
    human_z_jitter: float = 0.05
    margin_px: float = 2.0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        if self.category is not None and self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.edge_id is not None and self.edge_id not in range(4):
            raise ValueError("edge_id must be 0..3")
        if self.extent_mode is not None and self.extent_mode not in EXTENT_MODES:
            raise ValueError(f"unknown extent mode {self.extent_mode!r}")
        if self.shape is not None and self.shape not in ("open", "open-close"):
            raise ValueError(f"unknown trajectory shape {self.shape!r}")
        lo, hi = self.max_angle_deg
        if not (0.0 < lo <= hi <= 170.0):
            raise ValueError("max angle range must lie in (0, 170] degrees")
        if not (0 < self.thickness[0] <= self.thickness[1]):
            raise ValueError("bad thickness range")
        if not (0 < self.fill[0] <= self.fill[1] < 1):
            raise ValueError("bad fill range")
        if self.hand_noise < 0 or self.human_z_jitter < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True, eq=False)
class VideoSample:
    video_id: str
    masks: dict            # part -> (N, H, W) float array of 0/1
    camera: CameraIntrinsics
    human: HumanObservation
    gt: ArticulatedModel
    category: str
    seed: int = 0
    mask_tau: float = MASK_TAU

    @property
    def n_frames(self) -> int:
        return len(self.masks["object"])

    @property
    def motion(self) -> MotionParams:
        return self.gt.motion()


def gen_trajectory(n: int, max_angle: float, shape: str = "open") -> np.ndarray:
    """Opening angles (same unit as ``max_angle``) starting closed."""
    if n < 2:
        raise ValueError("trajectory needs at least 2 frames")
    if not 0.0 < max_angle <= 170.0:
        raise ValueError("max_angle must lie in (0, 170]")
    if shape == "open":
        return np.linspace(0.0, max_angle, n)
    if shape == "open-close":
        s = np.linspace(0.0, 2.0, n)
        return max_angle * (1.0 - np.abs(1.0 - s))
    raise ValueError(f"unknown trajectory shape {shape!r}")


def _euler(yaw, pitch, roll) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


def _in_frame(model: ArticulatedModel, K: CameraIntrinsics, margin: float) -> bool:
    for t in range(model.n_frames):
        for c in assemble(model, t):
            if np.any(c[:, 2] <= 0.05):
                return False
            uv = project(K, c)
            if (uv.min() < margin or uv[:, 0].max() > K.width - margin
                    or uv[:, 1].max() > K.height - margin):
                return False
    return True


def render_masks(model: ArticulatedModel, K: CameraIntrinsics, tau: float = MASK_TAU) -> dict:
    """Binary part masks (N, H, W) from the soft renderer at vanishing softness."""
    n = model.n_frames
    out = {k: np.zeros((n, K.height, K.width)) for k in PARTS}
    base_uv = project(K, assemble(model, 0)[0])
    base = HullRaster(base_uv, K.width, K.height, tau).occ[0] >= 0.5
    for t in range(n):
        m = HullRaster(project(K, assemble(model, t)[1]), K.width, K.height, tau).occ[0] >= 0.5
        out["base"][t] = base.reshape(K.height, K.width)
        out["moving"][t] = m.reshape(K.height, K.width)
        out["object"][t] = (base | m).reshape(K.height, K.width)
    return out


def _small_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis_angle_to_matrix(axis * np.radians(rng.uniform(0, max_deg)))


def synth_human(model: ArticulatedModel, rng, hand_noise: float = 0.0, z_jitter: float = 0.05) -> HumanObservation:
    """Hand trajectories as rigid images of the moving-part centroid path."""
    n = model.n_frames
    v = np.array([assemble(model, t)[1].mean(0) for t in range(n)])
    hands = []
    for _ in range(2):
        Q = _small_rotation(rng, 10.0)
        b = rng.uniform(-0.15, 0.15, size=3)
        h = v @ Q.T + b
        if hand_noise > 0:
            h = h + rng.normal(scale=hand_noise, size=h.shape)
        hands.append(h)
    mean_z = np.array([surface_centroid(assemble(model, t))[2] for t in range(n)])
    mean_z = mean_z + rng.uniform(-z_jitter, z_jitter, size=n)
    return HumanObservation(hands[0], hands[1], mean_z)


def gen_scene(spec: SceneSpec, video_id: str | None = None, max_retries: int = 100) -> VideoSample:
    rng = np.random.default_rng(spec.seed)
    category = spec.category or str(rng.choice(sorted(CATEGORIES)))
    preset = CATEGORIES[category]
    edge_id = spec.edge_id if spec.edge_id is not None else int(rng.choice(preset["edges"]))
    mode = spec.extent_mode or str(rng.choice(sorted(EXTENT_MODES)))
    offset, extent = EXTENT_MODES[mode]
    shape = spec.shape or str(rng.choice(["open", "open-close"]))
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in preset["dims"])
    thick = float(rng.uniform(*spec.thickness))
    width = face_width(dims, edge_id)
    max_angle = float(rng.uniform(*spec.max_angle_deg))
    angles = np.radians(gen_trajectory(spec.n_frames, max_angle, shape))
    K = spec.camera
    hinge = HingeSpec(edge_id, offset, extent)
    maxdim = max(dims[0], dims[1])
    for _ in range(max_retries):
        R = _euler(*np.radians([rng.uniform(-spec.yaw_deg, spec.yaw_deg),
                                rng.uniform(-spec.pitch_deg, spec.pitch_deg),
                                rng.uniform(-spec.roll_deg, spec.roll_deg)]))
        z = K.fx * maxdim / (rng.uniform(*spec.fill) * K.width)
        shift = rng.uniform(-0.1, 0.1, size=2) * np.array([K.width, K.height])
        t = np.array([shift[0] * z / K.fx, shift[1] * z / K.fy, z])
        pose = PoseParams(tuple(matrix_to_axis_angle(R)), tuple(t))
        model = ArticulatedModel.build(dims, width, thick, hinge, pose, tuple(angles))
        if _in_frame(model, K, spec.margin_px):
            break
    else:
        raise SceneError(f"could not place the object in frame after {max_retries} retries (seed {spec.seed})")
    masks = render_masks(model, K)
    human = synth_human(model, rng, spec.hand_noise, spec.human_z_jitter)
    return VideoSample(video_id or f"scene_{spec.seed:05d}", masks, K, human, model, category, spec.seed)


def gen_suite(n: int, seed: int = 0, **overrides) -> list[VideoSample]:
    """``n`` scenes with categories and hinge edges cycling deterministically."""
    if n < 1:
        raise ValueError("need at least one scene")
    cats = sorted(CATEGORIES)
    out = []
    for i in range(n):
        cat = overrides.get("category") or cats[i % len(cats)]
        edges = CATEGORIES[cat]["edges"]
        edge = overrides.get("edge_id", edges[(i // len(cats)) % len(edges)])
        kw = {k: v for k, v in overrides.items() if k not in ("category", "edge_id")}
        spec = SceneSpec(seed=seed * 100003 + i, category=cat, edge_id=edge, **kw)
        out.append(gen_scene(spec, video_id=f"video_{i:03d}"))
    return out


# --------------------------------------------------------------------- I/O

def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_to_dict(model: ArticulatedModel) -> dict:
    o, d = model.hinge_line()
    return {
        "base_dims": list(model.base.dims),
        "moving_dims": list(model.moving.dims),
        "hinge": {"edge_id": model.hinge.edge_id, "offset": model.hinge.offset, "extent": model.hinge.extent},
        "pose": {"rotation": list(model.pose.rotation), "translation": list(model.pose.translation)},
        "angles_deg": [float(np.degrees(a)) for a in model.angles],
        "motion": {"origin": [float(x) for x in o], "direction": [float(x) for x in d / np.linalg.norm(d)]},
    }


def model_from_dict(d: dict, where: str = "model") -> ArticulatedModel:
    try:
        h = d["hinge"]
        return ArticulatedModel.build(
            tuple(d["base_dims"]), d["moving_dims"][1], d["moving_dims"][2],
            HingeSpec(int(h["edge_id"]), float(h["offset"]), float(h["extent"])),
            PoseParams(tuple(d["pose"]["rotation"]), tuple(d["pose"]["translation"])),
            tuple(np.radians(d["angles_deg"])),
        )
    except KeyError as e:
        raise DatasetError(f"{where}: missing field {e.args[0]!r}") from None
    except (TypeError, ValueError, IndexError) as e:
        raise DatasetError(f"{where}: {e}") from None


def write_sample(sample: VideoSample, root) -> Path:
    d = Path(root) / sample.video_id
    (d / "masks").mkdir(parents=True, exist_ok=True)
    _write_json(d / "camera.json", sample.camera.to_dict())
    for part in PARTS:
        for t, m in enumerate(sample.masks[part]):
            img = Image.fromarray(np.rint(m * 255).astype(np.uint8), mode="L")
            tmp = d / "masks" / f".{part}_{t:04d}.png.tmp"
            img.save(tmp, format="PNG")
            os.replace(tmp, d / "masks" / f"{part}_{t:04d}.png")
    h = sample.human
    _write_json(d / "human.json", {"frames": [
        {"left_hand": list(map(float, h.left_hand[t])), "right_hand": list(map(float, h.right_hand[t])),
         "mean_z": float(h.mean_z[t])} for t in range(h.n_frames)]})
    _write_json(d / "gt.json", model_to_dict(sample.gt))
    _write_json(d / "meta.json", {"category": sample.category, "n_frames": sample.n_frames,
                                   "seed": sample.seed, "mask_tau": sample.mask_tau})
    return d


def write_dataset(samples, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        write_sample(s, root)
        ids.append(s.video_id)
    _write_json(root / "manifest.json", {"videos": ids})
    return root


def _read_json(path: Path):
    if not path.is_file():
        raise DatasetError(f"missing file {path.name} in {path.parent}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path.name}: malformed JSON ({e})") from None


def _read_mask(path: Path, part: str, t: int, shape) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing mask for frame {t} ({path.name})")
    try:
        with Image.open(path) as im:
            im.load()
            a = np.asarray(im.convert("L"), dtype=float) / 255.0
    except Exception as e:  # PIL raises a variety of errors on truncated files
        raise DatasetError(f"unreadable {part} mask at frame {t} ({path.name}): {e}") from None
    if a.shape != shape:
        raise DatasetError(f"{part} mask at frame {t} has shape {a.shape}, expected {shape}")
    return a


def read_sample(d) -> VideoSample:
    d = Path(d)
    if not d.is_dir():
        raise DatasetError(f"no such video directory: {d}")
    cam = _read_json(d / "camera.json")
    try:
        K = CameraIntrinsics.from_dict(cam)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"camera.json: bad field {e}") from None
    meta = _read_json(d / "meta.json")
    try:
        n = int(meta["n_frames"])
    except (KeyError, TypeError, ValueError):
        raise DatasetError("meta.json: missing or bad field 'n_frames'") from None
    masks = {p: np.stack([_read_mask(d / "masks" / f"{p}_{t:04d}.png", p, t, (K.height, K.width))
                          for t in range(n)]) for p in PARTS}
    hj = _read_json(d / "human.json")
    try:
        frames = hj["frames"]
        human = HumanObservation(np.array([f["left_hand"] for f in frames], float),
                                 np.array([f["right_hand"] for f in frames], float),
                                 np.array([f["mean_z"] for f in frames], float))
    except KeyError as e:
        raise DatasetError(f"human.json: missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise DatasetError(f"human.json: {e}") from None
    if human.n_frames != n:
        raise DatasetError(f"human.json: {human.n_frames} records for {n} frames")
    gt = model_from_dict(_read_json(d / "gt.json"), "gt.json")
    if gt.n_frames != n:
        raise DatasetError(f"gt.json: {gt.n_frames} angles for {n} frames")
    return VideoSample(d.name, masks, K, human, gt, str(meta.get("category", "unknown")),
                       int(meta.get("seed", 0)), float(meta.get("mask_tau", MASK_TAU)))


def read_dataset(root) -> list[VideoSample]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    man = root / "manifest.json"
    if man.is_file():
        ids = _read_json(man).get("videos")
        if not isinstance(ids, list):
            raise DatasetError("manifest.json: missing field 'videos'")
    else:
        ids = sorted(p.name for p in root.iterdir() if p.is_dir() and (p / "meta.json").is_file())
    return [read_sample(root / v) for v in ids]
