"""Reconstruction, pose and motion metrics, plus dataset-level aggregation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    ArticulatedModel, MotionParams, assemble, axis_angle_to_matrix, max_dimension, sample_surface,
)

N_SURFACE_POINTS = 10000
REPORT_VERSION = 1


class AlignmentError(ValueError):
    """Raised for empty or degenerate point sets."""


@dataclass(frozen=True)
class Thresholds:
    cd: float = 0.5
    rot_deg: float = 10.0
    trans: float = 0.5
    scale: float = 0.3
    origin: float = 0.5
    axis_deg: float = 10.0
    dir_deg: float = 10.0
    state_deg: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"threshold {f.name} must be positive")


@dataclass(frozen=True)
class FrameMetrics:
    cd_object: float
    cd_moving: float
    rot_err_deg: float
    trans_err: float
    scale_err: float
    origin_err: float
    axis_err_deg: float
    dir_err_deg: float
    state_err_deg: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


ERROR_FIELDS = tuple(f.name for f in fields(FrameMetrics))
TABLE1_HEADERS = ("CD (Object)", "CD (Moving)", "Rotation", "Translation", "Scale",
                  "Origin", "Axis", "Direction", "State")
ACCURACY_KEYS = ("object", "moving", "AccR", "rot", "trans", "scale", "AccP", "O", "OA", "OAD",
                 "AccM", "AccRP", "RPOA", "AccRPM")


def _fmt(x: float) -> str:
    return f"{x:g}"


def table2_headers(th: Thresholds = Thresholds()) -> tuple[str, ...]:
    return (f"Object@{_fmt(th.cd)}", f"Moving@{_fmt(th.cd)}", "AccR", f"Rot@{_fmt(th.rot_deg)}",
            f"Trans@{_fmt(th.trans)}", f"Scale@{_fmt(th.scale)}", "AccP", f"O@{_fmt(th.origin)}",
            f"OA@{_fmt(th.axis_deg)}", f"OAD@{_fmt(th.dir_deg)}", f"AccM@{_fmt(th.state_deg)}",
            "AccRP", "RPOA", "AccRPM")


# --------------------------------------------------------------------- alignment

def kabsch(src, dst, strict: bool = True):
    """Rigid ``(R, T)`` minimising sum |R src_i + T - dst_i|^2 with det(R) = +1.

    With ``strict`` a rank-deficient (collinear) configuration raises; otherwise
    any minimiser is returned.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise AlignmentError("kabsch needs two (n, 3) arrays of equal shape")
    if len(src) < 3 and strict:
        raise AlignmentError("kabsch needs at least 3 correspondences")
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    if strict and S[1] <= 1e-12 * max(S[0], 1e-300):
        raise AlignmentError("degenerate (collinear) correspondences")
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def _nonempty(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3 or len(p) == 0:
        raise AlignmentError(f"{name} point set is empty or not (n, 3)")
    return p


@dataclass(frozen=True, eq=False)
class IcpResult:
    rotation: np.ndarray
    translation: np.ndarray
    residual: float
    trace: tuple[float, ...]


def icp_align(pred, gt, max_iter: int = 100, tol: float = 1e-6, gt_tree: cKDTree | None = None) -> IcpResult:
    """Point-to-point ICP of ``pred`` onto ``gt`` from centroid alignment.

    The residual is the mean squared nearest-neighbour distance of the moved
    ``pred`` points to ``gt``; ``trace`` holds it after every iteration.
    """
    pred = _nonempty(pred, "pred")
    gt = _nonempty(gt, "gt")
    tree = gt_tree or cKDTree(gt)
    R = np.eye(3)
    T = gt.mean(0) - pred.mean(0)
    d, idx = tree.query(pred + T)
    res = float(np.mean(d * d))
    trace = [res]
    for _ in range(max_iter):
        if res <= 1e-300:
            break
        R_new, T_new = kabsch(pred, gt[idx], strict=False)
        d, idx_new = tree.query(pred @ R_new.T + T_new)
        new = float(np.mean(d * d))
        if new > res:  # numerical noise only; keep the better state
            break
        R, T, idx = R_new, T_new, idx_new
        trace.append(new)
        change = (res - new) / max(res, 1e-300)
        res = new
        if change < tol:
            break
    return IcpResult(R, T, res, tuple(trace))


def chamfer(a, b) -> float:
    """Mean squared NN distance a->b plus b->a."""
    a = _nonempty(a, "first")
    b = _nonempty(b, "second")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da * da) + np.mean(db * db))


def chamfer_bruteforce(a, b) -> float:
    a = _nonempty(a, "first")
    b = _nonempty(b, "second")
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(d2.min(1).mean() + d2.min(0).mean())


@dataclass(frozen=True, eq=False)
class Reconstruction:
    cd: float
    icp: IcpResult
    pred_maxdim: float
    gt_maxdim: float


def _vertices(geom):
    if isinstance(geom, tuple) and len(geom) == 2 and geom[0] == "points":
        return geom[1]
    if isinstance(geom, (list, tuple)):
        return np.concatenate([np.asarray(g, dtype=float).reshape(-1, 3) for g in geom])
    return np.asarray(geom, dtype=float).reshape(-1, 3)


def _normalize(pts, verts, name, scale=None):
    s = max_dimension(verts) if scale is None else float(scale)
    if not s > 0:
        raise AlignmentError(f"{name} geometry has zero extent")
    return pts / s, s


def reconstruction_error(pred, gt, n_points: int = N_SURFACE_POINTS, seed: int = 0,
                         pred_scale: float | None = None, gt_scale: float | None = None) -> Reconstruction:
    """Chamfer after max-dimension normalisation and ICP of pred onto gt.

    ``pred`` and ``gt`` are anything :func:`sample_surface` accepts, or
    already-sampled ``(n, 3)`` point arrays passed as ``("points", array)``.
    The scales default to the bounding-box extent of the given vertices;
    callers that know a shape's own frame pass its extent there instead.
    """
    # same seed on both sides: identical geometry gives identical clouds
    p, sp = _normalize(_points(pred, n_points, seed), _vertices(pred), "pred", pred_scale)
    g, sg = _normalize(_points(gt, n_points, seed), _vertices(gt), "gt", gt_scale)
    tree = cKDTree(g)
    icp = icp_align(p, g, gt_tree=tree)
    moved = p @ icp.rotation.T + icp.translation
    da, _ = tree.query(moved)
    db, _ = cKDTree(moved).query(g)
    return Reconstruction(float(np.mean(da * da) + np.mean(db * db)), icp, sp, sg)


def _points(geom, n, seed):
    if isinstance(geom, tuple) and len(geom) == 2 and geom[0] == "points":
        return _nonempty(geom[1], "sampled")
    return sample_surface(geom, n, seed)


# --------------------------------------------------------------------- errors

def rotation_angle_deg(R) -> float:
    c = (np.trace(np.asarray(R)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_errors(R, T, pred_maxdim: float, gt_maxdim: float):
    """(rotation deg, translation, scale error) from an alignment transform."""
    if not (pred_maxdim > 0 and gt_maxdim > 0):
        raise ValueError("max dimensions must be positive")
    r = gt_maxdim / pred_maxdim
    if r > 1.0:
        r = 1.0 / r
    return rotation_angle_deg(R), float(np.linalg.norm(T)), float(1.0 - r)


def _unit(d, name):
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError(f"{name} direction is not a unit vector")
    return d


def motion_errors(pred: MotionParams, gt: MotionParams, t: int):
    """(origin distance to gt axis line, axis deg, direction deg, state deg)."""
    dp = _unit(pred.direction, "predicted")
    dg = _unit(gt.direction, "ground-truth")
    v = np.asarray(pred.origin) - np.asarray(gt.origin)
    origin = float(np.linalg.norm(v - (v @ dg) * dg))
    c = float(np.clip(dp @ dg, -1.0, 1.0))
    axis = float(np.degrees(np.arccos(min(abs(c), 1.0))))
    direction = float(np.degrees(np.arccos(c)))
    state = abs(pred.states[t] - gt.states[t])
    return origin, axis, direction, float(state)


def body_extent(model: ArticulatedModel, parts) -> float:
    """Max dimension of posed ``parts`` measured in the model's own frame.

    An axis-aligned extent taken in camera coordinates would change with the
    object's rotation; undoing the rotation keeps the normalisation pose-free.
    """
    R = axis_angle_to_matrix(model.pose.rotation)
    return max_dimension(np.concatenate([np.asarray(p) for p in parts]) @ R)


def frame_eval(pred: ArticulatedModel, gt: ArticulatedModel, t: int,
               n_points: int = N_SURFACE_POINTS, seed: int = 0) -> FrameMetrics:
    """All per-frame errors of ``pred`` against ``gt`` at frame ``t``.

    The predicted hinge is carried into the normalised ground-truth frame by
    the object alignment before the motion errors are taken.
    """
    pb, pm = assemble(pred, t)
    gb, gm = assemble(gt, t)
    obj = reconstruction_error([pb, pm], [gb, gm], n_points, seed,
                               body_extent(pred, [pb, pm]), body_extent(gt, [gb, gm]))
    mov = reconstruction_error(pm, gm, n_points, seed + 2,
                               max(pred.moving.dims), max(gt.moving.dims))
    rot, trans, scale = pose_errors(obj.icp.rotation, obj.icp.translation, obj.pred_maxdim, obj.gt_maxdim)
    po, pd = pred.hinge_line()
    go, gd = gt.hinge_line()
    R, T = obj.icp.rotation, obj.icp.translation
    mp = MotionParams(tuple(R @ (po / obj.pred_maxdim) + T), tuple(_renorm(R @ pd)),
                      (float(np.degrees(pred.angles[t])),))
    mg = MotionParams(tuple(go / obj.gt_maxdim), tuple(_renorm(gd)), (float(np.degrees(gt.angles[t])),))
    o, a, d, s = motion_errors(mp, mg, 0)
    return FrameMetrics(obj.cd, mov.cd, rot, trans, scale, o, a, d, s)


def _renorm(v):
    return v / np.linalg.norm(v)


def video_eval(pred: ArticulatedModel, gt: ArticulatedModel, n_points: int = N_SURFACE_POINTS,
               seed: int = 0) -> list[FrameMetrics]:
    if pred.n_frames != gt.n_frames:
        raise ValueError(f"prediction has {pred.n_frames} frames, ground truth {gt.n_frames}")
    return [frame_eval(pred, gt, t, n_points, seed) for t in range(gt.n_frames)]


# --------------------------------------------------------------------- aggregation

def frame_passes(m: np.ndarray, th: Thresholds, conditioned: bool = True,
                 full_motion: bool = True) -> dict[str, np.ndarray]:
    """Boolean pass arrays for an (F, 9) block of frame errors (FrameMetrics order)."""
    m = np.atleast_2d(m)
    obj = m[:, 0] < th.cd
    mov = m[:, 1] < th.cd
    rot = m[:, 2] < th.rot_deg
    trans = m[:, 3] < th.trans
    scale = m[:, 4] < th.scale
    origin = m[:, 5] < th.origin
    axis = m[:, 6] < th.axis_deg
    direction = m[:, 7] < th.dir_deg
    state = m[:, 8] < th.state_deg
    acc_r = obj & mov
    acc_p = rot & trans & scale
    acc_rp = acc_r & acc_p
    gate = acc_rp if conditioned else np.ones_like(acc_rp)
    o = origin & gate
    oa = o & axis
    oad = oa & direction
    acc_m = axis & direction & state & gate
    rpoa = acc_rp & origin & axis
    acc_rpm = acc_rp & (axis & direction & state if full_motion else state)
    return dict(object=obj, moving=mov, AccR=acc_r, rot=rot, trans=trans, scale=scale, AccP=acc_p,
                O=o, OA=oa, OAD=oad, AccM=acc_m, AccRP=acc_rp, RPOA=rpoa, AccRPM=acc_rpm)


@dataclass
class BenchReport:
    thresholds: Thresholds
    video_ids: list[str]
    per_video_errors: np.ndarray        # (V, 9)
    per_video_accuracy: np.ndarray      # (V, 14) in percent
    error_mean: np.ndarray
    error_se: np.ndarray
    accuracy: np.ndarray                # (14,) percent
    per_category: dict[str, dict[str, float]] = field(default_factory=dict)
    conditioned: bool = True
    full_motion: bool = True

    def error_dict(self) -> dict[str, tuple[float, float]]:
        return {h: (float(m), float(s)) for h, m, s in zip(TABLE1_HEADERS, self.error_mean, self.error_se)}

    def accuracy_dict(self) -> dict[str, float]:
        return {h: float(a) for h, a in zip(table2_headers(self.thresholds), self.accuracy)}

    def to_json(self) -> dict:
        th = self.thresholds
        return {
            "version": REPORT_VERSION,
            "thresholds": asdict(th),
            "conditioned_motion": self.conditioned,
            "full_motion_in_AccRPM": self.full_motion,
            "errors": {h: {"mean": m, "se": s} for h, (m, s) in self.error_dict().items()},
            "accuracy": self.accuracy_dict(),
            "per_category": self.per_category,
            "videos": [
                {"id": vid,
                 "errors": dict(zip(ERROR_FIELDS, map(float, e))),
                 "accuracy": dict(zip(table2_headers(th), map(float, a)))}
                for vid, e, a in zip(self.video_ids, self.per_video_errors, self.per_video_accuracy)
            ],
        }


def aggregate(videos: Mapping[str, Sequence[FrameMetrics] | np.ndarray], th: Thresholds = Thresholds(),
              conditioned: bool = True, full_motion: bool = True,
              categories: Mapping[str, str] | None = None) -> BenchReport:
    """Frame -> video -> dataset averaging of errors and accuracies.

    Videos are processed in sorted id order so the result does not depend on
    the mapping's insertion order.
    """
    if not videos:
        raise ValueError("no videos to aggregate")
    ids = sorted(videos)
    errs, accs = [], []
    for vid in ids:
        m = _as_block(videos[vid])
        if len(m) == 0:
            raise ValueError(f"video {vid!r} has no frames")
        errs.append(m.mean(0))
        p = frame_passes(m, th, conditioned, full_motion)
        accs.append([100.0 * p[k].mean() for k in ACCURACY_KEYS])
    errs = np.array(errs)
    accs = np.array(accs)
    n = len(ids)
    se = errs.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(errs.shape[1])
    per_cat = {}
    if categories:
        for cat in sorted(set(categories[v] for v in ids)):
            sel = [i for i, v in enumerate(ids) if categories[v] == cat]
            per_cat[cat] = {"videos": len(sel), "AccR": float(accs[sel, 2].mean())}
    return BenchReport(th, ids, errs, accs, errs.mean(0), se, accs.mean(0), per_cat, conditioned, full_motion)


def _as_block(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return np.atleast_2d(frames).astype(float)
    return np.array([f.as_array() for f in frames], dtype=float).reshape(-1, len(ERROR_FIELDS))


# --------------------------------------------------------------------- reports

def csv_header(th: Thresholds = Thresholds()) -> list[str]:
    return ["Method", *TABLE1_HEADERS, *table2_headers(th)]


def report_csv(rows: Mapping[str, BenchReport] | Sequence[tuple[str, BenchReport]]) -> str:
    """CSV text with one row per method; errors as ``mean ± se``."""
    items = list(rows.items()) if isinstance(rows, Mapping) else list(rows)
    if not items:
        raise ValueError("no reports")
    th = items[0][1].thresholds
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(th))
    for name, rep in items:
        if rep.thresholds != th:
            raise ValueError("all rows must share thresholds")
        errs = [f"{m:.4f} ± {s:.4f}" for m, s in zip(rep.error_mean, rep.error_se)]
        accs = [f"{a:.2f}" for a in rep.accuracy]
        w.writerow([name, *errs, *accs])
    return buf.getvalue()


def report_schema(th: Thresholds = Thresholds()) -> dict:
    return {
        "version": REPORT_VERSION,
        "columns": csv_header(th),
        "error_columns": {"headers": list(TABLE1_HEADERS), "format": "mean ± standard error",
                          "angles": "degrees"},
        "accuracy_columns": {"headers": list(table2_headers(th)), "format": "percent of frames",
                             "thresholds": asdict(th)},
    }


SWEEPS = {
    "cd": (0.25, 0.5, 1.0, 1.5, 2.0),
    "origin": (0.25, 0.5, 1.0, 1.5, 2.0),
    "scale": (0.2, 0.3, 0.4, 0.5, 0.6),
    "rot_deg": (5.0, 10.0, 15.0, 20.0, 25.0),
    "axis_deg": (5.0, 10.0, 15.0, 20.0, 25.0),
    "dir_deg": (5.0, 10.0, 15.0, 20.0, 25.0),
    "state_deg": (5.0, 10.0, 15.0, 20.0, 25.0),
}
_SWEEP_GROUPS = {  # thresholds that move together in one series
    "reconstruction": ("cd",),
    "origin": ("origin",),
    "scale": ("scale",),
    "angle": ("rot_deg", "axis_deg", "dir_deg", "state_deg"),
}


def threshold_sweep(videos, base: Thresholds = Thresholds(), conditioned: bool = True,
                    full_motion: bool = True) -> dict:
    """Accuracy-vs-threshold series; one series per threshold group."""
    out = {}
    for group, names in _SWEEP_GROUPS.items():
        values = SWEEPS[names[0]]
        series = {k: [] for k in ("AccR", "AccP", "AccM", "AccRP", "AccRPM")}
        for v in values:
            th = replace(base, **{n: v for n in names})
            acc = dict(zip(ACCURACY_KEYS, aggregate(videos, th, conditioned, full_motion).accuracy))
            for k in series:
                series[k].append(float(acc[k]))
        out[group] = {"thresholds": list(values), "accuracy": series}
    return out


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
