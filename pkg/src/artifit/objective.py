"""Loss terms for fitting the two-cuboid model to a mask video.

Two evaluation paths share the pixel kernels:

* module-level ``loss_*`` functions work on :class:`ArticulatedModel` values
  and plain masks (reference path, used for reporting and tests);
* :class:`Objective` evaluates value and gradient w.r.t. the flat parameter
  vector for the optimizer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels, diffgeom
from .geometry import ArticulatedModel, assemble, surface_centroid
from .metrics import kabsch
from .render import (
    BEHIND_CAMERA_PENALTY, Z_NEAR, CameraIntrinsics, RenderConfig, RenderError, SoftMask,
    project, sigmoid_neg, soft_silhouette, soft_union,
)

PARTS = ("object", "base", "moving")
_DUMMY_UV = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0, 0], [1, 0], [0, 1], [1, 1]], float) - 50.0


@dataclass(frozen=True, eq=False)
class HumanObservation:
    left_hand: np.ndarray   # (N, 3)
    right_hand: np.ndarray  # (N, 3)
    mean_z: np.ndarray      # (N,)

    def __post_init__(self):
        for name in ("left_hand", "right_hand", "mean_z"):
            a = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in human {name}")
            object.__setattr__(self, name, a)
        n = len(self.mean_z)
        if self.left_hand.shape != (n, 3) or self.right_hand.shape != (n, 3):
            raise ValueError("human observation needs one record per frame")

    @property
    def n_frames(self) -> int:
        return len(self.mean_z)

    def hand(self, which: str) -> np.ndarray:
        if which == "left":
            return self.left_hand
        if which == "right":
            return self.right_hand
        raise ValueError(f"hand must be 'left' or 'right', got {which!r}")


@dataclass(frozen=True)
class LossConfig:
    lambda_depth: float = 0.1
    w_sil: float = 1.0
    w_dice: float = 1.0
    w_over: float = 1.0
    w_depth: float = 1.0
    w_contact: float = 1.0
    eps_pen: float = 0.01

    def __post_init__(self):
        if min(self.w_sil, self.w_dice, self.w_over, self.w_depth, self.w_contact) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_depth < 0 or self.eps_pen < 0:
            raise ValueError("lambda_depth and eps_pen must be non-negative")

    def only(self, term: str) -> "LossConfig":
        """Copy with unit weight on one term and zero on the rest."""
        w = {k: 0.0 for k in ("w_sil", "w_dice", "w_over", "w_depth", "w_contact")}
        w["w_" + term] = 1.0
        return LossConfig(self.lambda_depth, eps_pen=self.eps_pen, **w)


@dataclass(frozen=True)
class LossBreakdown:
    sil: float
    dice: float
    over: float
    depth: float
    contact: float
    total: float

    @classmethod
    def combine(cls, sil, dice, over, depth, contact, cfg: LossConfig = LossConfig()) -> "LossBreakdown":
        total = (cfg.w_sil * sil + cfg.w_dice * dice + cfg.w_over * over
                 + cfg.w_depth * depth + cfg.w_contact * contact)
        return cls(float(sil), float(dice), float(over), float(depth), float(contact), float(total))

    def to_dict(self) -> dict:
        return asdict(self)


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, SoftMask) else np.asarray(m, dtype=float)


def _check_pair(gt, proj):
    if len(gt) != len(proj):
        raise ValueError(f"sequence lengths differ: {len(gt)} vs {len(proj)}")
    if len(gt) == 0:
        raise ValueError("empty mask sequence")


def _per_part(fn, gt, proj):
    if isinstance(gt, Mapping):
        if set(gt) != set(proj):
            raise ValueError("gt and projected masks cover different parts")
        return sum(fn(gt[k], proj[k]) for k in gt)
    return fn(gt, proj)


def _sil_single(gt, proj) -> float:
    _check_pair(gt, proj)
    total = 0.0
    for g, p in zip(gt, proj):
        g, p = _values(g), _values(p)
        if g.shape != p.shape:
            raise ValueError(f"mask shapes differ: {g.shape} vs {p.shape}")
        total += float(np.sum((g - p) ** 2))
    return total / len(gt)


def loss_sil(gt, proj) -> float:
    """Mean over frames of the pixel-summed squared mask difference.

    Pass sequences for a single part, or dicts ``part -> sequence`` to sum
    over object, base and moving masks.
    """
    return _per_part(_sil_single, gt, proj)


def soft_iou(a, b) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = float(np.sum(a * b))
    union = float(np.sum(a + b - a * b))
    if union <= 0.0:
        return 1.0
    return inter / union


def _dice_single(gt, proj) -> float:
    _check_pair(gt, proj)
    return sum(1.0 - soft_iou(g, p) for g, p in zip(gt, proj)) / len(gt)


def loss_dice(gt, proj) -> float:
    """Mean over frames of 1 - soft IoU; dict inputs sum over parts."""
    return _per_part(_dice_single, gt, proj)


def _box_axes(c):
    ax = np.stack([c[4] - c[0], c[2] - c[0], c[1] - c[0]])
    return ax / np.linalg.norm(ax, axis=1, keepdims=True)


def penetration_depth(a, b) -> float:
    """SAT penetration depth of two posed boxes given as (8, 3) corners.

    Tests the 3 + 3 face normals and the non-degenerate edge cross products;
    0 when some axis separates, else the smallest interval overlap.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    fa, fb = _box_axes(a), _box_axes(b)
    axes = [*fa, *fb]
    for u in fa:
        for v in fb:
            c = np.cross(u, v)
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    best = np.inf
    for ax in axes:
        pa, pb = a @ ax, b @ ax
        overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
        if overlap <= 0.0:
            return 0.0
        best = min(best, overlap)
    return float(best)


def loss_overlap(model: ArticulatedModel, cfg: LossConfig = LossConfig()) -> float:
    terms = []
    for t in range(model.n_frames):
        base, moving = assemble(model, t)
        terms.append(max(penetration_depth(base, moving) - cfg.eps_pen, 0.0) ** 2)
    return float(np.mean(terms))


def object_mean_z(model: ArticulatedModel, t: int) -> float:
    """Mean camera depth of the object surface at frame ``t``."""
    return float(surface_centroid(assemble(model, t))[2])


def loss_depth(model: ArticulatedModel, human: HumanObservation, cfg: LossConfig = LossConfig()) -> float:
    if human.n_frames != model.n_frames:
        raise ValueError(f"human has {human.n_frames} records for {model.n_frames} frames")
    terms = [max(abs(object_mean_z(model, t) - human.mean_z[t]) - cfg.lambda_depth, 0.0)
             for t in range(model.n_frames)]
    return float(np.mean(terms))


def contact_residual(points, hand) -> float:
    """min over rigid (R, T) of sum_t |R v_t + T - h_t|^2."""
    v = np.asarray(points, dtype=float)
    h = np.asarray(hand, dtype=float)
    a, b = v - v.mean(0), h - h.mean(0)
    if np.sum(a * a) < 1e-12 or np.sum(b * b) < 1e-12:
        R, T = np.eye(3), h.mean(0) - v.mean(0)
    else:
        # collinear paths leave the rotation about the line free; any SVD minimiser is exact
        R, T = kabsch(v, h, strict=False)
    return float(np.sum((v @ R.T + T - h) ** 2))


def moving_centroids(model: ArticulatedModel) -> np.ndarray:
    return np.array([assemble(model, t)[1].mean(axis=0) for t in range(model.n_frames)])


def loss_contact(model: ArticulatedModel, human: HumanObservation, hand: str = "left") -> float:
    if model.n_frames < 3:
        raise ValueError("contact loss needs at least 3 frames")
    if human.n_frames != model.n_frames:
        raise ValueError(f"human has {human.n_frames} records for {model.n_frames} frames")
    return contact_residual(moving_centroids(model), human.hand(hand))


def render_model(model: ArticulatedModel, K: CameraIntrinsics, cfg: RenderConfig = RenderConfig()):
    """Per-part soft mask sequences; a frame that cannot be rendered is None."""
    out = {k: [] for k in PARTS}
    for t in range(model.n_frames):
        base, moving = assemble(model, t)
        try:
            b = soft_silhouette(base, K, cfg)
            m = soft_silhouette(moving, K, cfg)
        except RenderError:
            for k in PARTS:
                out[k].append(None)
            continue
        out["base"].append(b)
        out["moving"].append(m)
        out["object"].append(soft_union(b, m))
    return out


def loss_total(model: ArticulatedModel, video, cfg: LossConfig = LossConfig(), hand: str = "left",
               render_cfg: RenderConfig = RenderConfig()) -> LossBreakdown:
    """Full objective at a model (reference path)."""
    proj = render_model(model, video.camera, render_cfg)
    n = model.n_frames
    sil = dice = 0.0
    for t in range(n):
        if proj["object"][t] is None:
            sil += BEHIND_CAMERA_PENALTY / n
            continue
        for k in PARTS:
            g, p = video.masks[k][t], proj[k][t].values
            sil += float(np.sum((g - p) ** 2)) / n
            dice += (1.0 - soft_iou(g, p)) / n
    return LossBreakdown.combine(
        sil, dice, loss_overlap(model, cfg), loss_depth(model, video.human, cfg),
        loss_contact(model, video.human, hand), cfg)


class Objective:
    """Value and gradient of the full objective w.r.t. the flat parameter vector.

    ``video`` needs ``masks`` (dict part -> (N, H, W) array), ``camera`` and
    ``human`` attributes.
    """

    def __init__(self, video, edge_id: int, hand: str = "left", cfg: LossConfig = LossConfig(),
                 render_cfg: RenderConfig = RenderConfig()):
        self.edge_id = edge_id
        self.hand_name = hand
        self.cfg = cfg
        self.tau = render_cfg.tau
        K = video.camera
        self.K = K
        self.cam = K.vector
        self.H, self.W = K.height, K.width
        self.N = n = len(video.masks["object"])
        P = self.H * self.W
        self.gt = {k: np.ascontiguousarray(np.asarray(video.masks[k], dtype=float).reshape(n, P)) for k in PARTS}
        self.hand = np.asarray(video.human.hand(hand), dtype=float)
        self.human_z = np.asarray(video.human.mean_z, dtype=float)
        if len(self.human_z) != n:
            raise ValueError("human record count does not match frame count")
        # scratch buffers reused across evaluations
        self._uv = np.empty((n + 1, 8, 2))
        self._polys = np.zeros((n + 1, 8, 2))
        self._nverts = np.zeros(n + 1, np.int64)
        self._idx = np.zeros((n + 1, 8), np.int64)
        self._sd = np.empty((n + 1, P))
        self._code = np.empty((n + 1, P), np.int8)
        self._occ = np.empty((n + 1, P))
        self._ghull = np.empty((n + 1, 8, 2))
        self._guv = np.empty((n + 1, 8, 2))

    def n_params(self) -> int:
        return diffgeom.N_FIXED + self.N

    def evaluate(self, vec, grad: bool = True, cfg: LossConfig | None = None):
        """Return ``(LossBreakdown, gradient or None)`` at ``vec``."""
        cfg = cfg or self.cfg
        n = self.N
        vec = np.asarray(vec, dtype=float)
        uv_b, z_b, uv_m, z_m, over, depth, contact = diffgeom.forward(
            vec, self.cam, self.hand, self.human_z, cfg.lambda_depth, cfg.eps_pen, edge_id=self.edge_id)
        z_b, z_m = np.asarray(z_b), np.asarray(z_m)
        uv = self._uv
        uv[0] = uv_b
        uv[1:] = uv_m
        base_ok = bool(np.all(z_b > Z_NEAR)) and bool(np.all(np.isfinite(uv[0])))
        valid = np.all(z_m > Z_NEAR, axis=1) & np.all(np.isfinite(uv[1:]), axis=(1, 2))
        if not base_ok:
            valid[:] = False
            uv[0] = _DUMMY_UV
        # failed frames are rasterized as a tiny dummy square and excluded via ``valid``
        uv[1:][~valid] = _DUMMY_UV
        _kernels.hulls_batch(uv, self._polys, self._nverts, self._idx)
        valid &= self._nverts[1:] >= 3
        if self._nverts[0] < 3:
            valid[:] = False
        _kernels.sd_fields(self._polys, self._nverts, self.H, self.W, self._sd, self._code)
        self._occ[:] = sigmoid_neg(self._sd, self.tau)
        occ_b, occ_m = self._occ[0], self._occ[1:]
        g = self.gt
        sums = _kernels.mask_sums(occ_b, occ_m, g["object"], g["base"], g["moving"], valid)
        n_bad = int(n - valid.sum())
        sil = (sums[:, 0] + sums[:, 1] + sums[:, 2]).sum() / n + BEHIND_CAMERA_PENALTY * n_bad / n
        dice = 0.0
        for i, u in ((3, 4), (5, 6), (7, 8)):
            iou = np.where(sums[:, u] > 0, sums[:, i] / np.where(sums[:, u] > 0, sums[:, u], 1.0), 1.0)
            dice += float(np.sum((1.0 - iou)[valid])) / n
        loss = LossBreakdown.combine(sil, dice, float(over), float(depth), float(contact), cfg)
        if not grad:
            return loss, None
        if cfg.w_sil or cfg.w_dice:
            _kernels.mask_loss_backward(occ_b, occ_m, g["object"], g["base"], g["moving"], valid, sums,
                                        cfg.w_sil, cfg.w_dice, 1.0 / self.tau, self._polys, self._nverts,
                                        self.W, self._code, self._ghull)
            _kernels.scatter_hull_grads(self._ghull, self._idx, self._nverts, self._guv)
        else:
            self._guv[:] = 0.0
        weights = np.array([cfg.w_over, cfg.w_depth, cfg.w_contact])
        gvec = diffgeom.backward(vec, self.cam, self.hand, self.human_z, cfg.lambda_depth, cfg.eps_pen,
                                 self._guv[0], self._guv[1:], weights, edge_id=self.edge_id)
        return loss, np.asarray(gvec)

    def masks(self, vec):
        """Rendered (object, base, moving) occupancy for ``vec`` as (N, H, W) arrays."""
        self.evaluate(vec, grad=False)
        n, H, W = self.N, self.H, self.W
        b = self._occ[0].reshape(H, W)
        m = self._occ[1:].reshape(n, H, W)
        return {"object": 1.0 - (1.0 - b) * (1.0 - m), "base": np.broadcast_to(b, m.shape), "moving": m}
