"""Pinhole projection and soft silhouettes of cuboids.

A cuboid's silhouette is the convex hull of its 8 projected corners. Soft
occupancy at a pixel centre is ``sigmoid(-sd / tau)`` with ``sd`` the exact
signed Euclidean distance to that hull (negative inside).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels

BEHIND_CAMERA_PENALTY = 1e4
Z_NEAR = 1e-3


class RenderError(ValueError):
    """Raised when a cuboid cannot be rendered (corner behind the camera)."""


class DegenerateHullError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class SoftMask:
    """H x W occupancy grid with values in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("mask must be 2-D")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binarize(self, level: float = 0.5) -> "SoftMask":
        return SoftMask((self.values >= level).astype(float))

    def __eq__(self, other):
        return isinstance(other, SoftMask) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class RenderConfig:
    tau: float = 1.0
    parts: tuple[str, ...] = ("object", "base", "moving")

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        bad = set(self.parts) - {"object", "base", "moving"}
        if bad:
            raise ValueError(f"unknown mask parts {sorted(bad)}")


def project(K: CameraIntrinsics, p) -> np.ndarray:
    """Project camera-frame point(s) to pixel coordinates."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise RenderError("point behind camera (z <= 0)")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def convex_hull_2d(points) -> np.ndarray:
    """Counterclockwise (positive signed area) convex hull vertices."""
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateHullError("need at least 3 two-dimensional points")
    scale = max(1.0, float(np.ptp(pts, axis=0).max()))
    idx, n = _kernels.hull_indices(pts, 1e-12 * scale * scale)
    if n < 3:
        raise DegenerateHullError("points are collinear")
    return pts[idx]


def signed_distance_polygon(p, poly) -> np.ndarray:
    """Signed distance from point(s) to a convex CCW polygon (negative inside)."""
    p = np.asarray(p, dtype=float)
    poly = np.asarray(poly, dtype=float)
    a = poly
    e = np.roll(poly, -1, axis=0) - poly
    d = p[..., None, :] - a
    t = np.clip(np.einsum("...kj,kj->...k", d, e) / np.einsum("kj,kj->k", e, e), 0.0, 1.0)
    q = d - t[..., None] * e
    dist = np.sqrt(np.min(np.einsum("...kj,...kj->...k", q, q), axis=-1))
    cross = e[:, 0] * d[..., 1] - e[:, 1] * d[..., 0]
    inside = np.all(cross >= 0.0, axis=-1)
    return np.where(inside, -dist, dist)


def sigmoid_neg(sd: np.ndarray, tau: float) -> np.ndarray:
    """sigmoid(-sd / tau), evaluated in place on a copy."""
    out = sd * (1.0 / tau) if tau != 1.0 else sd.copy()
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


class HullRaster:
    """Forward rasterization of a batch of projected corner sets.

    Keeps what the backward pass needs: hull polygons, per-pixel signed
    distance, closest-feature codes and occupancies.
    """

    def __init__(self, uv: np.ndarray, width: int, height: int, tau: float):
        uv = np.asarray(uv, dtype=float).reshape(-1, 8, 2)
        M = len(uv)
        self.width, self.height, self.tau = width, height, tau
        self.polys = np.zeros((M, 8, 2))
        self.nverts = np.zeros(M, np.int64)
        self.hulls = []
        for m in range(M):
            scale = max(1.0, float(np.ptp(uv[m], axis=0).max()))
            idx, n = _kernels.hull_indices(np.ascontiguousarray(uv[m]), 1e-12 * scale * scale)
            if n < 3:
                raise DegenerateHullError("projected cuboid has a degenerate silhouette")
            self.hulls.append(idx)
            self.nverts[m] = n
            self.polys[m, :n] = uv[m][idx]
        P = width * height
        self.sd = np.empty((M, P))
        self.code = np.empty((M, P), np.int8)
        _kernels.sd_fields(self.polys, self.nverts, height, width, self.sd, self.code)
        self.occ = sigmoid_neg(self.sd, tau)

    def vjp_sd(self, gsd: np.ndarray) -> np.ndarray:
        """Pull back d/d(sd) (M, P) to d/d(uv) of the 8 corners, shape (M, 8, 2)."""
        M = len(self.polys)
        gpoly = np.empty((M, 8, 2))
        _kernels.vertex_grads(self.polys, self.nverts, self.width, self.code,
                              np.ascontiguousarray(gsd, dtype=float), gpoly)
        out = np.zeros((M, 8, 2))
        for m, idx in enumerate(self.hulls):
            out[m, idx] = gpoly[m, : len(idx)]
        return out

    def vjp_occ(self, gocc: np.ndarray) -> np.ndarray:
        occ = self.occ
        return self.vjp_sd(-np.asarray(gocc) * occ * (1.0 - occ) / self.tau)


def soft_silhouette(corners, K: CameraIntrinsics, cfg: RenderConfig = RenderConfig()) -> SoftMask:
    corners = np.asarray(corners, dtype=float)
    if np.any(corners[:, 2] <= 0):
        raise RenderError("cuboid corner behind camera")
    uv = project(K, corners)
    r = HullRaster(uv, K.width, K.height, cfg.tau)
    return SoftMask(r.occ[0].reshape(K.height, K.width))


def soft_union(a: SoftMask, b: SoftMask) -> SoftMask:
    if a.values.shape != b.values.shape:
        raise ValueError(f"mask shapes differ: {a.values.shape} vs {b.values.shape}")
    return SoftMask(1.0 - (1.0 - a.values) * (1.0 - b.values))


def render_parts(base_corners, moving_corners, K: CameraIntrinsics, cfg: RenderConfig = RenderConfig()):
    """Masks for base, moving part and their union for one frame."""
    b = soft_silhouette(base_corners, K, cfg)
    m = soft_silhouette(moving_corners, K, cfg)
    return {"base": b, "moving": m, "object": soft_union(b, m)}


def render_with_grad(params, t: int, K: CameraIntrinsics, cfg: RenderConfig, edge_id: int):
    """Render frame ``t`` of a flat parameter vector and return a pullback.

    Returns ``(masks, vjp)`` where ``masks`` maps each requested part to a
    SoftMask and ``vjp(cotangents)`` maps a dict of per-part dL/d(occupancy)
    images to dL/d(params).
    """
    from . import diffgeom

    vec = np.asarray(params, dtype=float)
    n = len(vec) - diffgeom.N_FIXED
    if not 0 <= t < n:
        raise IndexError(f"frame {t} outside 0..{n - 1}")
    dummy_hand = np.zeros((n, 3))
    uv_b, z_b, uv_m, z_m, *_ = diffgeom.forward(vec, K.vector, dummy_hand, np.zeros(n), 0.0, 0.0,
                                                edge_id=edge_id)
    z_b, z_m = np.asarray(z_b), np.asarray(z_m)[t]
    if np.any(z_b <= Z_NEAR) or np.any(z_m <= Z_NEAR):
        raise RenderError("cuboid corner behind camera")
    uv = np.stack([np.asarray(uv_b), np.asarray(uv_m)[t]])
    r = HullRaster(uv, K.width, K.height, cfg.tau)
    H, W = K.height, K.width
    ob, om = r.occ[0], r.occ[1]
    obj = 1.0 - (1.0 - ob) * (1.0 - om)
    full = {"base": ob, "moving": om, "object": obj}
    masks = {k: SoftMask(full[k].reshape(H, W)) for k in cfg.parts}

    def vjp(cotangents):
        gb = np.zeros(H * W)
        gm = np.zeros(H * W)
        for part, g in cotangents.items():
            if part not in cfg.parts:
                raise KeyError(f"part {part!r} was not rendered")
            g = np.asarray(g, dtype=float).reshape(-1)
            if part == "base":
                gb += g
            elif part == "moving":
                gm += g
            else:
                gb += g * (1.0 - om)
                gm += g * (1.0 - ob)
        guv = r.vjp_occ(np.stack([gb, gm]))
        g_uv_m = np.zeros((n, 8, 2))
        g_uv_m[t] = guv[1]
        return np.asarray(diffgeom.backward(vec, K.vector, dummy_hand, np.zeros(n), 0.0, 0.0,
                                            guv[0], g_uv_m, np.zeros(3), edge_id=edge_id))

    return masks, vjp


def save_mask_png(mask: SoftMask, path) -> None:
    img = np.rint(mask.values * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(Path(path))


def load_mask_png(path) -> SoftMask:
    with Image.open(Path(path)) as im:
        im.load()
        if im.mode != "L":
            im = im.convert("L")
        return SoftMask(np.asarray(im, dtype=float) / 255.0)
