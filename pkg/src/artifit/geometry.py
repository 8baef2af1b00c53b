"""Cuboid geometry, revolute kinematics and surface sampling.

Frames: the object frame has the base cuboid centred at the origin with its
front face at ``z = -depth/2``. Camera frame follows the pinhole convention
(x right, y down, z forward), so with identity rotation the front face looks
at the camera.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

EDGE_NAMES = ("left", "right", "top", "bottom")

# sign pattern of the 8 box corners, corner index = 4*bx + 2*by + bz
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))

# 12 outward-wound triangles over CORNER_SIGNS ordering
BOX_TRIANGLES = np.array([
    [0, 1, 3], [0, 3, 2],  # x = -
    [4, 6, 7], [4, 7, 5],  # x = +
    [0, 4, 5], [0, 5, 1],  # y = -
    [2, 3, 7], [2, 7, 6],  # y = +
    [0, 2, 6], [0, 6, 4],  # z = -
    [1, 5, 7], [1, 7, 3],  # z = +
])


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned box centred at its local origin."""
    dims: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.dims, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise GeometryError(f"cuboid dims must be 3 positive numbers, got {self.dims}")
        object.__setattr__(self, "dims", tuple(float(x) for x in d))

    def corners(self) -> np.ndarray:
        return CORNER_SIGNS * (np.asarray(self.dims) / 2.0)


@dataclass(frozen=True)
class PoseParams:
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # axis-angle, radians
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        r = canonical_axis_angle(np.asarray(self.rotation, dtype=float))
        t = np.asarray(self.translation, dtype=float)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t)) and t.shape == (3,)):
            raise GeometryError("pose must be finite 3-vectors")
        object.__setattr__(self, "rotation", tuple(float(x) for x in r))
        object.__setattr__(self, "translation", tuple(float(x) for x in t))

    @property
    def matrix(self) -> np.ndarray:
        return axis_angle_to_matrix(self.rotation)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.matrix.T + np.asarray(self.translation)


@dataclass(frozen=True)
class HingeSpec:
    edge_id: int
    offset: float = 0.0
    extent: float = 1.0

    def __post_init__(self):
        if self.edge_id not in range(4):
            raise GeometryError(f"edge_id must be 0..3, got {self.edge_id}")
        if not (0.0 <= self.offset <= 1.0 and 0.0 < self.extent <= 1.0):
            raise GeometryError(f"bad hinge offset/extent ({self.offset}, {self.extent})")
        if self.offset + self.extent > 1.0 + 1e-12:
            raise GeometryError("hinge offset + extent must be <= 1")


@dataclass(frozen=True)
class MotionParams:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    states: tuple[float, ...] = ()  # degrees

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise GeometryError("motion direction must be a unit vector")
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "direction", tuple(float(x) for x in d))
        object.__setattr__(self, "states", tuple(float(x) for x in self.states))


def edge_frame(base_dims, edge_id: int):
    """Hinge frame of a front-face edge of a base box.

    Returns ``(start, along, across, normal, length)``: the edge start corner,
    the unit hinge direction, the unit in-face direction pointing across the
    face, the outward face normal, and the edge length. ``along`` is chosen as
    ``across x normal`` so that a positive angle swings the moving part out of
    the face towards the camera.
    """
    w, h, d = (float(x) for x in base_dims)
    z = -d / 2.0
    normal = np.array([0.0, 0.0, -1.0])
    if edge_id == 0:
        start, across, length = np.array([-w / 2, -h / 2, z]), np.array([1.0, 0, 0]), h
    elif edge_id == 1:
        start, across, length = np.array([w / 2, h / 2, z]), np.array([-1.0, 0, 0]), h
    elif edge_id == 2:
        start, across, length = np.array([w / 2, -h / 2, z]), np.array([0, 1.0, 0]), w
    elif edge_id == 3:
        start, across, length = np.array([-w / 2, h / 2, z]), np.array([0, -1.0, 0]), w
    else:
        raise GeometryError(f"edge_id must be 0..3, got {edge_id}")
    along = np.cross(across, normal)
    return start, along, across, normal, length


def face_width(base_dims, edge_id: int) -> float:
    """Extent of the front face measured across a given edge."""
    return float(base_dims[1] if edge_id in (2, 3) else base_dims[0])


@dataclass(frozen=True)
class ArticulatedModel:
    """Two cuboids joined by a revolute hinge on a front edge of the base.

    ``moving.dims`` is ordered (along hinge, across face, thickness); the first
    entry is tied to ``hinge.extent`` times the edge length.
    """
    base: Cuboid
    moving: Cuboid
    hinge: HingeSpec
    pose: PoseParams
    angles: tuple[float, ...] = field(default=())  # radians, one per frame

    def __post_init__(self):
        *_, length = edge_frame(self.base.dims, self.hinge.edge_id)
        if abs(self.moving.dims[0] - self.hinge.extent * length) > 1e-9 * max(1.0, length):
            raise GeometryError("moving part length must equal hinge extent x edge length")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

    @classmethod
    def build(cls, base_dims, width, thickness, hinge: HingeSpec, pose: PoseParams, angles=()):
        *_, length = edge_frame(base_dims, hinge.edge_id)
        moving = Cuboid((hinge.extent * length, float(width), float(thickness)))
        return cls(Cuboid(tuple(base_dims)), moving, hinge, pose, tuple(angles))

    @property
    def n_frames(self) -> int:
        return len(self.angles)

    def hinge_line(self):
        """World-space (origin, unit direction) of the hinge axis."""
        start, along, *_ , length = edge_frame(self.base.dims, self.hinge.edge_id)
        origin = start + self.hinge.offset * length * along
        R = self.pose.matrix
        return R @ origin + np.asarray(self.pose.translation), R @ along

    def motion(self) -> MotionParams:
        o, d = self.hinge_line()
        return MotionParams(tuple(o), tuple(d / np.linalg.norm(d)), tuple(np.degrees(self.angles)))


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def matrix_to_axis_angle(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return w / 2.0
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis / np.linalg.norm(axis) * theta
    return w / (2.0 * np.sin(theta)) * theta


def canonical_axis_angle(r) -> np.ndarray:
    """Equivalent axis-angle vector with magnitude in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta <= np.pi:
        return r
    return matrix_to_axis_angle(axis_angle_to_matrix(r))


def rotate_about_axis(p, origin, direction, angle: float) -> np.ndarray:
    """Rotate point(s) ``p`` by ``angle`` radians about the line (origin, direction)."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise GeometryError("rotation axis direction must be unit length")
    v = np.asarray(p, dtype=float) - origin
    c, s = np.cos(angle), np.sin(angle)
    rotated = v * c + np.cross(d, v) * s + np.outer(v @ d, d).reshape(v.shape) * (1 - c)
    return rotated + origin


def moving_local_corners(model: ArticulatedModel) -> np.ndarray:
    """Object-frame moving-part corners in the closed state."""
    start, along, across, normal, length = edge_frame(model.base.dims, model.hinge.edge_id)
    s0 = start + model.hinge.offset * length * along
    L, W, T = model.moving.dims
    u = (CORNER_SIGNS + 1.0) / 2.0
    return s0 + np.outer(u[:, 0] * L, along) + np.outer(u[:, 1] * W, across) + np.outer(u[:, 2] * T, normal)


def assemble(model: ArticulatedModel, t: int):
    """World-space corners ``(base (8,3), moving (8,3))`` at frame ``t``."""
    if not 0 <= t < model.n_frames:
        raise IndexError(f"frame {t} outside 0..{model.n_frames - 1}")
    start, along, *_ , length = edge_frame(model.base.dims, model.hinge.edge_id)
    s0 = start + model.hinge.offset * length * along
    moving = rotate_about_axis(moving_local_corners(model), s0, along, model.angles[t])
    return model.pose.apply(model.base.corners()), model.pose.apply(moving)


def box_triangles(corners: np.ndarray) -> np.ndarray:
    """(12, 3, 3) triangle soup for a box given in CORNER_SIGNS order."""
    return np.asarray(corners)[BOX_TRIANGLES]


def sample_surface(geometry, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on a surface.

    ``geometry`` is either an (8,3) corner set, a list of corner sets (union
    of boxes), or an (F,3,3) triangle array.
    """
    if n < 1:
        raise GeometryError("need at least one sample")
    tris = _as_triangles(geometry)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    total = areas.sum()
    if not total > 0:
        raise GeometryError("surface has zero area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(tris), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    T = tris[face]
    return a[:, None] * T[:, 0] + b[:, None] * T[:, 1] + c[:, None] * T[:, 2]


def _as_triangles(geometry) -> np.ndarray:
    if isinstance(geometry, (list, tuple)):
        return np.concatenate([_as_triangles(g) for g in geometry])
    g = np.asarray(geometry, dtype=float)
    if g.shape == (8, 3):
        return box_triangles(g)
    if g.ndim == 3 and g.shape[1:] == (3, 3):
        return g
    raise GeometryError(f"cannot interpret geometry of shape {g.shape}")


def max_dimension(points) -> float:
    """Largest axis-aligned bounding-box extent."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise GeometryError("empty point set")
    return float(np.max(p.max(axis=0) - p.min(axis=0)))


def surface_centroid(corner_sets) -> np.ndarray:
    """Area-weighted surface centroid of a union of boxes.

    This is the expectation of :func:`sample_surface` over the same boxes; by
    symmetry each box contributes its centre weighted by its surface area.
    """
    centres, weights = [], []
    for c in corner_sets:
        c = np.asarray(c)
        tris = box_triangles(c)
        area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1).sum()
        centres.append(c.mean(axis=0))
        weights.append(area)
    w = np.asarray(weights)
    return (np.asarray(centres) * w[:, None]).sum(axis=0) / w.sum()
