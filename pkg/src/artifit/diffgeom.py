"""Differentiable parametric model: flat parameter vector -> posed corners.

Flat layout (length 13 + N):

    [0:3]   object rotation, axis-angle (rad)
    [3:6]   object translation
    [6:9]   log base dims (w, h, d)
    [9:11]  log moving-part (width across face, thickness)
    [11]    hinge offset logit
    [12]    hinge extent logit
    [13:]   per-frame hinge angles (rad)

extent = sigmoid(q_e) and offset = (1 - extent) * sigmoid(q_o), so offset +
extent stays inside [0, 1].
"""
from __future__ import annotations

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import (  # noqa: E402
    CORNER_SIGNS, ArticulatedModel, HingeSpec, PoseParams, canonical_axis_angle, edge_frame,
)

N_FIXED = 13
ROT, TRANS, LOG_BASE, LOG_MOVING, Q_OFFSET, Q_EXTENT = (
    slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 11), 11, 12)
LOGIT_CLIP = 30.0

_SIGNS = jnp.asarray(CORNER_SIGNS)
_UNIT = (jnp.asarray(CORNER_SIGNS) + 1.0) / 2.0


def _logit(p):
    p = float(np.clip(p, 1e-13, 1 - 1e-13))
    return float(np.clip(np.log(p / (1 - p)), -LOGIT_CLIP, LOGIT_CLIP))


def pack(model: ArticulatedModel) -> np.ndarray:
    """Model -> flat vector (boundary hinge values are clipped to open logits)."""
    h = model.hinge
    q_e = _logit(h.extent)
    ext = 1.0 / (1.0 + np.exp(-q_e))
    q_o = _logit(h.offset / (1.0 - ext)) if h.offset > 0 else -LOGIT_CLIP
    return np.concatenate([
        model.pose.rotation, model.pose.translation, np.log(model.base.dims),
        np.log(model.moving.dims[1:]), [q_o, q_e], np.asarray(model.angles, dtype=float),
    ])


def hinge_values(vec):
    q_o, q_e = float(vec[Q_OFFSET]), float(vec[Q_EXTENT])
    extent = 1.0 / (1.0 + np.exp(-q_e))
    offset = (1.0 - extent) / (1.0 + np.exp(-q_o))
    return offset, extent


def unpack(vec, edge_id: int) -> ArticulatedModel:
    vec = np.asarray(vec, dtype=float)
    offset, extent = hinge_values(vec)
    offset = min(max(offset, 0.0), 1.0 - extent)
    mov = np.exp(vec[LOG_MOVING])
    return ArticulatedModel.build(
        tuple(np.exp(vec[LOG_BASE])), mov[0], mov[1],
        HingeSpec(edge_id, offset, extent),
        PoseParams(tuple(canonical_axis_angle(vec[ROT])), tuple(vec[TRANS])),
        tuple(vec[N_FIXED:]),
    )


def rodrigues(r):
    th2 = jnp.dot(r, r)
    small = th2 < 1e-10
    th2s = jnp.where(small, 1.0, th2)
    th = jnp.sqrt(th2s)
    a = jnp.where(small, 1.0 - th2 / 6.0, jnp.sin(th) / th)
    b = jnp.where(small, 0.5 - th2 / 24.0, (1.0 - jnp.cos(th)) / th2s)
    K = jnp.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
    return jnp.eye(3) + a * K + b * (K @ K)


def _edge_terms(dims, edge_id):
    """start, along, across, normal, length for a traced dims vector."""
    w, h, d = dims[0], dims[1], dims[2]
    z = -d / 2.0
    # axis vectors are constants per edge; only start and length depend on dims
    _, along, across, normal, _ = edge_frame((1.0, 1.0, 1.0), edge_id)
    if edge_id == 0:
        start, length = jnp.stack([-w / 2, -h / 2, z]), h
    elif edge_id == 1:
        start, length = jnp.stack([w / 2, h / 2, z]), h
    elif edge_id == 2:
        start, length = jnp.stack([w / 2, -h / 2, z]), w
    else:
        start, length = jnp.stack([-w / 2, h / 2, z]), w
    return start, jnp.asarray(along), jnp.asarray(across), jnp.asarray(normal), length


def object_corners(rot, trans, dims_b, width, thick, offset, extent, angles, edge_id):
    """Camera-frame corners: base (8,3) and moving (N,8,3)."""
    R = rodrigues(rot)
    base_local = _SIGNS * (dims_b / 2.0)
    start, along, across, normal, length = _edge_terms(dims_b, edge_id)
    s0 = start + offset * length * along
    closed = (_UNIT[:, 0:1] * (extent * length)) * along + (_UNIT[:, 1:2] * width) * across \
        + (_UNIT[:, 2:3] * thick) * normal  # relative to s0
    c = jnp.cos(angles)[:, None, None]
    s = jnp.sin(angles)[:, None, None]
    cross = jnp.cross(along, closed)
    par = (closed @ along)[:, None] * along
    moving_local = s0 + closed * c + cross * s + par * (1.0 - c)
    base = base_local @ R.T + trans
    moving = moving_local @ R.T + trans
    return base, moving


def split(vec):
    dims_b = jnp.exp(vec[LOG_BASE])
    mov = jnp.exp(vec[LOG_MOVING])
    extent = jax.nn.sigmoid(vec[Q_EXTENT])
    offset = (1.0 - extent) * jax.nn.sigmoid(vec[Q_OFFSET])
    return vec[ROT], vec[TRANS], dims_b, mov[0], mov[1], offset, extent, vec[N_FIXED:]


def corners_from_vec(vec, edge_id):
    return object_corners(*split(vec), edge_id)


def project(pts, cam):
    """cam = (fx, fy, cx, cy). Returns uv (...,2) and depth z (...)."""
    z = pts[..., 2]
    zs = jnp.where(z > 0, z, 1.0)
    u = cam[0] * pts[..., 0] / zs + cam[2]
    v = cam[1] * pts[..., 1] / zs + cam[3]
    return jnp.stack([u, v], axis=-1), z


def box_axes(c):
    ax = jnp.stack([c[4] - c[0], c[2] - c[0], c[1] - c[0]])
    return ax / jnp.linalg.norm(ax, axis=1, keepdims=True)


def sat_depth(A, B):
    """Separating-axis penetration depth of two boxes (corner order CORNER_SIGNS)."""
    fa = box_axes(A)
    fb = box_axes(B)
    cr = jnp.cross(fa[:, None, :], fb[None, :, :]).reshape(9, 3)
    sq = jnp.sum(cr * cr, axis=1)
    ok = sq > 1e-18
    # guarded sqrt: parallel edge pairs give a zero cross product, whose norm has no derivative
    cr = cr / jnp.sqrt(jnp.where(ok, sq, 1.0))[:, None]
    axes = jnp.concatenate([fa, fb, cr])
    valid = jnp.concatenate([jnp.ones(6, bool), ok])
    pa = A @ axes.T
    pb = B @ axes.T
    overlap = jnp.minimum(pa.max(0), pb.max(0)) - jnp.maximum(pa.min(0), pb.min(0))
    depth = jnp.min(jnp.where(valid, overlap, jnp.inf))
    return jnp.maximum(depth, 0.0)


def procrustes(src, dst):
    """Rigid (R, T) minimising sum |R src + T - dst|^2; translation-only when src
    or dst has no spread."""
    cs = src.mean(0)
    cd = dst.mean(0)
    a = src - cs
    b = dst - cd
    H = a.T @ b
    U, S, Vt = jnp.linalg.svd(H)
    d = jnp.sign(jnp.linalg.det(Vt.T @ U.T))
    d = jnp.where(d == 0, 1.0, d)
    R = Vt.T @ jnp.diag(jnp.array([1.0, 1.0, d])) @ U.T
    degenerate = (jnp.sum(a * a) < 1e-12) | (jnp.sum(b * b) < 1e-12)
    R = jnp.where(degenerate, jnp.eye(3), R)
    return R, cd - R @ cs


def surface_weights(dims):
    w, h, d = dims[0], dims[1], dims[2]
    return 2.0 * (w * h + h * d + w * d)


def aux_terms(base, moving, dims_b, mdims, hand, human_z, lam, eps_pen):
    """Overlap, depth and contact losses from posed corners."""
    depths = jax.vmap(lambda m: sat_depth(base, m))(moving)
    over = jnp.mean(jnp.maximum(depths - eps_pen, 0.0) ** 2)
    ab = surface_weights(dims_b)
    am = surface_weights(mdims)
    zb = base[:, 2].mean()
    zm = moving[:, :, 2].mean(axis=1)
    mean_z = (ab * zb + am * zm) / (ab + am)
    depth = jnp.mean(jnp.maximum(jnp.abs(mean_z - human_z) - lam, 0.0))
    v = moving.mean(axis=1)
    R, T = procrustes(jax.lax.stop_gradient(v), hand)
    contact = jnp.sum((v @ R.T + T - hand) ** 2)
    return over, depth, contact


def _forward(vec, cam, hand, human_z, lam, eps_pen, edge_id):
    rot, trans, dims_b, width, thick, offset, extent, angles = split(vec)
    base, moving = object_corners(rot, trans, dims_b, width, thick, offset, extent, angles, edge_id)
    uv_b, z_b = project(base, cam)
    uv_m, z_m = project(moving, cam)
    mdims = jnp.stack([extent * _edge_terms(dims_b, edge_id)[4], width, thick])
    over, depth, contact = aux_terms(base, moving, dims_b, mdims, hand, human_z, lam, eps_pen)
    return uv_b, z_b, uv_m, z_m, over, depth, contact


def _scalar(vec, cam, hand, human_z, lam, eps_pen, g_uv_b, g_uv_m, weights, edge_id):
    uv_b, _, uv_m, _, over, depth, contact = _forward(vec, cam, hand, human_z, lam, eps_pen, edge_id)
    return (jnp.sum(uv_b * g_uv_b) + jnp.sum(uv_m * g_uv_m)
            + weights[0] * over + weights[1] * depth + weights[2] * contact)


forward = jax.jit(_forward, static_argnames=("edge_id",))
backward = jax.jit(jax.grad(_scalar), static_argnames=("edge_id",))
