"""Numba kernels for soft silhouettes of convex polygons on a pixel grid.

Feature codes stored per pixel: ``k`` means the signed distance is the
outward line distance of edge ``k`` (interior pixels and exterior pixels in
the edge's perpendicular strip); ``8 + k`` means the Euclidean distance to
vertex ``k``.
"""
import math

import numpy as np
from numba import njit

MAX_VERTS = 8


@njit(cache=True, nogil=True)
def hull_indices(pts, tol):
    """Monotone-chain convex hull. Returns (indices, count), counterclockwise
    in (x, y) coordinates (positive shoelace area). Collinear points dropped.

    Turns are tested exactly. ``tol`` bounds the squared length below which
    consecutive hull vertices are merged, and twice the hull area below which
    the input counts as degenerate (count 0)."""
    n = pts.shape[0]
    order = np.arange(n)
    # insertion sort on (x, y); n is tiny
    for i in range(1, n):
        j = i
        while j > 0:
            a = order[j - 1]
            b = order[j]
            if pts[a, 0] > pts[b, 0] or (pts[a, 0] == pts[b, 0] and pts[a, 1] > pts[b, 1]):
                order[j - 1] = b
                order[j] = a
                j -= 1
            else:
                break
    out = np.empty(2 * n + 1, np.int64)
    k = 0
    for ii in range(n):
        i = order[ii]
        while k >= 2:
            o = out[k - 2]
            a = out[k - 1]
            cr = (pts[a, 0] - pts[o, 0]) * (pts[i, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[i, 0] - pts[o, 0])
            if cr <= 0.0:
                k -= 1
            else:
                break
        out[k] = i
        k += 1
    lower = k + 1
    for ii in range(n - 2, -1, -1):
        i = order[ii]
        while k >= lower:
            o = out[k - 2]
            a = out[k - 1]
            cr = (pts[a, 0] - pts[o, 0]) * (pts[i, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[i, 0] - pts[o, 0])
            if cr <= 0.0:
                k -= 1
            else:
                break
        out[k] = i
        k += 1
    m = k - 1
    # merge vertices closer than sqrt(tol); their edge would have no usable direction
    w = 0
    for q in range(m):
        if w > 0:
            p = out[w - 1]
            dx = pts[out[q], 0] - pts[p, 0]
            dy = pts[out[q], 1] - pts[p, 1]
            if dx * dx + dy * dy <= tol:
                continue
        out[w] = out[q]
        w += 1
    while w > 1:
        dx = pts[out[w - 1], 0] - pts[out[0], 0]
        dy = pts[out[w - 1], 1] - pts[out[0], 1]
        if dx * dx + dy * dy > tol:
            break
        w -= 1
    m = w
    area2 = 0.0
    for q in range(m):
        a = out[q]
        b = out[(q + 1) % m] if m > 0 else a
        area2 += pts[a, 0] * pts[b, 1] - pts[b, 0] * pts[a, 1]
    if m < 3 or area2 <= tol:
        return out[:0].copy(), 0
    return out[:m].copy(), m


@njit(cache=True, fastmath=True, nogil=True)
def sd_fields(polys, nverts, H, W, sd, code):
    """Signed distance of every pixel centre to each convex CCW polygon.

    polys: (M, 8, 2); nverts: (M,); sd: (M, H*W) float64 out; code: (M, H*W) int8 out.
    """
    M = polys.shape[0]
    ex = np.empty(MAX_VERTS)
    ey = np.empty(MAX_VERTS)
    inv2 = np.empty(MAX_VERTS)
    invl = np.empty(MAX_VERTS)
    best = np.empty(W)
    bcode = np.empty(W, np.int8)
    mx = np.empty(W)
    mcode = np.empty(W, np.int8)
    for m in range(M):
        nv = nverts[m]
        for k in range(nv):
            j = (k + 1) % nv
            ex[k] = polys[m, j, 0] - polys[m, k, 0]
            ey[k] = polys[m, j, 1] - polys[m, k, 1]
            inv2[k] = 1.0 / (ex[k] * ex[k] + ey[k] * ey[k])
            invl[k] = math.sqrt(inv2[k])
        for i in range(H):
            py = i + 0.5
            for x in range(W):
                best[x] = np.inf
                mx[x] = -np.inf
                bcode[x] = 0
                mcode[x] = 0
            for k in range(nv):
                ax = polys[m, k, 0]
                ay = polys[m, k, 1]
                exk = ex[k]
                eyk = ey[k]
                i2 = inv2[k]
                il = invl[k]
                dy = py - ay
                kn = (k + 1) % nv
                for x in range(W):
                    dx = x + 0.5 - ax
                    t = (dx * exk + dy * eyk) * i2
                    c = k
                    if t <= 0.0:
                        t = 0.0
                        c = 8 + k
                    elif t >= 1.0:
                        t = 1.0
                        c = 8 + kn
                    qx = dx - t * exk
                    qy = dy - t * eyk
                    d2 = qx * qx + qy * qy
                    if d2 < best[x]:
                        best[x] = d2
                        bcode[x] = c
                    s = (eyk * dx - exk * dy) * il
                    if s > mx[x]:
                        mx[x] = s
                        mcode[x] = k
            row = i * W
            for x in range(W):
                if mx[x] <= 0.0:
                    sd[m, row + x] = mx[x]
                    code[m, row + x] = mcode[x]
                else:
                    sd[m, row + x] = math.sqrt(best[x])
                    code[m, row + x] = bcode[x]


@njit(cache=True, fastmath=True, nogil=True)
def mask_sums(occ_b, occ_m, gt_o, gt_b, gt_m, valid):
    """Per-frame sums for silhouette and soft-IoU terms.

    Returns (N, 9): sil_o, sil_b, sil_m, I_o, U_o, I_b, U_b, I_m, U_m.
    """
    N, P = occ_m.shape
    out = np.zeros((N, 9))
    for t in range(N):
        if not valid[t]:
            continue
        s0 = 0.0; s1 = 0.0; s2 = 0.0
        io = 0.0; uo = 0.0; ib = 0.0; ub = 0.0; im = 0.0; um = 0.0
        for p in range(P):
            b = occ_b[p]
            mv = occ_m[t, p]
            o = 1.0 - (1.0 - b) * (1.0 - mv)
            go = gt_o[t, p]
            gb = gt_b[t, p]
            gm = gt_m[t, p]
            s0 += (go - o) * (go - o)
            s1 += (gb - b) * (gb - b)
            s2 += (gm - mv) * (gm - mv)
            io += o * go
            uo += o + go - o * go
            ib += b * gb
            ub += b + gb - b * gb
            im += mv * gm
            um += mv + gm - mv * gm
        out[t, 0] = s0; out[t, 1] = s1; out[t, 2] = s2
        out[t, 3] = io; out[t, 4] = uo; out[t, 5] = ib
        out[t, 6] = ub; out[t, 7] = im; out[t, 8] = um
    return out


@njit(cache=True, nogil=True)
def _diou(g, inter, union):
    # d IoU / d a for IoU = sum(a g) / sum(a + g - a g)
    if union <= 0.0:
        return 0.0
    return (g * (union + inter) - inter) / (union * union)


@njit(cache=True, nogil=True)
def _diou_coef(inter, union):
    if union <= 0.0:
        return 0.0, 0.0
    u2 = 1.0 / (union * union)
    return (union + inter) * u2, inter * u2


@njit(cache=True, nogil=True)
def _finish(acc, polys, nverts, grads):
    M = polys.shape[0]
    for m in range(M):
        nv = nverts[m]
        for k in range(MAX_VERTS):
            grads[m, k, 0] = 0.0
            grads[m, k, 1] = 0.0
        for k in range(nv):
            grads[m, k, 0] += acc[m, 3, k]
            grads[m, k, 1] += acc[m, 4, k]
        for k in range(nv):
            j = (k + 1) % nv
            a0 = acc[m, 0, k]
            axs = acc[m, 1, k]
            ays = acc[m, 2, k]
            ax = polys[m, k, 0]; ay = polys[m, k, 1]
            bx = polys[m, j, 0]; by = polys[m, j, 1]
            ex = bx - ax; ey = by - ay
            il = 1.0 / math.sqrt(ex * ex + ey * ey)
            il3 = il * il * il
            # signed distance s = -cross / L is affine in the pixel position,
            # so sums of g, g*px, g*py are sufficient statistics
            C = ex * ays - ey * axs + (ey * ax - ex * ay) * a0
            grads[m, k, 0] += -il * (by * a0 - ays) - il3 * ex * C
            grads[m, k, 1] += -il * (axs - bx * a0) - il3 * ey * C
            grads[m, j, 0] += -il * (ays - ay * a0) + il3 * ex * C
            grads[m, j, 1] += -il * (ax * a0 - axs) + il3 * ey * C


@njit(cache=True, fastmath=True, nogil=True)
def vertex_grads(polys, nverts, W, code, gsd, grads):
    """grads[m] = d/d(polygon m vertices) of sum_p gsd[m, p] * sd[m, p]."""
    M = polys.shape[0]
    P = code.shape[1]
    H = P // W
    acc = np.zeros((M, 5, MAX_VERTS))
    s0 = np.zeros(MAX_VERTS); sx = np.zeros(MAX_VERTS); sy = np.zeros(MAX_VERTS)
    vx = np.zeros(MAX_VERTS); vy = np.zeros(MAX_VERTS)
    for m in range(M):
        s0[:] = 0.0; sx[:] = 0.0; sy[:] = 0.0; vx[:] = 0.0; vy[:] = 0.0
        for i in range(H):
            py = i + 0.5
            for x in range(W):
                p = i * W + x
                g = gsd[m, p]
                c = code[m, p]
                px = x + 0.5
                if c < 8:
                    s0[c] += g
                    sx[c] += g * px
                    sy[c] += g * py
                else:
                    k = c - 8
                    dx = polys[m, k, 0] - px
                    dy = polys[m, k, 1] - py
                    d = math.sqrt(dx * dx + dy * dy)
                    if d > 0.0:
                        r = g / d
                        vx[k] += r * dx
                        vy[k] += r * dy
        acc[m, 0] = s0; acc[m, 1] = sx; acc[m, 2] = sy; acc[m, 3] = vx; acc[m, 4] = vy
    _finish(acc, polys, nverts, grads)


@njit(cache=True, fastmath=True, nogil=True)
def mask_loss_backward(occ_b, occ_m, gt_o, gt_b, gt_m, valid, sums, w_sil, w_dice, inv_tau,
                       polys, nverts, W, code, grads):
    """Gradient of w_sil * L_sil + w_dice * L_dice w.r.t. hull vertices.

    Hull 0 is the base, hull t + 1 the moving part at frame t; grads (N+1, 8, 2).
    """
    N, P = occ_m.shape
    H = P // W
    acc = np.zeros((N + 1, 5, MAX_VERTS))
    scale = 1.0 / N
    b0 = np.zeros(MAX_VERTS); bx = np.zeros(MAX_VERTS); by = np.zeros(MAX_VERTS)
    bvx = np.zeros(MAX_VERTS); bvy = np.zeros(MAX_VERTS)
    m0 = np.zeros(MAX_VERTS); mx = np.zeros(MAX_VERTS); my = np.zeros(MAX_VERTS)
    mvx = np.zeros(MAX_VERTS); mvy = np.zeros(MAX_VERTS)
    for t in range(N):
        if not valid[t]:
            continue
        # d IoU / d a = g * A - B per part, with A = (U + I) / U^2 and B = I / U^2
        ao, bo = _diou_coef(sums[t, 3], sums[t, 4])
        ab, bb = _diou_coef(sums[t, 5], sums[t, 6])
        am, bm = _diou_coef(sums[t, 7], sums[t, 8])
        m0[:] = 0.0; mx[:] = 0.0; my[:] = 0.0; mvx[:] = 0.0; mvy[:] = 0.0
        for i in range(H):
            py = i + 0.5
            for x in range(W):
                p = i * W + x
                b = occ_b[p]
                mv = occ_m[t, p]
                sb = b * (1.0 - b)
                sm = mv * (1.0 - mv)
                if sb < 1e-17 and sm < 1e-17:
                    continue
                px = x + 0.5
                o = 1.0 - (1.0 - b) * (1.0 - mv)
                go = gt_o[t, p]
                gb = gt_b[t, p]
                gm = gt_m[t, p]
                d_o = w_sil * 2.0 * (o - go) - w_dice * (go * ao - bo)
                d_b = w_sil * 2.0 * (b - gb) - w_dice * (gb * ab - bb)
                d_m = w_sil * 2.0 * (mv - gm) - w_dice * (gm * am - bm)
                d_m += d_o * (1.0 - b)
                d_b += d_o * (1.0 - mv)
                g = -scale * d_m * sm * inv_tau
                c = code[t + 1, p]
                if c < 8:
                    m0[c] += g
                    mx[c] += g * px
                    my[c] += g * py
                else:
                    k = c - 8
                    dx = polys[t + 1, k, 0] - px
                    dy = polys[t + 1, k, 1] - py
                    d = math.sqrt(dx * dx + dy * dy)
                    if d > 0.0:
                        r = g / d
                        mvx[k] += r * dx
                        mvy[k] += r * dy
                g = -scale * d_b * sb * inv_tau
                c = code[0, p]
                if c < 8:
                    b0[c] += g
                    bx[c] += g * px
                    by[c] += g * py
                else:
                    k = c - 8
                    dx = polys[0, k, 0] - px
                    dy = polys[0, k, 1] - py
                    d = math.sqrt(dx * dx + dy * dy)
                    if d > 0.0:
                        r = g / d
                        bvx[k] += r * dx
                        bvy[k] += r * dy
        acc[t + 1, 0] = m0; acc[t + 1, 1] = mx; acc[t + 1, 2] = my
        acc[t + 1, 3] = mvx; acc[t + 1, 4] = mvy
    acc[0, 0] = b0; acc[0, 1] = bx; acc[0, 2] = by; acc[0, 3] = bvx; acc[0, 4] = bvy
    _finish(acc, polys, nverts, grads)


@njit(cache=True, nogil=True)
def hulls_batch(uv, polys, nverts, idx):
    """Hull every (8, 2) corner set in ``uv``; returns False if any is degenerate."""
    ok = True
    for m in range(uv.shape[0]):
        lo0 = uv[m, 0, 0]; hi0 = lo0; lo1 = uv[m, 0, 1]; hi1 = lo1
        for k in range(1, 8):
            lo0 = min(lo0, uv[m, k, 0]); hi0 = max(hi0, uv[m, k, 0])
            lo1 = min(lo1, uv[m, k, 1]); hi1 = max(hi1, uv[m, k, 1])
        scale = max(1.0, max(hi0 - lo0, hi1 - lo1))
        h, n = hull_indices(uv[m], 1e-12 * scale * scale)
        if n < 3:
            ok = False
            n = 0
        nverts[m] = n
        for k in range(8):
            idx[m, k] = -1
        for k in range(n):
            idx[m, k] = h[k]
            polys[m, k, 0] = uv[m, h[k], 0]
            polys[m, k, 1] = uv[m, h[k], 1]
    return ok


@njit(cache=True, nogil=True)
def scatter_hull_grads(grads, idx, nverts, out):
    """Map per-hull-vertex gradients back onto the 8 corners."""
    for m in range(grads.shape[0]):
        for k in range(8):
            out[m, k, 0] = 0.0
            out[m, k, 1] = 0.0
        for k in range(nverts[m]):
            out[m, idx[m, k], 0] = grads[m, k, 0]
            out[m, idx[m, k], 1] = grads[m, k, 1]
