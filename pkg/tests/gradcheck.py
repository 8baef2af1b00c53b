"""Finite-difference checks of the analytic objective gradient."""
import numpy as np

from artifit import diffgeom
from artifit.objective import LossConfig, Objective

TERMS = ("sil", "dice", "over", "depth", "contact", "total")
H = 1e-4


def term_config(term):
    return LossConfig() if term == "total" else LossConfig().only(term)


def _value(obj, x, cfg, term):
    return getattr(obj.evaluate(x, grad=False, cfg=cfg)[0], term)


def random_point(scene, term, rng):
    """A perturbed ground-truth vector at which ``term`` is active."""
    x = np.asarray(diffgeom.pack(scene.gt), dtype=float)
    n = len(x) - diffgeom.N_FIXED
    x[0:3] += rng.normal(0, 0.05, 3)
    x[3:6] += rng.normal(0, 0.02, 3)
    x[6:11] += rng.normal(0, 0.05, 5)
    x[11:13] = np.clip(x[11:13], -4, 4) + rng.normal(0, 0.3, 2)
    x[diffgeom.N_FIXED:] += rng.normal(0, 0.1, n)
    if term == "over":
        # swing the part back through the base
        x[diffgeom.N_FIXED:] = -rng.uniform(0.2, 1.0, n)
    if term == "depth":
        x[5] += rng.choice([-1, 1]) * rng.uniform(0.2, 0.4)
    return x


def fd_gradient(f, x, h=H):
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _structure(obj, x):
    """Hull corner sets plus the nearest-edge code of every interior pixel at ``x``."""
    obj.evaluate(x, grad=False)
    hulls = tuple(frozenset(obj._idx[i, :obj._nverts[i]].tolist()) for i in range(len(obj._nverts)))
    interior = np.where(obj._sd < 0, obj._code, -1)
    return hulls, interior


def straddles_switch(obj, x, masks=True, h=H):
    """True when a hull's corner set changes between the +h and -h evaluations.

    With ``masks`` set, a change of nearest hull edge at any interior pixel
    also counts: the signed distance has a kink on the polygon's medial axis.
    """
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        hp, ip = _structure(obj, x + e)
        hm, im = _structure(obj, x - e)
        if hp != hm:
            return True
        if masks and np.any((ip != im) & (ip >= 0) & (im >= 0)):
            return True
    return False


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def check_term(scene, term, rng, n_points=20, max_tries=400):
    """Relative errors at ``n_points`` accepted points.

    A point is resampled when the term is inactive there, when a hull's corner
    set or an interior pixel's nearest edge changes inside the stencil, or when
    the difference quotients at h and h/2 disagree, which flags a
    separating-axis switch.
    """
    cfg = term_config(term)
    obj = Objective(scene, scene.gt.hinge.edge_id, "left", cfg)
    f = lambda x: _value(obj, x, cfg, term)  # noqa: E731
    errors = []
    for _ in range(max_tries):
        x = random_point(scene, term, rng)
        if not f(x) > 1e-9:
            continue
        if straddles_switch(obj, x, masks=bool(cfg.w_sil or cfg.w_dice)):
            continue
        fd = fd_gradient(f, x)
        fd_half = fd_gradient(f, x, H / 2)
        if relative_error(fd, fd_half) > 1e-4:
            continue
        _, g = obj.evaluate(x, cfg=cfg)
        errors.append(relative_error(g, fd))
        if len(errors) == n_points:
            break
    return errors
