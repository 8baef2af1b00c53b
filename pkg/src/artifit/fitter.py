"""Multi-start Adam fitting of the hinged two-box model, and the random baseline."""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diffgeom
from .geometry import EDGE_NAMES, ArticulatedModel, HingeSpec, PoseParams, face_width
from .objective import LossBreakdown, LossConfig, Objective
from .render import CameraIntrinsics, RenderConfig

HANDS = ("left", "right")
EXTENT_MODES = (("full", 0.0, 1.0), ("half_a", 0.0, 0.5), ("half_b", 0.5, 0.5))
# template hinge logits: full extent / end-anchored offsets sit at sigmoid(+-4.6) ~ 0.99 / 0.01
# so the squashing map keeps a usable slope
TEMPLATE_LOGIT = 4.6
N_TEMPLATES = 4 * len(EXTENT_MODES)
DEFAULT_DEPTH = 2.0


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Template:
    template_id: int
    edge_id: int
    mode: str
    offset: float
    extent: float
    base_dims: tuple[float, float, float]
    translation: tuple[float, float, float]

    @property
    def name(self) -> str:
        return f"{EDGE_NAMES[self.edge_id]}/{self.mode}"

    def hinge_logits(self) -> tuple[float, float]:
        q_e = TEMPLATE_LOGIT if self.extent >= 1.0 else 0.0
        q_o = TEMPLATE_LOGIT if self.offset > 0 else -TEMPLATE_LOGIT
        return q_o, q_e

    def initial_vector(self, n_frames: int) -> np.ndarray:
        dims = np.asarray(self.base_dims)
        width = face_width(dims, self.edge_id)
        thick = 0.05 * dims.max()
        q_o, q_e = self.hinge_logits()
        return np.concatenate([np.zeros(3), self.translation, np.log(dims), np.log([width, thick]),
                               [q_o, q_e], np.zeros(n_frames)])

    def initial_model(self, n_frames: int) -> ArticulatedModel:
        return diffgeom.unpack(self.initial_vector(n_frames), self.edge_id)


def make_templates(K: CameraIntrinsics, base_depth: float = DEFAULT_DEPTH) -> list[Template]:
    """The 12 starting configurations: 4 front edges x 3 attachment extents.

    The base is a cube-faced box on the optical axis at ``base_depth`` whose
    front face spans 40% of the image width.
    """
    if not base_depth > 0:
        raise ValueError("base depth must be positive")
    w = 0.4 * K.width * base_depth / K.fx
    dims = (w, w, 0.5 * w)
    # base centre sits half a depth behind the front face, which is at base_depth
    trans = (0.0, 0.0, base_depth + 0.25 * w)
    out = []
    for edge in range(4):
        for mode, off, ext in EXTENT_MODES:
            out.append(Template(len(out), edge, mode, off, ext, dims, trans))
    return out


def depth_heuristic(video) -> float:
    """Initial object depth: the median human depth when available."""
    z = np.asarray(getattr(video.human, "mean_z", ()), dtype=float)
    z = z[np.isfinite(z) & (z > 0)]
    return float(np.median(z)) if len(z) else DEFAULT_DEPTH


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 500
    lr: float = 0.05
    decay_factor: float = 10.0
    decay_start: float = 0.75
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # motion states are projected onto this range after every step; the part
    # opens away from the base, so negative states would pass through it
    angle_bounds_deg: tuple[float, float] | None = (0.0, 180.0)

    def __post_init__(self):
        if self.angle_bounds_deg is not None:
            lo, hi = self.angle_bounds_deg
            if not lo < hi:
                raise ValueError("angle_bounds_deg must be an increasing pair")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.decay_factor < 1:
            raise ValueError("decay_factor must be >= 1")
        if not 0 <= self.decay_start <= 1:
            raise ValueError("decay_start must lie in [0, 1]")


def lr_at(it: int, cfg: FitConfig) -> float:
    if not 0 <= it < cfg.iterations:
        raise ValueError(f"iteration {it} outside 0..{cfg.iterations - 1}")
    if it < cfg.decay_start * cfg.iterations:
        return cfg.lr
    return cfg.lr / cfg.decay_factor


class Adam:
    """Adam with optional box projection (``lower``/``upper`` arrays, +-inf = free)."""

    def __init__(self, x0, cfg: FitConfig, lower=None, upper=None):
        self.x = np.array(x0, dtype=float)
        self.lower = None if lower is None else np.asarray(lower, dtype=float)
        self.upper = None if upper is None else np.asarray(upper, dtype=float)
        self.m = np.zeros_like(self.x)
        self.v = np.zeros_like(self.x)
        self.t = 0
        self.cfg = cfg

    def step(self, grad, lr: float) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        mhat = self.m / (1 - c.beta1 ** self.t)
        vhat = self.v / (1 - c.beta2 ** self.t)
        self.x = self.x - lr * mhat / (np.sqrt(vhat) + c.eps)
        if self.lower is not None or self.upper is not None:
            np.clip(self.x, self.lower, self.upper, out=self.x)
        return self.x


def angle_box(n_params: int, cfg: FitConfig):
    """Lower/upper bounds for the flat vector: only the motion states are bounded."""
    if cfg.angle_bounds_deg is None:
        return None, None
    lo = np.full(n_params, -np.inf)
    hi = np.full(n_params, np.inf)
    lo[diffgeom.N_FIXED:], hi[diffgeom.N_FIXED:] = np.radians(cfg.angle_bounds_deg)
    return lo, hi


@dataclass(frozen=True, eq=False)
class RunResult:
    template_id: int
    hand: str
    vector: np.ndarray | None
    loss: LossBreakdown | None
    trace: tuple[float, ...]
    failed: bool = False

    @property
    def total(self) -> float:
        return float("inf") if self.failed or self.loss is None else self.loss.total

    @property
    def run_index(self) -> int:
        return 2 * self.template_id + HANDS.index(self.hand)


def optimize_run(template: Template, hand: str, video, cfg: FitConfig = FitConfig(),
                 loss_cfg: LossConfig = LossConfig(), render_cfg: RenderConfig = RenderConfig(),
                 x0=None) -> RunResult:
    """Adam on the flat parameter vector from ``template`` (or ``x0``)."""
    obj = Objective(video, template.edge_id, hand, loss_cfg, render_cfg)
    x = template.initial_vector(obj.N) if x0 is None else np.array(x0, dtype=float)
    lo, hi = angle_box(len(x), cfg)
    if lo is not None:
        x = np.clip(x, lo, hi)
    loss, g = obj.evaluate(x)
    if not (np.isfinite(loss.total) and np.all(np.isfinite(g))):
        return RunResult(template.template_id, hand, None, None, (), failed=True)
    opt = Adam(x, cfg, lo, hi)
    trace = []
    for it in range(cfg.iterations):
        if it:
            loss, g = obj.evaluate(opt.x)
        trace.append(loss.total)
        if not (np.isfinite(loss.total) and np.all(np.isfinite(g))):
            return RunResult(template.template_id, hand, None, None, tuple(trace), failed=True)
        opt.step(g, lr_at(it, cfg))
    final, _ = obj.evaluate(opt.x, grad=False)
    if not np.isfinite(final.total):
        return RunResult(template.template_id, hand, None, None, tuple(trace), failed=True)
    return RunResult(template.template_id, hand, opt.x.copy(), final, tuple(trace))


@dataclass(frozen=True, eq=False)
class FitResult:
    video_id: str
    method: str
    model: ArticulatedModel
    vector: np.ndarray
    template_id: int
    hand: str
    loss: LossBreakdown
    run_losses: dict = field(default_factory=dict)    # "template/hand" -> final total
    traces: dict = field(default_factory=dict)        # "template/hand" -> per-iteration totals
    iterations: int = 0

    def to_dict(self, with_traces: bool = False) -> dict:
        m = self.model
        motion = m.motion()
        d = {
            "video_id": self.video_id,
            "method": self.method,
            "template_id": self.template_id,
            "hand": self.hand,
            "iterations": self.iterations,
            "params": {
                "rotation": list(m.pose.rotation),
                "translation": list(m.pose.translation),
                "base_dims": list(m.base.dims),
                "moving_dims": list(m.moving.dims),
                "hinge": {"edge_id": m.hinge.edge_id, "offset": m.hinge.offset, "extent": m.hinge.extent},
                "angles_deg": [float(np.degrees(a)) for a in m.angles],
            },
            "vector": [float(x) for x in self.vector],
            "loss": self.loss.to_dict(),
            "motion": {"origin": list(motion.origin), "direction": list(motion.direction)},
            "run_losses": {k: _finite_or_none(v) for k, v in self.run_losses.items()},
        }
        if with_traces:
            d["traces"] = {k: list(v) for k, v in self.traces.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        p = d["params"]
        h = p["hinge"]
        model = ArticulatedModel.build(
            tuple(p["base_dims"]), p["moving_dims"][1], p["moving_dims"][2],
            HingeSpec(int(h["edge_id"]), float(h["offset"]), float(h["extent"])),
            PoseParams(tuple(p["rotation"]), tuple(p["translation"])), tuple(np.radians(p["angles_deg"])))
        runs = {k: (float("inf") if v is None else v) for k, v in d.get("run_losses", {}).items()}
        return cls(d["video_id"], d["method"], model, np.asarray(d["vector"], float), int(d["template_id"]),
                   d["hand"], LossBreakdown(**d["loss"]), runs, d.get("traces", {}), int(d.get("iterations", 0)))


def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


def _run_key(template_id: int, hand: str) -> str:
    return f"{template_id}/{hand}"


def select_best(runs) -> RunResult:
    """Minimum final loss; ties go to the lower template id, then the left hand."""
    ok = [r for r in runs if not r.failed]
    if not ok:
        raise FitError("every optimisation run failed")
    return min(ok, key=lambda r: (r.total, r.template_id, HANDS.index(r.hand)))


def fit_video(video, cfg: FitConfig = FitConfig(), loss_cfg: LossConfig = LossConfig(),
              render_cfg: RenderConfig = RenderConfig(), jobs: int = 1, starts=None) -> FitResult:
    """Run every (template, hand) start and keep the lowest-loss result.

    ``starts`` optionally restricts the runs to a subset of
    ``(template_id, hand)`` pairs.
    """
    templates = make_templates(video.camera, depth_heuristic(video))
    pairs = [(t, h) for t in templates for h in HANDS]
    if starts is not None:
        wanted = set(starts)
        pairs = [(t, h) for t, h in pairs if (t.template_id, h) in wanted]
        if not pairs:
            raise FitError("no starts selected")

    def job(pair):
        return optimize_run(pair[0], pair[1], video, cfg, loss_cfg, render_cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(job, pairs))
    else:
        runs = [job(p) for p in pairs]
    best = select_best(runs)
    return FitResult(
        video.video_id, "cubeopt", diffgeom.unpack(best.vector, templates[best.template_id].edge_id),
        best.vector, best.template_id, best.hand, best.loss,
        {_run_key(r.template_id, r.hand): r.total for r in runs},
        {_run_key(r.template_id, r.hand): r.trace for r in runs}, cfg.iterations)


def derive_seed(seed: int, video_id: str, run_index: int = 0) -> int:
    """Stable per-(seed, video, run) seed, independent of scheduling."""
    h = zlib.crc32(video_id.encode("utf-8"))
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, h, int(run_index)]).generate_state(1)[0])


def cube_rand(video, seed: int = 0, loss_cfg: LossConfig = LossConfig(),
              render_cfg: RenderConfig = RenderConfig()) -> FitResult:
    """A random template and hand with random perturbations; no optimisation."""
    rng = np.random.default_rng(derive_seed(seed, video.video_id))
    templates = make_templates(video.camera, depth_heuristic(video))
    tmpl = templates[int(rng.integers(len(templates)))]
    hand = HANDS[int(rng.integers(2))]
    n = video.n_frames
    x = tmpl.initial_vector(n)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    x[diffgeom.ROT] = axis * np.radians(rng.uniform(-30.0, 30.0))
    z0 = tmpl.translation[2]
    x[diffgeom.TRANS] += rng.uniform(-0.2, 0.2, size=3) * z0
    x[diffgeom.LOG_BASE] += np.log(rng.uniform(0.5, 2.0, size=3))
    x[diffgeom.LOG_MOVING] += np.log(rng.uniform(0.5, 2.0, size=2))
    x[diffgeom.N_FIXED:] = np.radians(rng.uniform(0.0, 90.0, size=n))
    obj = Objective(video, tmpl.edge_id, hand, loss_cfg, render_cfg)
    loss, _ = obj.evaluate(x, grad=False)
    key = _run_key(tmpl.template_id, hand)
    return FitResult(video.video_id, "cuberand", diffgeom.unpack(x, tmpl.edge_id), x, tmpl.template_id, hand,
                     loss, {key: loss.total}, {key: ()}, 0)
