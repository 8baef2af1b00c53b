"""Command line: ``artifit synth|fit|eval|bench|config``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import synth
from .config import METHODS, ConfigError, RunConfig
from .fitter import FitError, FitResult, cube_rand, fit_video
from .metrics import (
    aggregate, dumps_json, report_csv, report_schema, threshold_sweep, video_eval,
)
from .objective import Objective
from .synth import DatasetError, atomic_write_text

log = logging.getLogger("artifit")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="artifit", description="Fit hinged two-box models to mask videos.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--scenes", type=int)
    s.add_argument("--frames", type=int)

    f = sub.add_parser("fit", parents=[common], help="fit every video of a dataset")
    f.add_argument("--data", help="dataset directory")
    f.add_argument("--method", choices=METHODS)
    f.add_argument("--iterations", type=int)
    f.add_argument("--debug-masks", action="store_true", default=None)

    e = sub.add_parser("eval", parents=[common], help="score fit results against ground truth")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--results", required=True, help="directory of per-video result JSON files")
    e.add_argument("--name", default=None, help="row label in the CSV (defaults to the method)")
    e.add_argument("--sweep", action="store_true", default=None)
    e.add_argument("--points", type=int, help="surface samples per shape")

    b = sub.add_parser("bench", parents=[common], help="synth, fit both methods, evaluate, compare")
    b.add_argument("--scenes", type=int)
    b.add_argument("--frames", type=int)
    b.add_argument("--iterations", type=int)
    b.add_argument("--sweep", action="store_true", default=None)
    b.add_argument("--points", type=int, help="surface samples per shape")

    c = sub.add_parser("config", help="configuration helpers")
    csub = c.add_subparsers(dest="action", required=True)
    ci = csub.add_parser("init", help="write the full default configuration")
    ci.add_argument("--out", help="file to write (stdout when omitted)")
    cs = csub.add_parser("show", help="print the resolved configuration")
    cs.add_argument("--config")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return cfg.with_overrides(**{
        "seed": g("seed"), "jobs": g("jobs"), "out": g("out"), "dataset": g("data"),
        "method": g("method"), "debug_masks": g("debug_masks"),
        "synth.scenes": g("scenes"), "synth.frames": g("frames"),
        "fit.iterations": g("iterations"), "eval.sweep": g("sweep"), "eval.n_points": g("points"),
    })


# --------------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig) -> Path:
    samples = synth.gen_suite(cfg.synth.scenes, seed=cfg.seed, n_frames=cfg.synth.frames)
    root = synth.write_dataset(samples, cfg.out)
    log.info("wrote %d videos to %s", len(samples), root)
    return root


def _fit_one(video, cfg: RunConfig) -> FitResult:
    if cfg.method == "cuberand":
        return cube_rand(video, cfg.seed, cfg.loss, cfg.render)
    return fit_video(video, cfg.fit, cfg.loss, cfg.render)


def _write_debug_masks(video, res: FitResult, cfg: RunConfig, out: Path) -> None:
    obj = Objective(video, res.model.hinge.edge_id, res.hand, cfg.loss, cfg.render)
    masks = obj.masks(res.vector)
    d = out / "masks" / video.video_id
    d.mkdir(parents=True, exist_ok=True)
    for part, seq in masks.items():
        for t, m in enumerate(seq):
            Image.fromarray(np.rint(m * 255).astype(np.uint8), mode="L").save(d / f"{part}_{t:04d}.png")


def cmd_fit(cfg: RunConfig) -> int:
    """Fit every video; returns the number of failed videos."""
    videos = synth.read_dataset(cfg.dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(video):
        try:
            return video, _fit_one(video, cfg), None
        except (FitError, ValueError) as e:
            return video, None, str(e)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as ex:
            done = list(ex.map(work, videos))
    else:
        done = [work(v) for v in videos]
    failed = 0
    for video, res, err in done:
        if res is None:
            failed += 1
            log.error("fit failed for %s: %s", video.video_id, err)
            atomic_write_text(out / f"{video.video_id}.error.txt", err + "\n")
            continue
        atomic_write_text(out / f"{video.video_id}.json", dumps_json(res.to_dict()))
        if cfg.debug_masks:
            _write_debug_masks(video, res, cfg, out)
        log.info("%s: template %d, %s hand, loss %.4g", video.video_id, res.template_id, res.hand, res.loss.total)
    return failed


def load_results(results_dir) -> dict[str, FitResult]:
    d = Path(results_dir)
    if not d.is_dir():
        raise DatasetError(f"results directory not found: {d}")
    out = {}
    for p in sorted(d.glob("*.json")):
        try:
            r = FitResult.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{p.name}: malformed fit result ({e})") from None
        out[r.video_id] = r
    return out


def evaluate(videos, results: dict[str, FitResult], cfg: RunConfig):
    ids = {v.video_id for v in videos}
    if ids != set(results):
        missing = sorted(ids - set(results))
        extra = sorted(set(results) - ids)
        raise DatasetError(f"video sets differ: missing results {missing}, unknown results {extra}")
    per_video = {}
    for v in videos:
        fm = video_eval(results[v.video_id].model, v.gt, cfg.eval.n_points, seed=cfg.seed)
        per_video[v.video_id] = np.array([f.as_array() for f in fm])
    cats = {v.video_id: v.category for v in videos}
    rep = aggregate(per_video, cfg.thresholds, cfg.eval.conditioned_motion, cfg.eval.full_motion_in_accrpm, cats)
    return rep, per_video


def _write_reports(rows, per_video_by_method, cfg: RunConfig, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / f"{stem}.csv", report_csv(rows))
    atomic_write_text(out / f"{stem}.schema.json", dumps_json(report_schema(cfg.thresholds)))
    atomic_write_text(out / f"{stem}.json", dumps_json({name: rep.to_json() for name, rep in rows}))
    if cfg.eval.sweep:
        sweeps = {name: threshold_sweep(pv, cfg.thresholds, cfg.eval.conditioned_motion,
                                        cfg.eval.full_motion_in_accrpm)
                  for name, pv in per_video_by_method.items()}
        atomic_write_text(out / f"{stem}.sweep.json", dumps_json(sweeps))


def cmd_eval(cfg: RunConfig, results_dir, name: str | None = None):
    videos = synth.read_dataset(cfg.dataset)
    results = load_results(results_dir)
    rep, per_video = evaluate(videos, results, cfg)
    label = name or next(iter(results.values())).method
    _write_reports([(label, rep)], {label: per_video}, cfg, Path(cfg.out), "report")
    return rep


def cmd_bench(cfg: RunConfig) -> int:
    root = Path(cfg.out)
    data = root / "dataset"
    cmd_synth(cfg.with_overrides(out=str(data)))
    rows, pvs, failed = [], {}, 0
    for method in METHODS:
        mcfg = cfg.with_overrides(dataset=str(data), out=str(root / "results" / method), method=method)
        failed += cmd_fit(mcfg)
        videos = synth.read_dataset(data)
        rep, pv = evaluate(videos, load_results(mcfg.out), mcfg)
        rows.append((method, rep))
        pvs[method] = pv
    _write_reports(rows, pvs, cfg, root, "bench")
    return failed


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "config":
            cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
            if args.action == "init" and args.out:
                atomic_write_text(args.out, cfg.dumps())
            else:
                sys.stdout.write(cfg.dumps())
            return 0
        cfg = resolve_config(args)
        if args.command == "synth":
            cmd_synth(cfg)
            return 0
        if args.command == "fit":
            if not Path(cfg.dataset).is_dir():
                raise DatasetError(f"dataset directory not found: {cfg.dataset}")
            return 1 if cmd_fit(cfg) else 0
        if args.command == "eval":
            cmd_eval(cfg, args.results, args.name)
            return 0
        if args.command == "bench":
            return 1 if cmd_bench(cfg) else 0
    except (ConfigError, DatasetError, FitError, synth.SceneError) as e:
        print(f"artifit: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
