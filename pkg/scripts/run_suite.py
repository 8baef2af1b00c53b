"""Fit the synthetic round-trip suite and print one JSON line per video.

    python3 scripts/run_suite.py --videos 20 --seed 0 --jobs 4 > suite.jsonl
"""
import argparse
import json
import os
import time
from dataclasses import fields

import numpy as np

from artifit import synth
from artifit.fitter import FitConfig, cube_rand, fit_video
from artifit.metrics import FrameMetrics, video_eval

COLUMNS = [f.name for f in fields(FrameMetrics)]


def summarize(model, gt, n_points):
    m = np.array([f.as_array() for f in video_eval(model, gt, n_points)]).mean(0)
    return {k: round(float(v), 4) for k, v in zip(COLUMNS, m)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", type=int, default=20)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--points", type=int, default=2000, help="surface samples per shape for evaluation")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--only", type=int, nargs="*", help="indices of the videos to fit")
    args = ap.parse_args()

    suite = synth.gen_suite(args.videos, seed=args.seed, n_frames=args.frames)
    cfg = FitConfig(iterations=args.iterations)
    t_all = time.perf_counter()
    for i, video in enumerate(suite):
        if args.only and i not in args.only:
            continue
        t0 = time.perf_counter()
        res = fit_video(video, cfg, jobs=args.jobs)
        row = {
            "video": video.video_id, "category": video.category,
            "edge": video.gt.hinge.edge_id, "pred_edge": res.model.hinge.edge_id,
            "template": res.template_id, "hand": res.hand, "loss": round(res.loss.total, 3),
            "seconds": round(time.perf_counter() - t0, 1),
            "cubeopt": summarize(res.model, video.gt, args.points),
            "cuberand": summarize(cube_rand(video, args.seed).model, video.gt, args.points),
        }
        print(json.dumps(row), flush=True)
    print(json.dumps({"total_seconds": round(time.perf_counter() - t_all, 1)}), flush=True)


if __name__ == "__main__":
    main()
