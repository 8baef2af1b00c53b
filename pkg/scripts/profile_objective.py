"""Time one objective evaluation (loss and gradient) on a suite-sized video."""
import argparse
import timeit

from artifit import synth
from artifit.fitter import depth_heuristic, make_templates
from artifit.objective import Objective


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    video = synth.gen_suite(1, seed=0, n_frames=args.frames)[0]
    template = make_templates(video.camera, depth_heuristic(video))[0]
    obj = Objective(video, template.edge_id, "left")
    x = template.initial_vector(video.n_frames)
    obj.evaluate(x)  # compile
    for grad in (False, True):
        t = timeit.timeit(lambda: obj.evaluate(x, grad=grad), number=args.repeat) / args.repeat
        print(f"evaluate(grad={grad}): {1e3 * t:.2f} ms")
    print(f"one start of 500 iterations: about {500 * t:.1f} s")


if __name__ == "__main__":
    main()
