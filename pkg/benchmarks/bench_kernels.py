"""Time every kernel under both backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call (JIT compile or cache load) is excluded; each row is the
best of ``--repeat`` runs. Outputs are compared so a speedup never hides a
disagreement.
"""

import argparse
import timeit

import numpy as np

from pigeonpose import kernels
from pigeonpose.geometry import project
from pigeonpose.synthetic import generate_rig


def cases():
    rng = np.random.default_rng(0)
    rig = generate_rig(4)
    pts = rng.uniform(-1, 1, size=(5000, 3)) * [1, 1, 0.3] + [0, 0, 0.2]
    uv = np.stack([project(c, pts) for c in rig], axis=1)
    proj = np.stack([c.projection_matrix for c in rig])
    segs = rng.uniform(0, 640, size=(12, 4))
    corner = rng.uniform(0, 1000, size=(200, 2))
    boxes_a = np.hstack([corner, corner + rng.uniform(10, 80, size=(200, 2))])
    boxes_b = boxes_a + rng.normal(scale=5, size=boxes_a.shape)
    return {
        "label_components 512x512": ("label_components", (rng.random((512, 512)) < 0.45, True)),
        "dlt_batch 5000 pts x 4 views": ("dlt_batch", (proj, uv, np.ones((5000, 4), dtype=bool))),
        "render_capsules 12 segs 640x480": ("render_capsules", (segs, np.full(12, 8.0), 480, 640)),
        "iou_matrix 200x200": ("iou_matrix", (boxes_a, boxes_b)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, equal_nan=True) if a.dtype.kind == "f" else np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    print(f"{'kernel':34s}" + "".join(f"{b + ' ms':>12s}" for b in backends) + f"{'speedup':>10s}  agree")
    for name, (kernel, call_args) in cases().items():
        times, outs = {}, {}
        for b in backends:
            fn = kernels.get_kernels(b)[kernel]
            outs[b] = fn(*call_args)  # warm-up / compile
            times[b] = 1000 * min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        agree = _same(outs["numpy"], outs.get("numba", outs["numpy"]))
        print(f"{name:34s}" + "".join(f"{times[b]:12.2f}" for b in backends) + f"{speed:9.1f}x  {agree}")


if __name__ == "__main__":
    main()
