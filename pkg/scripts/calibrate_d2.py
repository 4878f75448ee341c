"""Desk-scale calibration: build a D=2 pair, train every solver, report metrics."""

import argparse
import time

import numpy as np

from w2bench import benchmark as bm
from w2bench import metrics as mt
from w2bench import solvers as sv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--scale", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--kinds", nargs="*", default=["W2", "MMv2", "MM", "MM-B", "QC", "LS"])
    ap.add_argument("--eval-n", type=int, default=2**14)
    args = ap.parse_args()

    t0 = time.perf_counter()
    fit_cfg = sv.scale_iters(sv.default_config("W2"), args.scale)
    pair = bm.build_hd_pair(args.dim, seed=args.seed, fit_config=fit_cfg)
    print(f"pair D={args.dim} built in {time.perf_counter() - t0:.0f}s", flush=True)

    ecfg = mt.EvalConfig(n_samples=args.eval_n)
    for rep in mt.baseline_reports(pair, ecfg):
        print(f"{rep.solver:6s} uvp={rep.uvp_pct:8.3f} cos={rep.cos}", flush=True)

    for kind in args.kinds:
        cfg = sv.scale_iters(sv.default_config(kind, seed=args.seed + 1), args.scale)
        t1 = time.perf_counter()
        out = sv.train(pair, cfg)
        rep = mt.evaluate(out, pair, ecfg)
        print(
            f"{kind:6s} uvp={rep.uvp_pct:8.3f} cos={rep.cos if rep.cos is None else round(rep.cos, 4)}"
            f" div={out.diverged} iters={out.iterations_run}"
            f" time={time.perf_counter() - t1:.0f}s",
            flush=True,
        )


if __name__ == "__main__":
    main()
