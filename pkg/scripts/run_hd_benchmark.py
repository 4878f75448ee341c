"""End-to-end benchmark run: generate pairs, train the zoo, render the matrix.

Example (desk scale, two dimensions, two threads):

    python scripts/run_hd_benchmark.py --dims 2 4 --out results/ --threads 2
"""

import argparse
import sys
from pathlib import Path

from w2bench import harness


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument(
        "--solvers",
        nargs="+",
        default=["W2", "MMv2", "MM", "MM-B", "QC", "LS"],
    )
    ap.add_argument("--iters-scale", type=float, default=0.1)
    ap.add_argument("--threads", type=int, default=2)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    pair_dir = out / "pairs"
    run_dir = out / "runs"
    report_dir = out / "reports"

    manifest, code = harness.cmd_generate(
        args.dims, [args.seed], pair_dir, iters_scale=args.iters_scale
    )
    print(f"pairs manifest: {manifest}")
    if code != harness.EXIT_OK:
        print("pair generation reported failures", file=sys.stderr)
        return code

    pair_paths = sorted(pair_dir.glob("*.w2pair"))
    artifacts, code = harness.cmd_train(
        pair_paths,
        args.solvers,
        run_dir,
        seed=args.seed,
        iters_scale=args.iters_scale,
        threads=args.threads,
    )
    csv_path, matrix_path = harness.cmd_eval(pair_paths, artifacts, report_dir)
    print(matrix_path.read_text())
    print(f"report: {csv_path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
