"""Experiment driver: generate pairs, train solvers, evaluate, render reports.

All commands are deterministic for fixed seeds.  Evaluation never trains
and training never evaluates; serialized artifacts are the only coupling
between the two.  Exit codes: 0 ok, 2 diverged, 3 config error, 4 io
error.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import benchmark, metrics, solvers
from .container import ContainerError, read_container, write_container
from .icnn import IcnnPotential

__all__ = [
    "ConfigError",
    "HarnessIoError",
    "FIT_FORMAT",
    "cmd_generate",
    "cmd_train",
    "cmd_eval",
    "pca_scatter",
    "save_output",
    "load_output",
    "write_trace",
    "EXIT_OK",
    "EXIT_DIVERGED",
    "EXIT_CONFIG",
    "EXIT_IO",
]

FIT_FORMAT = "w2fit/1"

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3
EXIT_IO = 4


class ConfigError(Exception):
    pass


class HarnessIoError(Exception):
    pass


# ---------------------------------------------------------------------------
# solver artifact persistence


def _net_meta(net: IcnnPotential | None) -> dict | None:
    if net is None:
        return None
    return {
        "dim": net.dim,
        "widths": list(net.widths),
        "rank": net.rank,
        "beta": net.beta,
        "constrained": net.constrained,
    }


def save_output(out: solvers.SolverOutput, path: str | Path) -> None:
    from dataclasses import asdict

    meta = {
        "kind": out.kind,
        "dim": out.dim,
        "config": asdict(out.config),
        "diverged": out.diverged,
        "direction": out.direction,
        "iterations_run": out.iterations_run,
        "skipped_samples": out.skipped_samples,
        "psi": _net_meta(out.psi),
        "phi": _net_meta(out.phi),
    }
    sections: list[tuple[str, np.ndarray]] = []
    for prefix, net in (("psi.", out.psi), ("phi.", out.phi)):
        if net is not None:
            sections.extend((prefix + k, net.params[k]) for k in sorted(net.params))
    # wall-clock seconds stay in the .trace log; the artifact itself is
    # byte-deterministic for a fixed seed
    trace = np.array(
        [[it, loss] for it, loss, _ in out.trace], dtype=np.float64
    ).reshape(-1, 2)
    sections.append(("trace", trace))
    write_container(path, FIT_FORMAT, meta, sections)


def _net_from(meta: dict | None, sections: dict, prefix: str) -> IcnnPotential | None:
    if meta is None:
        return None
    from . import icnn

    net = icnn.make_dense_icnn(
        meta["dim"],
        seed=0,
        constrained=meta["constrained"],
        beta=meta["beta"],
        rank=meta["rank"],
        widths=tuple(meta["widths"]),
    )
    net.params = {k: sections[prefix + k].copy() for k in sorted(net.params)}
    return net


def load_output(path: str | Path) -> solvers.SolverOutput:
    meta, sections = read_container(path, FIT_FORMAT)
    cfg = solvers.SolverConfig(**meta["config"])
    trace = [(int(r[0]), float(r[1]), 0.0) for r in sections["trace"]]
    return solvers.SolverOutput(
        kind=meta["kind"],
        dim=meta["dim"],
        config=cfg,
        psi=_net_from(meta["psi"], sections, "psi."),
        phi=_net_from(meta["phi"], sections, "phi."),
        trace=trace,
        diverged=meta["diverged"],
        direction=meta["direction"],
        iterations_run=meta["iterations_run"],
        skipped_samples=meta["skipped_samples"],
    )


def write_trace(out: solvers.SolverOutput, path: str | Path) -> None:
    """Line log, one `iter,loss,seconds` row per logged step."""
    with open(path, "w", encoding="utf-8") as fh:
        for it, loss, sec in out.trace:
            fh.write(f"{it},{loss!r},{sec:.3f}\n")


# ---------------------------------------------------------------------------
# commands


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def cmd_generate(
    dims: list[int],
    seeds: list[int],
    out_dir: str | Path,
    iters_scale: float = 1.0,
    threads: int = 1,
) -> tuple[Path, int]:
    """Build one pair per (dim, seed); returns (manifest path, exit code)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    failed = 0
    for dim in dims:
        for seed in seeds:
            name = f"d{dim}_s{seed}.w2pair"
            path = out_dir / name
            fit_cfg = solvers.scale_iters(solvers.default_config("W2"), iters_scale)
            try:
                pair = benchmark.build_hd_pair(dim, seed, fit_config=fit_cfg, threads=threads)
                benchmark.save_pair(pair, path)
                entries.append(
                    {
                        "file": name,
                        "dim": dim,
                        "seed": seed,
                        "sha256": _sha256_file(path),
                        "status": "ok",
                    }
                )
            except benchmark.PairConstructionError as e:
                failed += 1
                entries.append(
                    {"file": name, "dim": dim, "seed": seed, "status": f"failed: {e}"}
                )
    manifest = out_dir / "manifest.json"
    manifest.write_text(
        json.dumps({"pairs": entries}, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return manifest, EXIT_DIVERGED if failed else EXIT_OK


@dataclass
class TrainJob:
    pair_path: Path
    kind: str
    seed: int
    iters_scale: float
    out_dir: Path

    def artifact_name(self) -> str:
        stem = self.pair_path.stem
        kind = self.kind.replace(":", "")
        return f"{kind}_{stem}_s{self.seed}"


def _run_train_job(job: TrainJob) -> tuple[Path, bool]:
    pair = benchmark.load_pair(job.pair_path)
    cfg = solvers.default_config(job.kind, seed=job.seed)
    cfg = solvers.scale_iters(cfg, job.iters_scale)
    out = solvers.train(pair, cfg)
    art = job.out_dir / (job.artifact_name() + ".w2fit")
    save_output(out, art)
    write_trace(out, job.out_dir / (job.artifact_name() + ".trace"))
    return art, out.diverged


def cmd_train(
    pair_paths: list[str | Path],
    kinds: list[str],
    out_dir: str | Path,
    seed: int = 0,
    iters_scale: float = 1.0,
    threads: int = 1,
) -> tuple[list[Path], int]:
    """Train each solver kind on each pair; jobs may run on a thread pool."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in kinds:
        if k not in solvers.SOLVER_KINDS:
            raise ConfigError(f"unknown solver kind {k!r}")
    jobs = [
        TrainJob(Path(p), k, seed, iters_scale, out_dir)
        for p in pair_paths
        for k in kinds
    ]
    results: list[tuple[Path, bool]] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_train_job, jobs))
    else:
        results = [_run_train_job(j) for j in jobs]
    any_diverged = any(d for _, d in results)
    return [p for p, _ in results], EXIT_DIVERGED if any_diverged else EXIT_OK


def cmd_eval(
    pair_paths: list[str | Path],
    artifact_paths: list[str | Path],
    out_dir: str | Path,
    n_samples: int = 2**14,
    eval_seed: int = metrics.DEFAULT_EVAL_SEED,
) -> tuple[Path, Path]:
    """Score baselines plus artifacts; writes report.csv and matrix.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = metrics.EvalConfig(n_samples=n_samples, seed=eval_seed)
    pairs = {}
    for p in pair_paths:
        pair = benchmark.load_pair(p)
        if pair.dim in pairs:
            raise ConfigError(f"two pairs share dimension {pair.dim}; evaluate separately")
        pairs[pair.dim] = pair
    reports = []
    for pair in pairs.values():
        reports.extend(metrics.baseline_reports(pair, cfg))
    for a in artifact_paths:
        out = load_output(a)
        if out.dim not in pairs:
            raise ConfigError(
                f"artifact {a} has dimension {out.dim}, no matching pair loaded"
            )
        reports.append(metrics.evaluate(out, pairs[out.dim], cfg))
    csv_path = out_dir / "report.csv"
    csv_path.write_text(metrics.reports_to_csv(reports), encoding="utf-8")
    matrix_path = out_dir / "matrix.txt"
    matrix_path.write_text(metrics.render_matrix(reports), encoding="utf-8")
    return csv_path, matrix_path


def pca_scatter(
    pair,
    transport=None,
    n: int = 512,
    seed: int = 777,
) -> dict[str, np.ndarray]:
    """Project source/target/mapped clouds onto the target's two principal axes.

    Axes come from the eigendecomposition of the target sample covariance;
    for one-dimensional pairs the projection falls back to the coordinate
    axes (second component zero).
    """
    if n < 2:
        raise ValueError("need at least two points")
    ss = np.random.SeedSequence(seed).spawn(2)
    x = pair.source_sampler(ss[0]).sample(n)
    y = pair.target_sampler(ss[1]).sample(n)
    if pair.dim == 1:
        def proj(pts):
            return np.column_stack([pts[:, 0], np.zeros(len(pts))])
    else:
        center = y.mean(axis=0)
        cov = np.cov((y - center).T, bias=True)
        vals, vecs = np.linalg.eigh(cov)
        axes = vecs[:, np.argsort(vals)[::-1][:2]]

        def proj(pts):
            return (pts - center) @ axes

    clouds = {"source": proj(x), "target": proj(y)}
    if transport is not None:
        clouds["mapped"] = proj(transport(x))
    return clouds


def write_scatter(clouds: dict[str, np.ndarray], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, pts in clouds.items():
        path = out_dir / f"{name}.xy"
        with open(path, "w", encoding="utf-8") as fh:
            for px, py in pts:
                fh.write(f"{float(px)!r} {float(py)!r}\n")
        written.append(path)
    return written
