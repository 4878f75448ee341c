"""Benchmark pairs: measures with analytically known optimal transport maps.

A pair is a source mixture P plus a convex potential composition whose
gradient T is, by construction, the optimal quadratic-cost transport map
from P to its pushforward T#P.  The high-dimensional construction fits two
convex potentials so their gradients push P onto two random 10-component
mixtures, then averages the potentials; the half-sum gradient defines the
target measure and stays a gradient of a convex function.

Since the ground truths are gradients of dense input-convex networks, the
evaluation can slightly favor solvers that parametrize their potentials
the same way; this bias is inherent to the construction.

Pairs persist as ``.w2pair`` containers (JSON header + named little-endian
float64 sections, see :mod:`w2bench.container`).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import adcore as ad
from . import icnn, solvers
from .container import read_container, write_container
from .icnn import IcnnPotential
from .measures import (
    GaussianMixture,
    MixtureSampler,
    PushforwardSampler,
    Sampler,
    normalize_mixture,
    random_mixture,
)

__all__ = [
    "PotentialComposition",
    "BenchmarkPair",
    "PairConstructionError",
    "compose_potentials",
    "ground_truth",
    "build_hd_pair",
    "identity_pair",
    "SyntheticPair",
    "save_pair",
    "load_pair",
    "cyclical_monotonicity_defect",
    "PAIR_FORMAT",
]

PAIR_FORMAT = "w2pair/1"
SOURCE_COMPONENTS = 3
TARGET_COMPONENTS = 10


class PairConstructionError(Exception):
    pass


@dataclass(frozen=True)
class PotentialComposition:
    """Nonnegative combination of convex potentials, by sum or pointwise max."""

    parts: tuple[IcnnPotential, ...]
    weights: tuple[float, ...]
    mode: str  # "sum" | "max"

    def value(self, x: np.ndarray) -> np.ndarray:
        vals = np.stack([w * icnn.potential(p, x) for p, w in zip(self.parts, self.weights)])
        if self.mode == "sum":
            return np.sum(vals, axis=0)
        return np.max(vals, axis=0)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        grads = np.stack(
            [w * icnn.map_grad(p, x) for p, w in zip(self.parts, self.weights)]
        )
        if self.mode == "sum":
            out = np.sum(grads, axis=0)
        else:
            vals = np.stack(
                [w * icnn.potential(p, x) for p, w in zip(self.parts, self.weights)]
            )
            active = np.argmax(vals, axis=0)  # first index on ties
            out = grads[active, np.arange(x.shape[0])]
        return out[0] if squeeze else out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.grad(x)


def compose_potentials(
    parts: Sequence[tuple[IcnnPotential, float]], mode: str = "sum"
) -> PotentialComposition:
    if mode not in ("sum", "max"):
        raise ValueError(f"unknown composition mode {mode!r}")
    if not parts:
        raise ValueError("empty composition")
    weights = tuple(float(w) for _, w in parts)
    if any(w < 0 for w in weights):
        raise ValueError("composition weights must be nonnegative")
    return PotentialComposition(
        parts=tuple(p for p, _ in parts), weights=weights, mode=mode
    )


@dataclass
class BenchmarkPair:
    """Source measure plus ground-truth convex-gradient transport map."""

    dim: int
    source: GaussianMixture
    composition: PotentialComposition
    meta: dict

    def source_sampler(self, seed) -> Sampler:
        return MixtureSampler(self.source, seed)

    def target_sampler(self, seed) -> Sampler:
        return PushforwardSampler(self.source_sampler(seed), self.composition.grad)

    def ground_truth(self, x: np.ndarray) -> np.ndarray:
        return self.composition.grad(x)

    def swapped(self):
        from .measures import MeasurePair

        return MeasurePair(
            dim=self.dim, _source=self.target_sampler, _target=self.source_sampler
        )


def ground_truth(pair: BenchmarkPair, x: np.ndarray) -> np.ndarray:
    """Exact ground-truth map on a batch (no sampling involved)."""
    return pair.ground_truth(np.asarray(x, dtype=np.float64))


def build_hd_pair(
    dim: int,
    seed: int,
    fit_config: solvers.SolverConfig | None = None,
    threads: int = 1,
) -> BenchmarkPair:
    """The high-dimensional benchmark pair for one dimension and seed.

    P is a normalized random 3-component mixture; two potentials are fitted
    so their gradients push P approximately onto normalized random
    10-component mixtures; the ground truth is the gradient of their
    half-sum.  ``fit_config`` overrides the potential-fitting run (kind W2).
    The two fits are independent runs and may execute in parallel threads
    without affecting the result.
    """
    ss = np.random.SeedSequence(seed)
    s_p, s_q1, s_q2, s_f1, s_f2 = ss.spawn(5)
    p = normalize_mixture(random_mixture(dim, SOURCE_COMPONENTS, s_p))
    q1 = normalize_mixture(random_mixture(dim, TARGET_COMPONENTS, s_q1))
    q2 = normalize_mixture(random_mixture(dim, TARGET_COMPONENTS, s_q2))

    from dataclasses import replace

    from .measures import pair_from_mixtures

    def fit(job):
        q, s_fit = job
        base = fit_config if fit_config is not None else solvers.default_config("W2")
        cfg = replace(base, kind="W2", seed=int(s_fit.generate_state(1)[0] % 2**31))
        out = solvers.train_w2(pair_from_mixtures(p, q), cfg)
        if out.diverged:
            raise PairConstructionError(
                f"potential fit diverged at iteration {out.iterations_run} "
                f"(dim={dim}, seed={seed})"
            )
        return out.psi

    jobs = [(q1, s_f1), (q2, s_f2)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit, jobs))
    else:
        fitted = [fit(j) for j in jobs]
    parts = [(net, 0.5) for net in fitted]

    composition = compose_potentials(parts, mode="sum")
    meta = {
        "dim": dim,
        "seed": seed,
        "source_components": SOURCE_COMPONENTS,
        "target_components": TARGET_COMPONENTS,
        "fit_iters": (fit_config or solvers.default_config("W2")).total_iters,
    }
    return BenchmarkPair(dim=dim, source=p, composition=composition, meta=meta)


def identity_pair(dim: int, seed: int) -> BenchmarkPair:
    """Pair (P, P) whose ground truth is exactly the identity map.

    Realized as a zero network with unit strong-convexity term, so the
    potential is ||x||^2 / 2 and its gradient is the identity.
    """
    p = normalize_mixture(random_mixture(dim, SOURCE_COMPONENTS, seed))
    net = icnn.make_dense_icnn(dim, seed=0, constrained=True, beta=1.0)
    net.params = {k: np.zeros_like(v) for k, v in net.params.items()}
    comp = compose_potentials([(net, 1.0)], mode="sum")
    return BenchmarkPair(
        dim=dim,
        source=p,
        composition=comp,
        meta={"dim": dim, "seed": seed, "identity": True},
    )


@dataclass
class SyntheticPair:
    """A pair with an arbitrary callable ground truth, for tests/baselines."""

    dim: int
    source: GaussianMixture
    transport: object

    def source_sampler(self, seed) -> Sampler:
        return MixtureSampler(self.source, seed)

    def target_sampler(self, seed) -> Sampler:
        return PushforwardSampler(self.source_sampler(seed), self.transport)

    def ground_truth(self, x: np.ndarray) -> np.ndarray:
        return self.transport(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# persistence


def _icnn_meta(p: IcnnPotential) -> dict:
    return {
        "dim": p.dim,
        "widths": list(p.widths),
        "rank": p.rank,
        "beta": p.beta,
        "constrained": p.constrained,
    }


def _icnn_sections(p: IcnnPotential, prefix: str) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}{k}", p.params[k]) for k in sorted(p.params)]


def _icnn_from(meta: dict, sections: dict[str, np.ndarray], prefix: str) -> IcnnPotential:
    net = icnn.make_dense_icnn(
        meta["dim"],
        seed=0,
        constrained=meta["constrained"],
        beta=meta["beta"],
        rank=meta["rank"],
        widths=tuple(meta["widths"]),
    )
    net.params = {
        k: sections[f"{prefix}{k}"].copy() for k in sorted(net.params)
    }
    return net


def save_pair(pair: BenchmarkPair, path: str | Path) -> None:
    meta = {
        "pair": pair.meta,
        "dim": pair.dim,
        "source_sigma": pair.source.sigma,
        "composition": {
            "mode": pair.composition.mode,
            "weights": list(pair.composition.weights),
            "parts": [_icnn_meta(p) for p in pair.composition.parts],
        },
    }
    sections = [
        ("source.means", pair.source.means),
        ("source.covs", pair.source.covs),
    ]
    for i, part in enumerate(pair.composition.parts):
        sections.extend(_icnn_sections(part, f"part{i}."))
    write_container(path, PAIR_FORMAT, meta, sections)


def load_pair(path: str | Path) -> BenchmarkPair:
    meta, sections = read_container(path, PAIR_FORMAT)
    source = GaussianMixture(
        means=sections["source.means"],
        covs=sections["source.covs"],
        sigma=meta["source_sigma"],
    )
    comp_meta = meta["composition"]
    parts = [
        _icnn_from(pm, sections, f"part{i}.")
        for i, pm in enumerate(comp_meta["parts"])
    ]
    composition = PotentialComposition(
        parts=tuple(parts),
        weights=tuple(comp_meta["weights"]),
        mode=comp_meta["mode"],
    )
    return BenchmarkPair(
        dim=meta["dim"], source=source, composition=composition, meta=meta["pair"]
    )


# ---------------------------------------------------------------------------
# optimality certificate


def cyclical_monotonicity_defect(
    pair, n_cycles: int = 1000, cycle_len: int = 5, seed: int = 0
) -> float:
    """Worst cycle sum min over random cycles; nonnegative iff monotone.

    For the gradient of a convex function, sum_i <T(x_i), x_i - x_{i+1}>
    over any cycle is nonnegative; the returned value is the minimum
    observed sum (close to zero from above for a valid ground truth).
    """
    sampler = pair.source_sampler(seed)
    worst = np.inf
    for _ in range(n_cycles):
        xs = sampler.sample(cycle_len)
        ts = pair.ground_truth(xs)
        total = float(np.sum(ts * (xs - np.roll(xs, -1, axis=0))))
        worst = min(worst, total)
    return worst
