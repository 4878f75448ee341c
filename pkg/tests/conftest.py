"""Shared fixtures for the acceptance gate.

The expensive fixtures (benchmark pairs and desk-scale solver runs) are
session-scoped and built lazily, so the cheap unit suites never pay for
them.  ``W2B_ACCEPT_SCALE`` can lower the iteration scale for local smoke
runs; the official gate runs at the default 0.1 (one tenth of the
standard iteration counts).

Benchmark pairs are byte-reproducible for fixed seeds, so they are cached
under ``tests/_pair_cache`` and reused across sessions; delete the
directory to force reconstruction.  Solver training (criteria 7, 8, 10)
always runs live.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from w2bench import benchmark as bm
from w2bench import solvers as sv

ACCEPT_SCALE = float(os.environ.get("W2B_ACCEPT_SCALE", "0.1"))
ACCEPT_THREADS = int(os.environ.get("W2B_ACCEPT_THREADS", "2"))
PAIR_SEED_D2 = 11
PAIR_SEED_D16 = 16
TRAIN_SEED = 23

_CACHE_DIR = Path(__file__).parent / "_pair_cache"


def _build_pair(dim: int, seed: int) -> bm.BenchmarkPair:
    cache = _CACHE_DIR / f"d{dim}_s{seed}_sc{ACCEPT_SCALE}.w2pair"
    if cache.exists():
        return bm.load_pair(cache)
    fit_cfg = sv.scale_iters(sv.default_config("W2"), ACCEPT_SCALE)
    pair = bm.build_hd_pair(dim, seed=seed, fit_config=fit_cfg, threads=ACCEPT_THREADS)
    _CACHE_DIR.mkdir(exist_ok=True)
    bm.save_pair(pair, cache)
    return pair


def _train_many(pair, kinds):
    def one(kind):
        cfg = sv.scale_iters(sv.default_config(kind, seed=TRAIN_SEED), ACCEPT_SCALE)
        return kind, sv.train(pair, cfg)

    if ACCEPT_THREADS > 1:
        with ThreadPoolExecutor(max_workers=ACCEPT_THREADS) as pool:
            return dict(pool.map(one, kinds))
    return dict(one(k) for k in kinds)


@pytest.fixture(scope="session")
def pair_d2():
    return _build_pair(2, PAIR_SEED_D2)


@pytest.fixture(scope="session")
def pair_d16():
    return _build_pair(16, PAIR_SEED_D16)


@pytest.fixture(scope="session")
def runs_d2(pair_d2):
    return _train_many(pair_d2, ["W2", "MMv2", "MM", "MM-B", "QC", "LS"])


@pytest.fixture(scope="session")
def runs_d16(pair_d16):
    return _train_many(pair_d16, ["W2", "MM-B", "LS"])
