"""Exact discrete optimal transport on mini-batches.

Two routes share one interface:

* uniform square problems (the only case the mini-batch solvers create)
  are solved by a dense shortest-augmenting-path assignment solver that
  maintains dual variables, O(n^3);
* general marginals go through an exact LP (HiGHS dual simplex), whose
  equality multipliers are the dual potentials.

Returned duals are normalized so that sum_i a_i f_i = 0; duals are only
unique up to shifting mass between f and g by a constant, and downstream
regression targets depend on this convention.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "DiscreteOtResult",
    "solve_exact",
    "brute_force",
    "solve_assignment",
]

_MAX_SIDE = 4096


@dataclass(frozen=True)
class DiscreteOtResult:
    plan: np.ndarray  # (n, m), marginals equal the inputs
    f: np.ndarray  # (n,) dual potential on the rows
    g: np.ndarray  # (m,) dual potential on the columns
    cost: float  # <plan, cost>


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense shortest-augmenting-path assignment with dual updates.

    Returns (row_to_col, u, v) with u_i + v_j <= c_ij everywhere and
    equality on assigned pairs.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("assignment requires a square cost matrix")
    INF = np.inf
    u = np.zeros(n)
    v = np.zeros(n)
    row_of = np.full(n, -1)  # column -> assigned row
    col_of = np.full(n, -1)  # row -> assigned column
    for r in range(n):
        # Dijkstra over columns on reduced costs from free row r.
        dist = c[r] - u[r] - v
        pred = np.full(n, r)
        done = np.zeros(n, dtype=bool)
        sink = -1
        while True:
            j = int(np.argmin(np.where(done, INF, dist)))
            dj = dist[j]
            done[j] = True
            if row_of[j] < 0:
                sink = j
                break
            i = row_of[j]
            # relax through the matched row i
            red = dj + c[i] - u[i] - v - (c[i, j] - u[i] - v[j])
            upd = ~done & (red < dist)
            dist[upd] = red[upd]
            pred[upd] = i
        # dual update along scanned columns
        d_sink = dist[sink]
        u[r] += d_sink
        scanned = done.copy()
        scanned[sink] = False
        cols = np.flatnonzero(scanned)
        if cols.size:
            u[row_of[cols]] += d_sink - dist[cols]
            v[cols] -= d_sink - dist[cols]
        # augment
        j = sink
        while True:
            i = pred[j]
            row_of[j] = i
            col_of[i], j = j, col_of[i]
            if i == r:
                break
    return col_of, u, v


def _check_weights(w: np.ndarray, n: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"{name} has shape {w.shape}, expected ({n},)")
    if np.any(w < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {np.sum(w)!r}, expected 1")
    return w


def solve_exact(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> DiscreteOtResult:
    """Optimal plan and a complementary dual pair for the given marginals."""
    c = np.asarray(cost, dtype=np.float64)
    n, m = c.shape
    if n > _MAX_SIDE or m > _MAX_SIDE:
        raise ValueError(f"cost matrix larger than {_MAX_SIDE} per side")
    a = _check_weights(a, n, "a")
    b = _check_weights(b, m, "b")

    uniform_square = n == m and np.allclose(a, 1.0 / n, atol=1e-12) and np.allclose(
        b, 1.0 / n, atol=1e-12
    )
    if uniform_square:
        col_of, u, v = solve_assignment(c)
        plan = np.zeros((n, n))
        plan[np.arange(n), col_of] = 1.0 / n
        f, g = u, v
    else:
        plan, f, g = _solve_lp(c, a, b)

    shift = float(a @ f)
    f = f - shift
    g = g + shift
    total = float(np.sum(plan * c))
    return DiscreteOtResult(plan=plan, f=f, g=g, cost=total)


def _solve_lp(c: np.ndarray, a: np.ndarray, b: np.ndarray):
    n, m = c.shape
    # equality rows: n row sums then m column sums
    row_idx = np.repeat(np.arange(n), m)
    col_idx = np.tile(np.arange(m), n) + n
    from scipy.sparse import coo_matrix

    data = np.ones(2 * n * m)
    rows = np.concatenate([row_idx, col_idx])
    cols = np.concatenate([np.arange(n * m), np.arange(n * m)])
    A_eq = coo_matrix((data, (rows, cols)), shape=(n + m, n * m))
    res = linprog(
        c.ravel(),
        A_eq=A_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"LP solver failed: {res.message}")
    plan = res.x.reshape(n, m)
    duals = np.asarray(res.eqlin.marginals, dtype=np.float64)
    return plan, duals[:n], duals[n:]


def brute_force(cost: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Exact minimum over all permutations, uniform marginals, n <= 8."""
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("brute_force requires a square cost matrix")
    if n > 8:
        raise ValueError("brute_force limited to n <= 8")
    rows = np.arange(n)
    best = None
    best_perm: tuple[int, ...] = tuple(range(n))
    for perm in itertools.permutations(range(n)):
        total = float(c[rows, perm].sum()) / n
        if best is None or total < best:
            best = total
            best_perm = perm
    assert best is not None
    return best, best_perm
