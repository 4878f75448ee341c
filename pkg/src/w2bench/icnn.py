"""Dense input-convex potentials with input-quadratic skip connections.

Wiring (fixed here and relied on throughout the package):

    q_l(x)   = sum_i (x @ A_{l,i}^T + b_{l,i})^2 + x @ C_l^T + d_l
    z_1      = celu(q_1(x))
    z_{l+1}  = celu(z_l @ W_l^T + q_{l+1}(x))        with W_l >= 0
    psi(x)   = z_K @ w_out + (beta / 2) * ||x||^2    with w_out >= 0

Each q_l is an input-quadratic layer of rank r (r rows across the A_{l,i});
its parameters are never constrained.  The W_l and w_out weights are the
convexity-constrained ones: clamping them at zero keeps every hidden unit a
convex, nondecreasing combination of convex functions, so psi is convex in
x.  The beta term makes psi beta-strongly convex, hence grad(psi) is a
bijection on R^D.  The unconstrained variant (no clamping) uses the same
wiring and is useful as a plain potential network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import adcore as ad

__all__ = [
    "IcnnPotential",
    "InversionError",
    "PotentialGradMap",
    "make_dense_icnn",
    "hidden_widths",
    "init_params",
    "potential_graph",
    "potential",
    "map_grad",
    "project_convex",
    "pretrain_identity",
    "invert_map",
    "CONSTRAINED_PREFIXES",
]

DEFAULT_BETA = 1e-4

# Parameter names starting with these prefixes carry the convexity constraint.
CONSTRAINED_PREFIXES = ("w_hidden_", "w_out")


class InversionError(Exception):
    """Gradient inversion failed to reach the requested tolerance."""


@dataclass
class IcnnPotential:
    """Parameters of one dense input-convex potential.

    ``constrained`` records whether the nonnegativity constraint on the
    hidden weights is enforced; the unconstrained variant shares the
    architecture but is not guaranteed convex.
    """

    dim: int
    widths: tuple[int, ...]
    rank: int
    beta: float
    constrained: bool
    params: dict[str, np.ndarray]
    _graphs: dict = field(default_factory=dict, repr=False, compare=False)

    def copy(self) -> "IcnnPotential":
        return replace(self, params={k: v.copy() for k, v in self.params.items()}, _graphs={})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def hidden_widths(dim: int) -> tuple[int, int, int]:
    """Layer sizing rule: (max(2D, 64), max(2D, 64), max(D, 32))."""
    return (max(2 * dim, 64), max(2 * dim, 64), max(dim, 32))


def init_params(
    dim: int,
    widths: tuple[int, ...],
    rank: int,
    rng: np.random.Generator,
    constrained: bool,
) -> dict[str, np.ndarray]:
    """Fan-in scaled symmetric uniform init; constrained weights start nonnegative."""
    p: dict[str, np.ndarray] = {}
    for l, w in enumerate(widths):
        a = math.sqrt(3.0 / dim)
        for i in range(rank):
            p[f"quad_a_{l}_{i}"] = rng.uniform(-a, a, size=(w, dim))
            p[f"quad_b_{l}_{i}"] = np.zeros(w)
        p[f"skip_c_{l}"] = rng.uniform(-a, a, size=(w, dim))
        p[f"skip_d_{l}"] = np.zeros(w)
    for l in range(len(widths) - 1):
        fan = widths[l]
        if constrained:
            p[f"w_hidden_{l}"] = rng.uniform(0.0, 2.0 / fan, size=(widths[l + 1], fan))
        else:
            b = math.sqrt(3.0 / fan)
            p[f"w_hidden_{l}"] = rng.uniform(-b, b, size=(widths[l + 1], fan))
    fan = widths[-1]
    if constrained:
        p["w_out"] = rng.uniform(0.0, 2.0 / fan, size=fan)
    else:
        b = math.sqrt(3.0 / fan)
        p["w_out"] = rng.uniform(-b, b, size=fan)
    return p


def make_dense_icnn(
    dim: int,
    seed: int,
    constrained: bool = True,
    beta: float = DEFAULT_BETA,
    rank: int = 1,
    widths: tuple[int, ...] | None = None,
) -> IcnnPotential:
    """A freshly initialized potential sized by :func:`hidden_widths`."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if widths is None:
        widths = hidden_widths(dim)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(seed))
    params = init_params(dim, widths, rank, rng, constrained)
    return IcnnPotential(
        dim=dim,
        widths=tuple(widths),
        rank=rank,
        beta=beta,
        constrained=constrained,
        params=params,
    )


# ---------------------------------------------------------------------------
# graph construction


def potential_graph(psi: IcnnPotential, x: ad.Node, prefix: str = "") -> ad.Node:
    """Emit psi(x) into a graph.  x may be a batch (n, D) or a vector (D,).

    Parameter leaves are named ``prefix + key`` so several potentials can
    share one loss graph.
    """
    batched = len(x.shape) == 2
    d = x.shape[1] if batched else x.shape[0]
    if d != psi.dim:
        raise ad.ShapeError(f"input dim {d} != potential dim {psi.dim}")

    def P(key: str) -> ad.Node:
        return ad.param(prefix + key, psi.params[key].shape)

    def quad(l: int) -> ad.Node:
        terms = None
        for i in range(psi.rank):
            t = ad.affine(x, P(f"quad_a_{l}_{i}"), P(f"quad_b_{l}_{i}"))
            t = ad.square(t)
            terms = t if terms is None else ad.add(terms, t)
        lin = ad.affine(x, P(f"skip_c_{l}"), P(f"skip_d_{l}"))
        return ad.add(terms, lin)

    z = ad.celu(quad(0))
    for l in range(1, len(psi.widths)):
        pre = ad.add(ad.matmul(z, ad.transpose(P(f"w_hidden_{l - 1}"))), quad(l))
        z = ad.celu(pre)
    if batched:
        out = ad.matmul(z, P("w_out"))
        reg = ad.scale(ad.sq_norm(x, axis=1), psi.beta / 2.0)
    else:
        out = ad.dot(z, P("w_out"))
        reg = ad.scale(ad.sq_norm(x), psi.beta / 2.0)
    return ad.add(out, reg)


def bind_params(psi: IcnnPotential, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in psi.params.items()}


def _value_plan(psi: IcnnPotential, n: int | None) -> ad.Compiled:
    key = ("value", n)
    if key not in psi._graphs:
        x = ad.leaf("x", (n, psi.dim) if n is not None else (psi.dim,))
        psi._graphs[key] = ad.compile_nodes([potential_graph(psi, x)])
    return psi._graphs[key]


def _grad_plan(psi: IcnnPotential, n: int | None) -> ad.Compiled:
    key = ("grad", n)
    if key not in psi._graphs:
        x = ad.leaf("x", (n, psi.dim) if n is not None else (psi.dim,))
        out = potential_graph(psi, x)
        root = ad.reduce_sum(out) if n is not None else out
        g = ad.gradients(root, [x])[x]
        psi._graphs[key] = ad.compile_nodes([g])
    return psi._graphs[key]


def potential(psi: IcnnPotential, x: np.ndarray) -> np.ndarray:
    """psi(x) for a vector (scalar out) or a batch of rows (vector out)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] if x.ndim == 2 else None
    plan = _value_plan(psi, n)
    return plan.run({"x": x, **bind_params(psi)})[0]


def map_grad(psi: IcnnPotential, x: np.ndarray) -> np.ndarray:
    """The transport map grad(psi), evaluated row-wise."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] if x.ndim == 2 else None
    plan = _grad_plan(psi, n)
    return plan.run({"x": x, **bind_params(psi)})[0]


def project_convex(psi: IcnnPotential) -> IcnnPotential:
    """Clamp the convexity-constrained weights at zero.

    No-op for unconstrained potentials.  Idempotent.
    """
    if not psi.constrained:
        return psi
    params = dict(psi.params)
    for k in params:
        if k.startswith(CONSTRAINED_PREFIXES):
            params[k] = np.maximum(params[k], 0.0)
    return replace(psi, params=params, _graphs=psi._graphs)


# ---------------------------------------------------------------------------
# identity pretraining


def pretrain_identity(
    psi: IcnnPotential,
    sampler,
    iters: int,
    lr: float = 1e-3,
    batch: int = 256,
    stop_rel_err: float | None = None,
) -> tuple[IcnnPotential, float]:
    """Fit grad(psi)(x) ~ x on samples, returning (psi, relative error).

    The objective is E||grad psi(x) - x||^2 / E||x||^2; ``stop_rel_err``
    enables early stopping once the running estimate drops below it.
    Raises :class:`~w2bench.adcore.DivergenceError` on a non-finite loss.
    """
    psi = psi.copy()
    if iters == 0:
        x = sampler.sample(batch)
        g = map_grad(psi, x)
        denom = float(np.mean(np.sum(x * x, axis=1)))
        return psi, float(np.mean(np.sum((g - x) ** 2, axis=1))) / max(denom, 1e-300)

    x = ad.leaf("x", (batch, psi.dim))
    out = potential_graph(psi, x)
    gx = ad.gradients(ad.reduce_sum(out), [x])[x]
    loss = ad.reduce_mean(ad.sq_norm(ad.sub(gx, x), axis=1))
    params = [n for n in ad.Graph(loss).leaves(role="param")]
    grads = ad.gradients(loss, params)
    plan = ad.compile_nodes([loss] + [grads[p] for p in params])
    names = [p.aux[0] for p in params]

    state = ad.adam_init(psi.params)
    rel = math.inf
    for it in range(iters):
        xb = sampler.sample(batch)
        with np.errstate(all="ignore"):
            vals = plan.run({"x": xb, **psi.params})
        lv = float(vals[0])
        if not math.isfinite(lv):
            raise ad.DivergenceError(f"identity pretraining diverged at iter {it}")
        gdict = dict(zip(names, vals[1:]))
        psi.params, state = ad.adam_step(psi.params, gdict, state, lr)
        psi = project_convex(psi)
        if stop_rel_err is not None and (it + 1) % 50 == 0:
            denom = float(np.mean(np.sum(xb * xb, axis=1)))
            rel = lv / max(denom, 1e-300)
            if rel < stop_rel_err:
                break
    xb = sampler.sample(batch)
    g = map_grad(psi, xb)
    denom = float(np.mean(np.sum(xb * xb, axis=1)))
    rel = float(np.mean(np.sum((g - xb) ** 2, axis=1))) / max(denom, 1e-300)
    return psi, rel


# ---------------------------------------------------------------------------
# gradient inversion


def _curvature_estimate(psi: IcnnPotential, x0: np.ndarray, iters: int = 12) -> np.ndarray:
    """Per-row power-iteration estimate of the local Hessian's top eigenvalue.

    Hessian-vector products are taken by central differences of the
    gradient map; the probe stream is fixed so inversion is deterministic.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
    n, d = x0.shape
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    h = 1e-4
    lam = np.ones(n)
    for _ in range(iters):
        hv = (map_grad(psi, x0 + h * v) - map_grad(psi, x0 - h * v)) / (2.0 * h)
        lam = np.abs(np.sum(v * hv, axis=1))
        norms = np.linalg.norm(hv, axis=1, keepdims=True)
        v = hv / np.maximum(norms, 1e-30)
    return np.maximum(lam, psi.beta)


@dataclass(frozen=True)
class PotentialGradMap:
    """The transport map x -> grad(psi)(x) as a plain callable."""

    psi: IcnnPotential

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return map_grad(self.psi, x)


def invert_map(
    psi: IcnnPotential,
    y: np.ndarray,
    tol: float,
    max_iter: int = 5000,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve grad(psi)(x) = y for each row of y by convex minimization.

    Minimizes psi(x) - <x, y> with a fixed step 1 / (beta + L) per row,
    where L is a power-iteration curvature estimate.  Returns ``(x, v)``
    with per-row residual ||grad psi(x) - y|| <= tol and
    ``v = psi(x) - <x, y> + ||y||^2 / 2``, the optimal value of the inner
    conjugate problem min_x [||x - y||^2 / 2 - f(x)] for
    f = ||.||^2 / 2 - psi.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None, :]
    lam = _curvature_estimate(psi, y)
    step = (1.0 / (psi.beta + lam))[:, None]
    x = y.copy()
    for _ in range(max_iter):
        r = map_grad(psi, x) - y
        if float(np.max(np.linalg.norm(r, axis=1))) <= tol:
            break
        x = x - step * r
    else:
        bad = int(np.sum(np.linalg.norm(map_grad(psi, x) - y, axis=1) > tol))
        raise InversionError(
            f"inversion cap {max_iter} reached with {bad} rows above tol={tol}"
        )
    value = potential(psi, x) - np.sum(x * y, axis=1) + 0.5 * np.sum(y * y, axis=1)
    if squeeze:
        return x[0], value[0]
    return x, value
