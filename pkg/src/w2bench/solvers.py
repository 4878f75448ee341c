"""Dual-form solvers for quadratic-cost optimal transport.

All solvers fit potential networks against sample access to a measure pair
(P, Q) and expose the fitted forward map through :func:`extract_map`.  The
potential is always parametrized as f(x) = ||x||^2 / 2 - psi(x) with psi a
dense ICNN, so the recovered map is x - grad(f)(x) = grad(psi)(x).  The
auxiliary map networks are gradients of a second potential, H = grad(phi).
Solver kinds:

=========  ==================================================================
LS         unconstrained dual ascent with a quadratic penalty on violations
           of f(x) + g(y) <= ||x - y||^2 / 2, sampled over all batch pairs
MM-B       dual ascent where the conjugate's inner minimum is restricted to
           the current source batch (fast, biased upward)
QC         per-batch exact discrete OT; the network regresses onto damped
           discrete dual values
MM         stochastic ascent/descent on the maximin dual with an inner loop
           fitting H to the conjugate argmin (unconstrained networks)
MMv1       single convex-constrained potential; the conjugate is computed
           per sample by inner gradient descent, argmin frozen for the
           outer gradient (envelope step)
MMv2       as MM but with convex-constrained potentials on both sides
W2         joint non-adversarial objective: conjugate surrogate for the
           potential plus a cycle-consistency penalty fitting grad(phi) to
           the inverse of grad(psi)
=========  ==================================================================

Reversed variants ("MM:R", "MMv2:R", "W2:R") train on the swapped pair and
report the fitted inverse-direction network grad(phi) as the forward map.

Default hyperparameters follow one fixed table per kind (see
:func:`default_config`).  Every training run is single-threaded and fully
determined by ``SolverConfig.seed``; separate runs may execute in parallel
threads.  Every iteration draws fresh batches from the pair's samplers.
A non-finite loss stops the run, flags it as diverged, and restores the
last finite checkpoint so the output remains evaluable.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import adcore as ad
from . import discrete_ot, icnn
from .icnn import IcnnPotential, PotentialGradMap
from .measures import MeasurePair, Sampler

__all__ = [
    "SolverConfig",
    "SolverOutput",
    "SOLVER_KINDS",
    "REVERSIBLE_KINDS",
    "base_kind",
    "default_config",
    "scale_iters",
    "config_hash",
    "train",
    "train_ls",
    "train_mmb",
    "train_qc",
    "train_mm",
    "train_mmv1",
    "train_mmv2",
    "train_w2",
    "train_reversed",
    "extract_map",
    "conjugate_inner_values",
]

SOLVER_KINDS = ("LS", "MM-B", "QC", "MM", "MMv1", "MMv2", "W2", "MM:R", "MMv2:R", "W2:R")
REVERSIBLE_KINDS = ("MM", "MMv2", "W2")


@dataclass(frozen=True)
class SolverConfig:
    kind: str
    batch_size: int
    total_iters: int
    lr: float
    seed: int = 0
    quad_eps: float | None = None  # LS penalty scale
    inner_steps: int | None = None  # MM / MMv2 inner cycle length
    inner_iters: int | None = None  # MMv1 conjugate solve cap
    inner_lr: float | None = None  # MMv1 conjugate solve step
    inner_tol: float | None = None  # MMv1 conjugate solve stop
    cycle_weight: float | None = None  # W2; defaults to the pair dimension
    regress_steps: int | None = None  # QC regression steps per batch
    regress_mix: float | None = None  # QC damping toward discrete duals
    log_every: int = 100
    pretrain_iters: int = 3000
    pretrain_stop: float = 1e-2
    pretrain_batch: int = 512

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.batch_size < 1 or self.total_iters < 1 or self.lr <= 0:
            raise ValueError("batch size, iterations and learning rate must be positive")


_DEFAULTS: dict[str, dict] = {
    "LS": dict(batch_size=1024, total_iters=100_000, lr=1e-3, quad_eps=3e-2),
    "MM-B": dict(batch_size=1024, total_iters=100_000, lr=1e-3),
    "QC": dict(batch_size=64, total_iters=100_000, lr=1e-3, regress_steps=1, regress_mix=0.1),
    "MMv1": dict(
        batch_size=1024,
        total_iters=20_000,
        lr=1e-3,
        inner_iters=1000,
        inner_lr=0.3,
        inner_tol=1e-3,
    ),
    "MM": dict(batch_size=1024, total_iters=50_000, lr=1e-3, inner_steps=15),
    "MMv2": dict(batch_size=1024, total_iters=50_000, lr=1e-3, inner_steps=15),
    "W2": dict(batch_size=1024, total_iters=250_000, lr=1e-3, cycle_weight=None),
}


def base_kind(kind: str) -> str:
    return kind[:-2] if kind.endswith(":R") else kind


def default_config(kind: str, seed: int = 0) -> SolverConfig:
    """The standard hyperparameter row for a solver kind."""
    return SolverConfig(kind=kind, seed=seed, **_DEFAULTS[base_kind(kind)])


def scale_iters(cfg: SolverConfig, scale: float) -> SolverConfig:
    """Scale the outer iteration budget (inner loop sizes are untouched)."""
    return replace(cfg, total_iters=max(1, round(cfg.total_iters * scale)))


def config_hash(cfg: SolverConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class SolverOutput:
    kind: str
    dim: int
    config: SolverConfig
    psi: IcnnPotential | None
    phi: IcnnPotential | None
    trace: list[tuple[int, float, float]]  # (iteration, loss, seconds)
    diverged: bool
    direction: str = "forward"
    iterations_run: int = 0
    skipped_samples: int = 0
    extra: dict[str, list[float]] = field(default_factory=dict)


def extract_map(out: SolverOutput) -> PotentialGradMap:
    """The fitted forward transport map.

    Potential-form solvers report grad(psi) (= id - grad f); reversed
    solvers report the fitted inverse-direction network grad(phi).
    """
    if out.direction == "reversed":
        assert out.phi is not None
        return PotentialGradMap(out.phi)
    assert out.psi is not None
    return PotentialGradMap(out.psi)


# ---------------------------------------------------------------------------
# shared pieces


def _child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _prefixed(net: IcnnPotential, prefix: str) -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in net.params.items()}


def _writeback(net: IcnnPotential, prefix: str, params: dict[str, np.ndarray]) -> None:
    net.params = {k: params[prefix + k] for k in net.params}


def _pairwise_halfsq(x: ad.Node, y: ad.Node) -> ad.Node:
    """C_ij = ||x_i - y_j||^2 / 2 over all batch pairs."""
    n, m = x.shape[0], y.shape[0]
    rx = ad.sq_norm(x, axis=1)
    ry = ad.sq_norm(y, axis=1)
    cross = ad.matmul(x, ad.transpose(y))
    return ad.scale(
        ad.add(ad.add(ad.expand_cols(rx, m), ad.expand_rows(ry, n)), ad.scale(cross, -2.0)),
        0.5,
    )


def _f_values(net: IcnnPotential, x: ad.Node, prefix: str) -> ad.Node:
    """f(x) = ||x||^2 / 2 - psi(x), row-wise."""
    return ad.sub(ad.scale(ad.sq_norm(x, axis=1), 0.5), icnn.potential_graph(net, x, prefix))


def _grad_field(net: IcnnPotential, x: ad.Node, prefix: str) -> ad.Node:
    """grad(potential)(x) rows, differentiable in the network parameters."""
    out = icnn.potential_graph(net, x, prefix)
    return ad.gradients(ad.reduce_sum(out), [x])[x]


def _param_nodes(root: ad.Node, prefix: str) -> list[ad.Node]:
    out, seen = [], set()
    for n in ad.topo_order([root]):
        if n.op == "leaf" and n.aux[1] == "param" and n.aux[0].startswith(prefix):
            if n.aux[0] not in seen:
                seen.add(n.aux[0])
                out.append(n)
    return out


class _Run:
    """Trace, checkpointing and divergence bookkeeping for one training run."""

    def __init__(self, cfg: SolverConfig, nets: dict[str, IcnnPotential]):
        self.cfg = cfg
        self.nets = nets
        self.trace: list[tuple[int, float, float]] = []
        self.extra: dict[str, list[float]] = {}
        self.t0 = time.perf_counter()
        self.diverged = False
        self.iterations = 0
        self._ckpt = self._snapshot()

    def _snapshot(self):
        return {k: {p: v.copy() for p, v in net.params.items()} for k, net in self.nets.items()}

    def log(self, it: int, loss: float, **extras: float) -> None:
        self.trace.append((it, loss, time.perf_counter() - self.t0))
        for k, v in extras.items():
            self.extra.setdefault(k, []).append(v)
        self._ckpt = self._snapshot()

    def mark_diverged(self) -> None:
        self.diverged = True
        for k, net in self.nets.items():
            net.params = {p: v.copy() for p, v in self._ckpt[k].items()}


def _prep_net(
    dim: int,
    constrained: bool,
    init_seed: np.random.SeedSequence,
    sampler: Sampler,
    cfg: SolverConfig,
) -> IcnnPotential:
    net = icnn.make_dense_icnn(dim, seed=init_seed, constrained=constrained)
    net, _ = icnn.pretrain_identity(
        net,
        sampler,
        iters=cfg.pretrain_iters,
        lr=1e-3,
        batch=cfg.pretrain_batch,
        stop_rel_err=cfg.pretrain_stop,
    )
    return net


def _loss_plan(loss: ad.Node, param_nodes: list[ad.Node], extra_outputs=()):
    grads = ad.gradients(loss, param_nodes)
    plan = ad.compile_nodes([loss, *extra_outputs, *[grads[p] for p in param_nodes]])
    names = [p.aux[0] for p in param_nodes]
    return plan, names


def _finite(x: float) -> bool:
    return bool(np.isfinite(x))


# ---------------------------------------------------------------------------
# LS: regularized dual ascent


def train_ls(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "LS"
    dim, B = pair.dim, cfg.batch_size
    eps = cfg.quad_eps if cfg.quad_eps is not None else 3e-2
    s_init_p, s_init_q, s_pre_p, s_pre_q, s_p, s_q = _child_seeds(cfg.seed, 6)
    psi = _prep_net(dim, False, s_init_p, pair.source_sampler(s_pre_p), cfg)
    phi = _prep_net(dim, False, s_init_q, pair.target_sampler(s_pre_q), cfg)

    x = ad.leaf("x", (B, dim))
    y = ad.leaf("y", (B, dim))
    f = _f_values(psi, x, "psi.")
    g = _f_values(phi, y, "phi.")
    viol = ad.sub(ad.add(ad.expand_cols(f, B), ad.expand_rows(g, B)), _pairwise_halfsq(x, y))
    penalty = ad.scale(ad.reduce_mean(ad.square(ad.relu(viol))), 1.0 / (4.0 * eps))
    loss = ad.sub(penalty, ad.add(ad.reduce_mean(f), ad.reduce_mean(g)))

    params = _param_nodes(loss, "psi.") + _param_nodes(loss, "phi.")
    plan, names = _loss_plan(loss, params)

    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    run = _Run(cfg, {"psi": psi, "phi": phi})
    live = {**_prefixed(psi, "psi."), **_prefixed(phi, "phi.")}
    state = ad.adam_init(live)
    for it in range(1, cfg.total_iters + 1):
        with np.errstate(all="ignore"):
            vals = plan.run({"x": src.sample(B), "y": tgt.sample(B), **live})
        lv = float(vals[0])
        if not _finite(lv):
            run.mark_diverged()
            break
        live, state = ad.adam_step(live, dict(zip(names, vals[1:])), state, cfg.lr)
        _writeback(psi, "psi.", live)
        _writeback(phi, "phi.", live)
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            run.log(it, lv)
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=phi,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        extra=run.extra,
    )


# ---------------------------------------------------------------------------
# MM-B: batch-restricted conjugate


def train_mmb(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "MM-B"
    dim, B = pair.dim, cfg.batch_size
    s_init, s_pre, s_p, s_q = _child_seeds(cfg.seed, 4)
    psi = _prep_net(dim, False, s_init, pair.source_sampler(s_pre), cfg)

    x = ad.leaf("x", (B, dim))
    y = ad.leaf("y", (B, dim))
    f = _f_values(psi, x, "psi.")
    # inner_j = min_i [ ||x_i - y_j||^2/2 - f(x_i) ]
    m = ad.sub(_pairwise_halfsq(x, y), ad.expand_cols(f, B))
    inner = ad.row_min(ad.transpose(m))
    loss = ad.neg(ad.add(ad.reduce_mean(f), ad.reduce_mean(inner)))

    params = _param_nodes(loss, "psi.")
    plan, names = _loss_plan(loss, params)
    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    run = _Run(cfg, {"psi": psi})
    live = _prefixed(psi, "psi.")
    state = ad.adam_init(live)
    for it in range(1, cfg.total_iters + 1):
        with np.errstate(all="ignore"):
            vals = plan.run({"x": src.sample(B), "y": tgt.sample(B), **live})
        lv = float(vals[0])
        if not _finite(lv):
            run.mark_diverged()
            break
        live, state = ad.adam_step(live, dict(zip(names, vals[1:])), state, cfg.lr)
        _writeback(psi, "psi.", live)
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            run.log(it, lv)
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=None,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        extra=run.extra,
    )


def conjugate_inner_values(psi: IcnnPotential, x_batch: np.ndarray, y: np.ndarray) -> np.ndarray:
    """min over the batch of ||x - y||^2/2 - f(x) for each row of y.

    The batch restriction makes this an upper bound on the true conjugate
    value; the exact value is available through :func:`w2bench.icnn.invert_map`.
    """
    fx = 0.5 * np.sum(x_batch**2, axis=1) - icnn.potential(psi, x_batch)
    c = 0.5 * np.sum((x_batch[:, None, :] - y[None, :, :]) ** 2, axis=2)
    return np.min(c - fx[:, None], axis=0)


# ---------------------------------------------------------------------------
# QC: regression onto discrete duals


def train_qc(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "QC"
    dim, B = pair.dim, cfg.batch_size
    if B != 64:
        warnings.warn(f"QC solver is tuned for batch 64, got {B}", stacklevel=2)
    k_steps = cfg.regress_steps if cfg.regress_steps is not None else 1
    gamma = cfg.regress_mix if cfg.regress_mix is not None else 0.1
    s_init, s_pre, s_p, s_q = _child_seeds(cfg.seed, 4)
    psi = _prep_net(dim, False, s_init, pair.source_sampler(s_pre), cfg)

    x = ad.leaf("x", (B, dim))
    t = ad.leaf("t", (B,))
    f = _f_values(psi, x, "psi.")
    loss = ad.reduce_mean(ad.square(ad.sub(f, t)))
    params = _param_nodes(loss, "psi.")
    plan, names = _loss_plan(loss, params, extra_outputs=[f])

    weights = np.full(B, 1.0 / B)
    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    run = _Run(cfg, {"psi": psi})
    live = _prefixed(psi, "psi.")
    state = ad.adam_init(live)
    for it in range(1, cfg.total_iters + 1):
        xb = src.sample(B)
        yb = tgt.sample(B)
        cost = 0.5 * np.sum((xb[:, None, :] - yb[None, :, :]) ** 2, axis=2)
        res = discrete_ot.solve_exact(cost, weights, weights)
        lv = np.nan
        for _ in range(k_steps):
            with np.errstate(all="ignore"):
                vals = plan.run({"x": xb, "t": np.zeros(B), **live})
            f_cur = vals[1]
            target = (1.0 - gamma) * f_cur + gamma * res.f
            with np.errstate(all="ignore"):
                vals = plan.run({"x": xb, "t": target, **live})
            lv = float(vals[0])
            if not _finite(lv):
                break
            live, state = ad.adam_step(live, dict(zip(names, vals[2:])), state, cfg.lr)
            _writeback(psi, "psi.", live)
        if not _finite(lv):
            run.mark_diverged()
            break
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            gap = abs(float(weights @ res.f + weights @ res.g) - res.cost)
            run.log(it, lv, duality_gap=gap)
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=None,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        extra=run.extra,
    )


# ---------------------------------------------------------------------------
# MM and MMv2: stochastic ascent/descent on the maximin dual


def _train_maximin(pair: MeasurePair, cfg: SolverConfig, constrained: bool) -> SolverOutput:
    dim, B = pair.dim, cfg.batch_size
    k_inner = cfg.inner_steps if cfg.inner_steps is not None else 15
    s_init_p, s_init_q, s_pre_p, s_pre_q, s_p, s_q, s_qi = _child_seeds(cfg.seed, 7)
    psi = _prep_net(dim, constrained, s_init_p, pair.source_sampler(s_pre_p), cfg)
    phi = _prep_net(dim, constrained, s_init_q, pair.target_sampler(s_pre_q), cfg)

    x = ad.leaf("x", (B, dim))
    y = ad.leaf("y", (B, dim))
    hy = _grad_field(phi, y, "phi.")
    f_h = ad.sub(ad.scale(ad.sq_norm(hy, axis=1), 0.5), icnn.potential_graph(psi, hy, "psi."))
    inner_vec = ad.sub(ad.scale(ad.sq_norm(ad.sub(hy, y), axis=1), 0.5), f_h)
    inner_loss = ad.reduce_mean(inner_vec)
    f_x = _f_values(psi, x, "psi.")
    outer_loss = ad.neg(ad.add(ad.reduce_mean(f_x), ad.reduce_mean(inner_vec)))

    phi_params = _param_nodes(inner_loss, "phi.")
    psi_params = _param_nodes(outer_loss, "psi.")
    plan_in, names_in = _loss_plan(inner_loss, phi_params)
    plan_out, names_out = _loss_plan(outer_loss, psi_params)

    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    tgt_inner = pair.target_sampler(s_qi)
    run = _Run(cfg, {"psi": psi, "phi": phi})
    live_psi = _prefixed(psi, "psi.")
    live_phi = _prefixed(phi, "phi.")
    st_psi = ad.adam_init(live_psi)
    st_phi = ad.adam_init(live_phi)
    for it in range(1, cfg.total_iters + 1):
        ok = True
        for _ in range(k_inner):
            with np.errstate(all="ignore"):
                vals = plan_in.run({"y": tgt_inner.sample(B), **live_psi, **live_phi})
            if not _finite(float(vals[0])):
                ok = False
                break
            live_phi, st_phi = ad.adam_step(
                live_phi, dict(zip(names_in, vals[1:])), st_phi, cfg.lr
            )
            _writeback(phi, "phi.", live_phi)
            if constrained:
                phi.params = icnn.project_convex(phi).params
                live_phi = _prefixed(phi, "phi.")
        if not ok:
            run.mark_diverged()
            break
        with np.errstate(all="ignore"):
            vals = plan_out.run({"x": src.sample(B), "y": tgt.sample(B), **live_psi, **live_phi})
        lv = float(vals[0])
        if not _finite(lv):
            run.mark_diverged()
            break
        live_psi, st_psi = ad.adam_step(live_psi, dict(zip(names_out, vals[1:])), st_psi, cfg.lr)
        _writeback(psi, "psi.", live_psi)
        if constrained:
            psi.params = icnn.project_convex(psi).params
            live_psi = _prefixed(psi, "psi.")
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            run.log(it, lv)
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=phi,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        extra=run.extra,
    )


def train_mm(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "MM"
    return _train_maximin(pair, cfg, constrained=False)


def train_mmv2(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "MMv2"
    return _train_maximin(pair, cfg, constrained=True)


# ---------------------------------------------------------------------------
# MMv1: exact conjugate by inner descent, envelope outer step


def _conjugate_argmin(
    psi: IcnnPotential, y: np.ndarray, lr: float, tol: float, max_iter: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradient descent on psi(x) - <x, y>, started at y.

    Returns (x, converged_mask); rows that do not reach ||grad|| <= tol
    within the cap are reported unconverged.
    """
    xcur = y.copy()
    conv = np.zeros(y.shape[0], dtype=bool)
    for _ in range(max_iter):
        g = icnn.map_grad(psi, xcur) - y
        norms = np.linalg.norm(g, axis=1)
        conv = norms <= tol
        if np.all(conv):
            break
        xcur = xcur - lr * g
    return xcur, conv


def train_mmv1(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "MMv1"
    dim, B = pair.dim, cfg.batch_size
    inner_iters = cfg.inner_iters if cfg.inner_iters is not None else 1000
    inner_lr = cfg.inner_lr if cfg.inner_lr is not None else 0.3
    inner_tol = cfg.inner_tol if cfg.inner_tol is not None else 1e-3
    s_init, s_pre, s_p, s_q = _child_seeds(cfg.seed, 4)
    psi = _prep_net(dim, True, s_init, pair.source_sampler(s_pre), cfg)

    x = ad.leaf("x", (B, dim))
    y = ad.leaf("y", (B, dim))
    xs = ad.leaf("xs", (B, dim))  # frozen inner argmin
    mask = ad.leaf("mask", (B,))
    minv = ad.leaf("minv", ())
    psi_x = icnn.potential_graph(psi, x, "psi.")
    f_mean = ad.reduce_mean(ad.sub(ad.scale(ad.sq_norm(x, axis=1), 0.5), psi_x))
    conj = ad.add(
        ad.sub(icnn.potential_graph(psi, xs, "psi."), ad.dot(xs, y)),
        ad.scale(ad.sq_norm(y, axis=1), 0.5),
    )
    conj_mean = ad.mul(ad.reduce_sum(ad.mul(conj, mask)), minv)
    loss = ad.neg(ad.add(f_mean, conj_mean))

    params = _param_nodes(loss, "psi.")
    plan, names = _loss_plan(loss, params)
    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    run = _Run(cfg, {"psi": psi})
    live = _prefixed(psi, "psi.")
    state = ad.adam_init(live)
    skipped = 0
    for it in range(1, cfg.total_iters + 1):
        xb = src.sample(B)
        yb = tgt.sample(B)
        xstar, conv = _conjugate_argmin(psi, yb, inner_lr, inner_tol, inner_iters)
        n_conv = int(np.sum(conv))
        skipped += B - n_conv
        if n_conv == 0:
            run.iterations = it
            continue
        bindings = {
            "x": xb,
            "y": yb,
            "xs": xstar,
            "mask": conv.astype(np.float64),
            "minv": np.float64(1.0 / n_conv),
            **live,
        }
        with np.errstate(all="ignore"):
            vals = plan.run(bindings)
        lv = float(vals[0])
        if not _finite(lv):
            run.mark_diverged()
            break
        live, state = ad.adam_step(live, dict(zip(names, vals[1:])), state, cfg.lr)
        _writeback(psi, "psi.", live)
        psi.params = icnn.project_convex(psi).params
        live = _prefixed(psi, "psi.")
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            run.log(it, lv)
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=None,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        skipped_samples=skipped,
        extra=run.extra,
    )


# ---------------------------------------------------------------------------
# W2: conjugate surrogate plus cycle consistency, non-adversarial


def train_w2(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    assert base_kind(cfg.kind) == "W2"
    dim, B = pair.dim, cfg.batch_size
    lam = cfg.cycle_weight if cfg.cycle_weight is not None else float(dim)
    s_init_p, s_init_q, s_pre_p, s_pre_q, s_p, s_q = _child_seeds(cfg.seed, 6)
    psi = _prep_net(dim, True, s_init_p, pair.source_sampler(s_pre_p), cfg)
    phi = _prep_net(dim, True, s_init_q, pair.target_sampler(s_pre_q), cfg)

    x = ad.leaf("x", (B, dim))
    y = ad.leaf("y", (B, dim))
    hy = _grad_field(phi, y, "phi.")
    psi_x = icnn.potential_graph(psi, x, "psi.")
    psi_h = icnn.potential_graph(psi, hy, "psi.")
    dual = ad.add(ad.reduce_mean(psi_x), ad.reduce_mean(ad.sub(ad.dot(y, hy), psi_h)))
    grad_psi_h = ad.gradients(ad.reduce_sum(psi_h), [hy])[hy]
    cycle = ad.reduce_mean(ad.sq_norm(ad.sub(grad_psi_h, y), axis=1))
    total = ad.add(dual, ad.scale(cycle, lam))

    # The potential descends the full objective; the inverse net is fitted
    # by the cycle term alone, so no maximin dynamics arise.
    psi_params = _param_nodes(total, "psi.")
    phi_params = _param_nodes(total, "phi.")
    grads_psi = ad.gradients(total, psi_params)
    grads_phi = ad.gradients(ad.scale(cycle, lam), phi_params)
    outs = (
        [total, cycle]
        + [grads_psi[p] for p in psi_params]
        + [grads_phi[p] for p in phi_params]
    )
    plan = ad.compile_nodes(outs)
    names = [p.aux[0] for p in psi_params] + [p.aux[0] for p in phi_params]

    src = pair.source_sampler(s_p)
    tgt = pair.target_sampler(s_q)
    run = _Run(cfg, {"psi": psi, "phi": phi})
    live = {**_prefixed(psi, "psi."), **_prefixed(phi, "phi.")}
    state = ad.adam_init(live)
    for it in range(1, cfg.total_iters + 1):
        with np.errstate(all="ignore"):
            vals = plan.run({"x": src.sample(B), "y": tgt.sample(B), **live})
        lv = float(vals[0])
        if not _finite(lv):
            run.mark_diverged()
            break
        live, state = ad.adam_step(live, dict(zip(names, vals[2:])), state, cfg.lr)
        _writeback(psi, "psi.", live)
        _writeback(phi, "phi.", live)
        psi.params = icnn.project_convex(psi).params
        phi.params = icnn.project_convex(phi).params
        live = {**_prefixed(psi, "psi."), **_prefixed(phi, "phi.")}
        run.iterations = it
        if it % cfg.log_every == 0 or it == cfg.total_iters:
            run.log(it, lv, cycle=float(vals[1]))
    return SolverOutput(
        kind=cfg.kind,
        dim=dim,
        config=cfg,
        psi=psi,
        phi=phi,
        trace=run.trace,
        diverged=run.diverged,
        iterations_run=run.iterations,
        extra=run.extra,
    )


# ---------------------------------------------------------------------------
# dispatch


_TRAINERS = {
    "LS": train_ls,
    "MM-B": train_mmb,
    "QC": train_qc,
    "MM": train_mm,
    "MMv1": train_mmv1,
    "MMv2": train_mmv2,
    "W2": train_w2,
}


def train_reversed(kind: str, pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    """Train on the swapped pair; grad(phi) becomes the forward map."""
    if kind not in REVERSIBLE_KINDS:
        raise ValueError(f"solver {kind!r} does not support reversal")
    swapped = pair.swapped() if hasattr(pair, "swapped") else _swap(pair)
    out = _TRAINERS[kind](swapped, replace(cfg, kind=kind))
    out.kind = f"{kind}:R"
    out.config = cfg
    out.direction = "reversed"
    return out


def _swap(pair) -> MeasurePair:
    return MeasurePair(
        dim=pair.dim, _source=pair.target_sampler, _target=pair.source_sampler
    )


def train(pair: MeasurePair, cfg: SolverConfig) -> SolverOutput:
    """Train the solver named by ``cfg.kind`` on the pair."""
    if cfg.kind.endswith(":R"):
        return train_reversed(base_kind(cfg.kind), pair, cfg)
    return _TRAINERS[cfg.kind](pair, cfg)
