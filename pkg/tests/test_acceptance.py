"""Acceptance gate: one test per criterion, printed pass/fail per line.

Criteria 7, 8 and 10 train solvers at one tenth of the standard iteration
counts (the desk default) and dominate the runtime of this module; see
``conftest.py`` for the shared session fixtures.
"""

import numpy as np
import pytest

from w2bench import adcore as ad
from w2bench import benchmark as bm
from w2bench import discrete_ot as dot
from w2bench import icnn
from w2bench import measures as ms
from w2bench import metrics as mt
from w2bench import solvers as sv

from conftest import ACCEPT_SCALE, TRAIN_SEED


def _report(criterion: str, detail: str) -> None:
    print(f"[acceptance] {criterion}: PASS ({detail})")


def _fd_param(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    flat = arr.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        dn = f()
        flat[i] = orig
        g.ravel()[i] = (up - dn) / (2 * h)
    return g


class TestC01Differentiation:
    def test_c01_gradients_match_finite_differences(self):
        rng = np.random.default_rng(101)
        worst_in = 0.0
        for trial in range(100):
            dim = int(rng.integers(2, 5))
            net = icnn.make_dense_icnn(
                dim,
                seed=int(rng.integers(2**31)),
                constrained=bool(rng.integers(2)),
                widths=(int(rng.integers(4, 8)), int(rng.integers(3, 6))),
            )
            x = rng.uniform(-1, 1, size=dim)
            g = icnn.map_grad(net, x)
            fd = np.array(
                [
                    (
                        icnn.potential(net, x + h_vec)
                        - icnn.potential(net, x - h_vec)
                    )
                    / 2e-5
                    for h_vec in np.eye(dim) * 1e-5
                ]
            )
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            worst_in = max(worst_in, rel)
        assert worst_in < 1e-5

        worst_gg = 0.0
        for trial in range(20):
            dim = 2
            net = icnn.make_dense_icnn(
                dim, seed=trial, constrained=False, widths=(5, 4)
            )
            assert net.n_params() <= 1000
            xv = rng.uniform(-1, 1, size=(4, dim))
            x = ad.leaf("x", xv.shape)
            out = icnn.potential_graph(net, x, "p.")
            gx = ad.gradients(ad.reduce_sum(out), [x])[x]
            loss_node = ad.reduce_mean(ad.sq_norm(ad.sub(gx, x), axis=1))
            binds = {"x": xv, **{f"p.{k}": v for k, v in net.params.items()}}
            grads = ad.param_grad(loss_node, binds)
            plan = ad.compile_nodes([loss_node])
            for key in ("w_out", "skip_c_0", "quad_a_1_0"):
                arr = net.params[key]
                fd = _fd_param(lambda: float(plan.run(binds)[0]), arr)
                denom = max(np.linalg.norm(fd), 1e-10)
                rel = np.linalg.norm(grads[f"p.{key}"] - fd) / denom
                worst_gg = max(worst_gg, rel)
        assert worst_gg < 1e-4
        _report("criterion 1 (differentiation)", f"input {worst_in:.2e}, second-order {worst_gg:.2e}")


class TestC02Convexity:
    @pytest.mark.parametrize("dim", [2, 8, 16])
    def test_c02_convexity_and_monotonicity(self, dim):
        net = icnn.make_dense_icnn(dim, seed=200 + dim)
        rng = np.random.default_rng(dim)
        a = rng.uniform(-2, 2, size=(10_000, dim))
        b = rng.uniform(-2, 2, size=(10_000, dim))
        lhs = icnn.potential(net, 0.5 * (a + b))
        rhs = 0.5 * (icnn.potential(net, a) + icnn.potential(net, b))
        assert np.all(lhs <= rhs + 1e-12)
        inner = np.sum(
            (icnn.map_grad(net, a) - icnn.map_grad(net, b)) * (a - b), axis=1
        )
        margin = net.beta * np.sum((a - b) ** 2, axis=1)
        assert np.all(inner >= margin * (1 - 1e-9))
        _report(f"criterion 2 (convexity, D={dim})", "10k midpoint + monotonicity")


class TestC03DiscreteOracle:
    def test_c03_solver_equals_brute_force(self):
        rng = np.random.default_rng(303)
        checked = 0
        for n in (5, 6):
            for _ in range(100):
                cost = rng.random((n, n))
                u = np.full(n, 1.0 / n)
                res = dot.solve_exact(cost, u, u)
                best, _ = dot.brute_force(cost)
                assert abs(res.cost - best) <= 1e-9
                assert abs(u @ res.f + u @ res.g - res.cost) <= 1e-9
                checked += 1
        _report("criterion 3 (discrete OT oracle)", f"{checked} instances")


class TestC04ConstantBaseline:
    def test_c04_constant_baseline_exactly_100(self, pair_d2, pair_d16):
        for pair in (pair_d2, pair_d16):
            rep = mt.evaluate_baseline("C", pair)
            assert rep.uvp_pct == 100.0
        _report("criterion 4 (constant baseline)", "exactly 100.0 on D=2 and D=16")


class TestC05IdentityPair:
    def test_c05_identity_pair_sanity(self):
        pair = bm.identity_pair(4, seed=505)
        rep = mt.evaluate_baseline("ID", pair)
        assert rep.uvp_pct == 0.0
        assert rep.cos is None
        _report("criterion 5 (identity pair)", "UVP 0, cosine undefined")


class TestC06GaussianLinear:
    def test_c06_linear_baseline_on_gaussian_pair(self):
        dim = 8
        p = ms.normalize_mixture(ms.random_mixture(dim, 1, seed=606))
        mu_p, cov_p = ms.mixture_moments(p)
        rng = np.random.default_rng(607)
        a = rng.standard_normal((dim, dim))
        cov_q = a @ a.T + 0.3 * np.eye(dim)
        mu_q = rng.standard_normal(dim)
        truth = ms.gaussian_ot_map(mu_p, cov_p, mu_q, cov_q)
        pair = bm.SyntheticPair(dim=dim, source=p, transport=truth)
        rep = mt.evaluate_baseline("L", pair)
        assert rep.uvp_pct < 0.5
        _report("criterion 6 (Gaussian reproduction)", f"linear UVP {rep.uvp_pct:.4f}%")


THRESHOLDS_D2 = {
    "W2": (2.0, 0.99),
    "MMv2": (2.0, 0.99),
    "MM": (2.0, 0.99),
    "MM-B": (2.0, 0.99),
    "QC": (5.0, None),
    "LS": (10.0, None),
}


class TestC07DeskTable2:
    def test_c07_desk_scale_d2(self, pair_d2, runs_d2):
        failures = []
        lines = []
        for kind, (max_uvp, min_cos) in THRESHOLDS_D2.items():
            rep = mt.evaluate(runs_d2[kind], pair_d2)
            lines.append(f"{kind}: uvp={rep.uvp_pct:.3f} cos={rep.cos}")
            if not rep.uvp_pct <= max_uvp:
                failures.append(f"{kind} uvp {rep.uvp_pct:.3f} > {max_uvp}")
            if min_cos is not None and not (rep.cos is not None and rep.cos >= min_cos):
                failures.append(f"{kind} cos {rep.cos} < {min_cos}")
        assert not failures, "; ".join(failures + lines)
        _report("criterion 7 (desk-scale D=2)", "; ".join(lines))


class TestC08OrderingD16:
    def test_c08_qualitative_ordering(self, pair_d16, runs_d16):
        uvp = {
            kind: mt.evaluate(runs_d16[kind], pair_d16).uvp_pct
            for kind in ("W2", "MM-B", "LS")
        }
        uvp["L"] = mt.evaluate_baseline("L", pair_d16).uvp_pct
        uvp["C"] = mt.evaluate_baseline("C", pair_d16).uvp_pct
        chain = ["W2", "MM-B", "LS", "L", "C"]
        detail = " < ".join(f"{k}={uvp[k]:.2f}" for k in chain)
        for lo, hi in zip(chain, chain[1:]):
            assert uvp[lo] < uvp[hi], detail
        assert uvp["C"] == 100.0
        _report("criterion 8 (D=16 ordering)", detail)


class TestC09MmbOverestimation:
    def test_c09_batch_restriction_overestimates(self, runs_d2):
        psi = runs_d2["MM-B"].psi
        rng = np.random.default_rng(909)
        y = rng.standard_normal((1000, 2))
        x_batch = rng.standard_normal((1024, 2))
        batch_vals = sv.conjugate_inner_values(psi, x_batch, y)
        _, exact = icnn.invert_map(psi, y, tol=1e-7, max_iter=20_000)
        violations = int(np.sum(batch_vals < exact - 1e-9))
        assert violations == 0
        gap = float(np.min(batch_vals - exact))
        _report("criterion 9 (batch overestimation)", f"0 violations, min gap {gap:.2e}")


class TestC10Determinism:
    def test_c10_w2_rerun_byte_identical_csv(self, pair_d2, runs_d2):
        cfg = sv.scale_iters(sv.default_config("W2", seed=TRAIN_SEED), ACCEPT_SCALE)
        rerun = sv.train(pair_d2, cfg)
        a = mt.reports_to_csv([mt.evaluate(runs_d2["W2"], pair_d2)])
        b = mt.reports_to_csv([mt.evaluate(rerun, pair_d2)])
        assert a.encode() == b.encode()
        _report("criterion 10 (determinism)", "byte-identical EvalReport CSV")
