"""End-to-end command tests on a miniature pair (tiny fitting budgets)."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from w2bench import benchmark as bm
from w2bench import cli, harness
from w2bench import metrics as mt
from w2bench import solvers as sv


@pytest.fixture(scope="module")
def tiny_pair_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("pairs")
    cfg = sv.SolverConfig(
        kind="W2",
        batch_size=128,
        total_iters=100,
        lr=1e-3,
        pretrain_iters=150,
        pretrain_batch=128,
    )
    pair = bm.build_hd_pair(2, seed=5, fit_config=cfg)
    path = root / "d2_s5.w2pair"
    bm.save_pair(pair, path)
    return path


@pytest.fixture(scope="module")
def trained_artifact(tiny_pair_file, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("runs")
    pair = bm.load_pair(tiny_pair_file)
    cfg = replace(
        sv.default_config("MM-B", seed=2),
        batch_size=128,
        total_iters=60,
        pretrain_iters=150,
        pretrain_batch=128,
    )
    out = sv.train(pair, cfg)
    art = out_dir / "MM-B_d2_s5.w2fit"
    harness.save_output(out, art)
    harness.write_trace(out, out_dir / "MM-B_d2_s5.trace")
    return art


class TestArtifactRoundTrip:
    def test_save_load_preserves_map(self, trained_artifact, tiny_pair_file):
        out = harness.load_output(trained_artifact)
        pair = bm.load_pair(tiny_pair_file)
        x = pair.source_sampler(0).sample(256)
        t = sv.extract_map(out)
        assert np.all(np.isfinite(t(x)))
        assert out.kind == "MM-B"
        assert out.trace

    def test_trace_file_format(self, trained_artifact):
        trace = trained_artifact.with_suffix(".trace")
        lines = trace.read_text().strip().split("\n")
        for line in lines:
            it, loss, sec = line.split(",")
            int(it)
            float(loss)
            float(sec)


class TestGenerate:
    def test_generate_writes_pair_and_manifest(self, tmp_path, monkeypatch):
        # milli-scale fitting budget keeps the test fast; the pair is valid
        # regardless of fit quality because the fitted potentials define
        # the ground truth
        tiny = sv.SolverConfig(
            kind="W2",
            batch_size=64,
            total_iters=40,
            lr=1e-3,
            pretrain_iters=60,
            pretrain_batch=64,
        )
        monkeypatch.setattr(
            harness.solvers, "default_config", lambda kind, seed=0: replace(tiny, seed=seed)
        )
        manifest, code = harness.cmd_generate([2], [9], tmp_path, iters_scale=1.0)
        assert code == harness.EXIT_OK
        data = json.loads(manifest.read_text())
        assert data["pairs"][0]["status"] == "ok"
        pair_path = tmp_path / data["pairs"][0]["file"]
        assert pair_path.exists()
        pair = bm.load_pair(pair_path)
        assert pair.dim == 2
        assert bm.cyclical_monotonicity_defect(pair, n_cycles=200) >= 0.0

    def test_regенerate_same_seed_byte_identical(self, tmp_path, monkeypatch):
        tiny = sv.SolverConfig(
            kind="W2",
            batch_size=64,
            total_iters=30,
            lr=1e-3,
            pretrain_iters=50,
            pretrain_batch=64,
        )
        monkeypatch.setattr(
            harness.solvers, "default_config", lambda kind, seed=0: replace(tiny, seed=seed)
        )
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        harness.cmd_generate([2], [3], a_dir, iters_scale=1.0)
        harness.cmd_generate([2], [3], b_dir, iters_scale=1.0)
        pa = (a_dir / "d2_s3.w2pair").read_bytes()
        pb = (b_dir / "d2_s3.w2pair").read_bytes()
        assert pa == pb


class TestEval:
    def test_eval_baselines_only(self, tiny_pair_file, tmp_path):
        csv_path, matrix_path = harness.cmd_eval([tiny_pair_file], [], tmp_path)
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == mt.CSV_HEADER
        rows = {ln.split(",")[0]: ln for ln in lines[1:]}
        assert set(rows) == {"ID", "C", "L"}
        c_uvp = float(rows["C"].split(",")[3])
        assert c_uvp == 100.0
        assert "L2-UVP" in matrix_path.read_text()

    def test_eval_with_artifact(self, tiny_pair_file, trained_artifact, tmp_path):
        csv_path, _ = harness.cmd_eval([tiny_pair_file], [trained_artifact], tmp_path)
        body = csv_path.read_text()
        assert "MM-B" in body

    def test_eval_deterministic_bytes(self, tiny_pair_file, trained_artifact, tmp_path):
        a = harness.cmd_eval([tiny_pair_file], [trained_artifact], tmp_path / "a")[0]
        b = harness.cmd_eval([tiny_pair_file], [trained_artifact], tmp_path / "b")[0]
        assert a.read_bytes() == b.read_bytes()

    def test_eval_never_trains(self, tiny_pair_file, trained_artifact, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("eval must not train")

        monkeypatch.setattr(harness.solvers, "train", boom)
        harness.cmd_eval([tiny_pair_file], [trained_artifact], tmp_path)

    def test_dimension_mismatch_rejected(self, trained_artifact, tmp_path):
        mix_pair = bm.identity_pair(3, seed=0)
        p3 = tmp_path / "d3.w2pair"
        bm.save_pair(mix_pair, p3)
        with pytest.raises(harness.ConfigError):
            harness.cmd_eval([p3], [trained_artifact], tmp_path)


class TestScatter:
    def test_d2_projection_preserves_distances(self, tiny_pair_file):
        pair = bm.load_pair(tiny_pair_file)
        clouds = harness.pca_scatter(pair, None, n=256, seed=3)
        x = pair.source_sampler(np.random.SeedSequence(3).spawn(2)[0]).sample(256)
        pd_before = np.linalg.norm(x[:50, None] - x[None, :50], axis=2)
        p = clouds["source"][:50]
        pd_after = np.linalg.norm(p[:, None] - p[None, :], axis=2)
        assert np.max(np.abs(pd_before - pd_after)) < 1e-9

    def test_variance_ordering(self, tiny_pair_file):
        pair = bm.load_pair(tiny_pair_file)
        clouds = harness.pca_scatter(pair, None, n=512)
        var = clouds["target"].var(axis=0)
        assert var[0] >= var[1]

    def test_axes_match_eigendecomposition(self, tiny_pair_file):
        pair = bm.load_pair(tiny_pair_file)
        ss = np.random.SeedSequence(777).spawn(2)
        y = pair.target_sampler(ss[1]).sample(512)
        cov = np.cov((y - y.mean(0)).T, bias=True)
        vals, vecs = np.linalg.eigh(cov)
        top = vecs[:, np.argsort(vals)[::-1]]
        clouds = harness.pca_scatter(pair, None, n=512)
        proj = (y - y.mean(0)) @ top
        # same up to per-axis sign
        got = clouds["target"]
        for k in range(2):
            assert np.allclose(got[:, k], proj[:, k], atol=1e-9) or np.allclose(
                got[:, k], -proj[:, k], atol=1e-9
            )

    def test_mapped_cloud_written(self, tiny_pair_file, trained_artifact, tmp_path):
        pair = bm.load_pair(tiny_pair_file)
        out = harness.load_output(trained_artifact)
        clouds = harness.pca_scatter(pair, sv.extract_map(out), n=64)
        files = harness.write_scatter(clouds, tmp_path)
        names = {f.name for f in files}
        assert names == {"source.xy", "target.xy", "mapped.xy"}
        for f in files:
            first = f.read_text().splitlines()[0].split()
            assert len(first) == 2
            float(first[0])


class TestCli:
    def test_eval_exit_ok(self, tiny_pair_file, tmp_path):
        code = cli.main(["eval", "--pair", str(tiny_pair_file), "--out", str(tmp_path)])
        assert code == harness.EXIT_OK
        assert (tmp_path / "report.csv").exists()

    def test_missing_pair_is_io_error(self, tmp_path):
        code = cli.main(["eval", "--pair", "nope.w2pair", "--out", str(tmp_path)])
        assert code == harness.EXIT_IO

    def test_unknown_solver_is_config_error(self, tiny_pair_file, tmp_path):
        code = cli.main(
            [
                "train",
                "--pair",
                str(tiny_pair_file),
                "--solver",
                "NOPE",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == harness.EXIT_CONFIG

    def test_missing_required_flag_is_config_error(self, tmp_path):
        code = cli.main(["generate", "--out", str(tmp_path)])
        assert code == harness.EXIT_CONFIG

    def test_scatter_command(self, tiny_pair_file, tmp_path):
        code = cli.main(
            ["scatter", "--pair", str(tiny_pair_file), "--out", str(tmp_path), "--n", "64"]
        )
        assert code == harness.EXIT_OK
        assert (tmp_path / "source.xy").exists()
        assert (tmp_path / "target.xy").exists()

    def test_config_file_defaults_and_flag_priority(self, tiny_pair_file, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("n-samples=512\neval-seed=123\n")
        out_a = tmp_path / "a"
        code = cli.main(
            [
                "eval",
                "--pair",
                str(tiny_pair_file),
                "--config",
                str(cfg_file),
                "--out",
                str(out_a),
            ]
        )
        assert code == harness.EXIT_OK
        # flag wins over config file
        out_b = tmp_path / "b"
        code = cli.main(
            [
                "eval",
                "--pair",
                str(tiny_pair_file),
                "--config",
                str(cfg_file),
                "--n-samples",
                "256",
                "--out",
                str(out_b),
            ]
        )
        assert code == harness.EXIT_OK
        rows_a = (out_a / "report.csv").read_text().strip().split("\n")[1:]
        rows_b = (out_b / "report.csv").read_text().strip().split("\n")[1:]
        assert rows_a[0].split(",")[5] == "512"
        assert rows_b[0].split(",")[5] == "256"

    def test_bad_config_key_rejected(self, tiny_pair_file, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("bogus-key=1\n")
        code = cli.main(
            ["eval", "--pair", str(tiny_pair_file), "--config", str(cfg_file), "--out", str(tmp_path)]
        )
        assert code == harness.EXIT_CONFIG


class TestTrainCommand:
    def test_train_writes_artifact_and_trace(self, tiny_pair_file, tmp_path, monkeypatch):
        tiny = sv.SolverConfig(
            kind="MM-B",
            batch_size=64,
            total_iters=30,
            lr=1e-3,
            pretrain_iters=40,
            pretrain_batch=64,
        )
        monkeypatch.setattr(
            harness.solvers,
            "default_config",
            lambda kind, seed=0: replace(tiny, kind=kind, seed=seed),
        )
        arts, code = harness.cmd_train([tiny_pair_file], ["MM-B"], tmp_path, seed=4)
        assert code == harness.EXIT_OK
        assert arts[0].exists()
        assert arts[0].with_suffix(".trace").exists()

    def test_divergence_exit_code(self, tiny_pair_file, tmp_path, monkeypatch):
        hot = sv.SolverConfig(
            kind="QC",
            batch_size=64,
            total_iters=300,
            lr=1e40,
            pretrain_iters=0,
            pretrain_batch=64,
            log_every=5,
        )
        monkeypatch.setattr(
            harness.solvers,
            "default_config",
            lambda kind, seed=0: replace(hot, kind=kind, seed=seed),
        )
        arts, code = harness.cmd_train([tiny_pair_file], ["QC"], tmp_path, seed=4)
        assert code == harness.EXIT_DIVERGED
        out = harness.load_output(arts[0])
        assert out.diverged
        # checkpointed networks still evaluable
        pair = bm.load_pair(tiny_pair_file)
        x = pair.source_sampler(0).sample(32)
        assert np.all(np.isfinite(sv.extract_map(out)(x)))

    def test_threaded_jobs_match_serial(self, tiny_pair_file, tmp_path, monkeypatch):
        tiny = sv.SolverConfig(
            kind="MM-B",
            batch_size=64,
            total_iters=20,
            lr=1e-3,
            pretrain_iters=30,
            pretrain_batch=64,
        )
        monkeypatch.setattr(
            harness.solvers,
            "default_config",
            lambda kind, seed=0: replace(tiny, kind=kind, seed=seed),
        )
        a, _ = harness.cmd_train(
            [tiny_pair_file], ["MM-B", "QC"], tmp_path / "ser", seed=1, threads=1
        )
        b, _ = harness.cmd_train(
            [tiny_pair_file], ["MM-B", "QC"], tmp_path / "par", seed=1, threads=2
        )
        for pa, pb in zip(sorted(a), sorted(b)):
            assert pa.read_bytes() == pb.read_bytes()


class TestScatterFallback:
    def test_one_dimensional_pair_uses_coordinate_axes(self):
        pair = bm.identity_pair(1, seed=2)
        clouds = harness.pca_scatter(pair, None, n=64)
        assert clouds["source"].shape == (64, 2)
        assert np.all(clouds["source"][:, 1] == 0.0)
