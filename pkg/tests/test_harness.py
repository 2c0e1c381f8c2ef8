import json
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from krnet.cli import cli_main
from krnet.datasets import InputDistribution, generate_dataset
from krnet.demos import (demo_dipoles, demo_kr_vs_wass, demo_mass_escape, mass_escape_problem,
                         oscillating_test_function)
from krnet.errors import InvalidParameter
from krnet.experiments import BetaSchedule, ExperimentConfig, large_data_experiment, row_seeds
from krnet.io import read_dataset_csv, read_measure, write_dataset_csv, write_measure
from krnet.measure import PointedSpace, dipole, dirac, measure
from krnet.network import Activation, Dataset, realize_batch

RELU = Activation("relu")
TEACHER = measure(PointedSpace(3), [[0.6, 0.0, 0.8], [-0.6, 0.8, 0.0]], [1.0, -0.7])


class TestDatasets:
    def test_noiseless_labels(self):
        data = generate_dataset(TEACHER, RELU, 50, 0.0, "gaussian", seed=1)
        assert np.array_equal(data.labels, realize_batch(TEACHER, RELU, data.inputs))

    def test_deterministic(self):
        a = generate_dataset(TEACHER, RELU, 100, 0.1, "uniform_ball:2", seed=9)
        b = generate_dataset(TEACHER, RELU, 100, 0.1, "uniform_ball:2", seed=9)
        assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()
        c = generate_dataset(TEACHER, RELU, 100, 0.1, "uniform_ball:2", seed=10)
        assert not np.array_equal(a.inputs, c.inputs)

    def test_gaussian_moments(self):
        N, sigma = 20000, 1.7
        X = generate_dataset(TEACHER, RELU, N, 0.0, InputDistribution("gaussian", sigma), seed=3).inputs
        se_mean = sigma / np.sqrt(N)
        assert np.all(np.abs(X.mean(0)) <= 3 * se_mean)
        se_var = sigma ** 2 * np.sqrt(2.0 / N)
        assert np.all(np.abs(X.var(0) - sigma ** 2) <= 3 * se_var)

    def test_uniform_ball_moments(self):
        N, R, d = 20000, 2.0, 2
        X = generate_dataset(TEACHER, RELU, N, 0.0, InputDistribution("uniform_ball", R), seed=4).inputs
        r = np.linalg.norm(X, axis=1)
        assert np.all(r <= R)
        # E|x|^2 = d R^2 / (d + 2) for the uniform ball
        m2 = d * R ** 2 / (d + 2)
        sd = np.std(r ** 2)
        assert abs(np.mean(r ** 2) - m2) <= 3 * sd / np.sqrt(N)
        assert np.all(np.abs(X.mean(0)) <= 3 * np.sqrt(m2 / d / N))

    def test_noise_level(self):
        data = generate_dataset(TEACHER, RELU, 20000, 0.5, "gaussian", seed=5)
        resid = data.labels - realize_batch(TEACHER, RELU, data.inputs)
        assert abs(resid.std() - 0.5) <= 3 * 0.5 / np.sqrt(2 * 20000)

    @pytest.mark.parametrize("N", [0, -3, 2.5])
    def test_invalid_size(self, N):
        with pytest.raises(InvalidParameter):
            generate_dataset(TEACHER, RELU, N)

    def test_invalid_distribution(self):
        with pytest.raises(InvalidParameter):
            InputDistribution("cauchy")
        with pytest.raises(InvalidParameter):
            InputDistribution("gaussian", -1)


class TestIO:
    def test_dataset_csv_roundtrip(self, tmp_path):
        data = generate_dataset(TEACHER, RELU, 7, 0.1, seed=0)
        write_dataset_csv(tmp_path / "d.csv", data)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x1,x2,y"
        back = read_dataset_csv(tmp_path / "d.csv")
        assert np.array_equal(back.inputs, data.inputs) and np.array_equal(back.labels, data.labels)

    @pytest.mark.parametrize("text", ["a,b\n1,2\n", "x1,y\n", "x1,y\n1,abc\n", "x1,y\n1,2,3\n"])
    def test_bad_csv(self, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(InvalidParameter):
            read_dataset_csv(tmp_path / "bad.csv")

    def test_no_temp_files_left(self, tmp_path):
        write_measure(tmp_path / "m.json", TEACHER)
        assert [p.name for p in tmp_path.iterdir()] == ["m.json"]


class TestExperimentConfig:
    def test_validation(self):
        with pytest.raises(InvalidParameter):
            ExperimentConfig(seed=0, teacher=TEACHER, N_grid=(100, 100))
        with pytest.raises(InvalidParameter):
            ExperimentConfig(seed=0, teacher=TEACHER, N_grid=(10,), beta_schedule=BetaSchedule("power", 0.1, 1.5))
        with pytest.raises(InvalidParameter):
            ExperimentConfig(seed=0, teacher=TEACHER, N_grid=(10,), noise_std=-1)

    def test_schedule(self):
        assert BetaSchedule()(400) == pytest.approx(0.1 / 20)
        assert BetaSchedule("constant", 0.3)(10 ** 6) == 0.3
        assert BetaSchedule.parse(0.2) == BetaSchedule("constant", 0.2)

    def test_row_seeds_independent_of_count(self):
        assert row_seeds(7, 4)[:2] == row_seeds(7, 2)
        assert len(set(row_seeds(7, 4))) == 4

    def test_from_json_relative_paths(self, tmp_path):
        write_measure(tmp_path / "t.json", TEACHER)
        (tmp_path / "cfg.json").write_text(json.dumps(
            {"seed": 1, "teacher": "t.json", "N_grid": [10, 20], "output_dir": "out",
             "beta_schedule": {"kind": "power", "c": 0.1, "gamma": 0.5}}))
        cfg = ExperimentConfig.from_json(tmp_path / "cfg.json")
        assert cfg.teacher == TEACHER
        assert cfg.output_dir == str(tmp_path / "out")


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = ExperimentConfig(seed=11, teacher=TEACHER, N_grid=(50, 200, 800), output_dir=str(out))
    return cfg, large_data_experiment(cfg), out


class TestLargeData:
    def test_rows(self, sweep):
        cfg, rows, _ = sweep
        assert [r["N"] for r in rows] == [50, 200, 800]
        for r in rows:
            assert r["status"] == "ok"
            assert r["solution_norm"] <= r["teacher_norm"] + 1e-6 * r["beta"]

    def test_trend_and_correlation(self, sweep):
        _, rows, _ = sweep
        kd = [r["kru_distance_to_reference"] for r in rows]
        ue = [r["uniform_error_R"] for r in rows]
        assert kd[-1] <= kd[0] and ue[-1] <= ue[0]
        assert stats.spearmanr(kd, ue).statistic > 0

    def test_byte_identical_rerun(self, sweep, tmp_path, monkeypatch):
        cfg, _, out = sweep
        monkeypatch.setenv("KRU_THREADS", "1")
        large_data_experiment(replace(cfg, output_dir=str(tmp_path)))
        assert (tmp_path / "large_data.csv").read_bytes() == (out / "large_data.csv").read_bytes()
        meta = json.loads((tmp_path / "large_data_meta.json").read_text())
        assert meta["metadata"]["threads"] == 1

    def test_failed_rows_are_recorded(self, monkeypatch):
        import krnet.experiments as ex
        real = ex.conditional_gradient_solve

        def flaky(prob, *a, **kw):
            if prob.dataset.size == 20:
                raise RuntimeError("boom")
            return real(prob, *a, **kw)

        monkeypatch.setattr(ex, "conditional_gradient_solve", flaky)
        rows = large_data_experiment(ExperimentConfig(seed=0, teacher=TEACHER, N_grid=(10, 20, 30)))
        assert [r["status"] for r in rows] == ["ok", "failed", "ok"]
        assert "boom" in rows[1]["error"] and np.isnan(rows[1]["objective"])

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv("KRU_THREADS", "many")
        with pytest.raises(InvalidParameter):
            large_data_experiment(ExperimentConfig(seed=0, teacher=TEACHER, N_grid=(10,)))


class TestDemos:
    def test_mass_escape(self):
        rep = demo_mass_escape()
        assert rep["objective"][-1] == pytest.approx(0.75, abs=1e-4)
        assert rep["kru_norm"][-1] == pytest.approx(0.5, abs=1e-5)
        assert np.all(np.diff(rep["objective"]) < 0)
        assert rep["min_rescaling_gain"] > 0

    def test_mass_escape_problem(self):
        prob = mass_escape_problem()
        assert prob.space.dimension == 1 and prob.params.p == 1.0

    def test_dipoles(self):
        rep = demo_dipoles(n_max=500)
        assert rep["pairings"] == pytest.approx([(-1.0) ** k for k in range(9)], abs=1e-12)

    def test_oscillating_function(self):
        f = oscillating_test_function
        assert f(0.0) == 0.0 and f(5.0) == 1.0
        t = np.linspace(-1, 1, 20001)
        assert np.max(np.abs(np.diff(f(t))) / np.diff(t)) <= 2 + 1e-9
        assert np.allclose(f(t), f(-t))

    def test_kr_vs_wass(self):
        rep = demo_kr_vs_wass()
        for row in rep["rows"]:
            assert row["pairing_abs_z_pow_s"] == pytest.approx(1.0)
            assert row["kr_norm_snowflake"] == pytest.approx(1.0)


class TestCLI:
    def test_norm(self, tmp_path, capsys):
        x, y = [1.0, 2.0, 2.0], [0.0, 0.0, 0.0]
        write_measure(tmp_path / "dip.json", dipole(PointedSpace(3), x, y, 1.5))
        assert cli_main(["norm", str(tmp_path / "dip.json"), "--which", "kr"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(4.5)
        assert cli_main(["norm", str(tmp_path / "dip.json"), "--which", "tv"]) == 0
        assert float(capsys.readouterr().out) == 3.0
        assert cli_main(["norm", str(tmp_path / "dip.json"), "--which", "moment", "--p", "2"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(13.5)

    def test_w1_plan(self, tmp_path, capsys):
        sp = PointedSpace(1)
        write_measure(tmp_path / "a.json", measure(sp, [[0.0], [2.0]], [1.0, 1.0]))
        write_measure(tmp_path / "b.json", measure(sp, [[1.0], [3.0]], [1.0, 1.0]))
        code = cli_main(["w1", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--plan",
                         str(tmp_path / "plan.csv")])
        assert code == 0 and float(capsys.readouterr().out) == pytest.approx(2.0)
        lines = (tmp_path / "plan.csv").read_text().splitlines()
        assert lines[0] == "i,j,mass,cost_edge" and len(lines) == 3

    def test_exit_codes(self, tmp_path):
        assert cli_main(["norm", str(tmp_path / "missing.json")]) == 2
        (tmp_path / "bad.json").write_text("{not json")
        assert cli_main(["norm", str(tmp_path / "bad.json")]) == 2
        write_measure(tmp_path / "d.json", dirac(PointedSpace(1), [1.0]))
        assert cli_main(["norm", str(tmp_path / "d.json"), "--which", "kr"]) == 2
        assert cli_main(["frobnicate"]) == 2
        assert cli_main(["demo", "nope"]) == 2

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        from krnet import demos
        from krnet.errors import DemoCheckFailed

        def broken():
            raise DemoCheckFailed("value mismatch")

        monkeypatch.setitem(demos.DEMOS, "dipoles", broken)
        assert cli_main(["demo", "dipoles", "--out", str(tmp_path / "x.json")]) == 3

    def test_demo_writes_report(self, tmp_path):
        out = tmp_path / "me.json"
        assert cli_main(["demo", "mass-escape", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["demo"] == "mass-escape" and "timestamp" in rep["metadata"]

    def test_train_fixture(self, fixtures_dir, tmp_path):
        cfg = json.loads((fixtures_dir / "train_teacher2.json").read_text())
        cfg["data"]["generate"]["teacher"] = str(fixtures_dir / "teacher2.json")
        cfg["evaluate"]["reference"] = str(fixtures_dir / "teacher2.json")
        cfg["output"] = "report.json"
        cfg["trace_csv"] = "trace.csv"
        (tmp_path / "train.json").write_text(json.dumps(cfg))
        assert cli_main(["train", str(tmp_path / "train.json")]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        ev = rep["evaluation"]
        beta = cfg["beta"]
        assert rep["penalty_value"] <= ev["reference_penalty_value"] + 1e-6 * beta
        assert ev["uniform_error"] <= 1e-2
        assert (tmp_path / "trace.csv").read_text().startswith("iteration,objective")
        # deterministic apart from the metadata block
        first = dict(rep, metadata=None)
        assert cli_main(["train", str(tmp_path / "train.json")]) == 0
        again = json.loads((tmp_path / "report.json").read_text())
        assert dict(again, metadata=None) == first

    def test_param_override_and_csv_data(self, tmp_path):
        data = generate_dataset(TEACHER, RELU, 12, 0.0, seed=2)
        write_dataset_csv(tmp_path / "data.csv", data)
        cfg = {"data": {"csv": "data.csv"}, "beta": 0.01, "output": "r.json"}
        (tmp_path / "t.json").write_text(json.dumps(cfg))
        assert cli_main(["train", str(tmp_path / "t.json"), "--alpha", "0.1"]) == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["atom_count"] <= 2 * 12 + 1

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "t.json").write_text(json.dumps({"data": {"csv": "x.csv"}, "lr": 1}))
        assert cli_main(["train", str(tmp_path / "t.json")]) == 2

    def test_distill_and_fuse(self, tmp_path):
        write_measure(tmp_path / "teacher.json", TEACHER)
        write_measure(tmp_path / "other.json", TEACHER)
        gen = {"generate": {"teacher": "teacher.json", "N": 20, "seed": 3}}
        (tmp_path / "d.json").write_text(json.dumps(
            {"data": gen, "alpha": 0.2, "beta": 0.05, "teacher": "teacher.json", "output": "d_out.json"}))
        assert cli_main(["distill", str(tmp_path / "d.json")]) == 0
        assert read_measure_from_report(tmp_path / "d_out.json") == TEACHER
        (tmp_path / "f.json").write_text(json.dumps(
            {"data": gen, "alpha": 1.0, "beta": 1e-9, "output": "f_out.json",
             "references": [{"measure": "teacher.json"}, {"measure": "other.json", "coefficient": 1.0}]}))
        assert cli_main(["fuse", str(tmp_path / "f.json")]) == 0
        from krnet.transport import kru_distance
        assert kru_distance(read_measure_from_report(tmp_path / "f_out.json"), TEACHER) <= 1e-6
        (tmp_path / "f1.json").write_text(json.dumps(
            {"data": gen, "alpha": 1.0, "references": [{"measure": "teacher.json"}]}))
        assert cli_main(["fuse", str(tmp_path / "f1.json")]) == 2

    def test_experiment_command(self, tmp_path, capsys):
        write_measure(tmp_path / "teacher.json", TEACHER)
        (tmp_path / "e.json").write_text(json.dumps(
            {"seed": 3, "teacher": "teacher.json", "N_grid": [20, 40], "output_dir": "res"}))
        assert cli_main(["experiment", str(tmp_path / "e.json")]) == 0
        assert (tmp_path / "res" / "large_data.csv").exists()
        assert len(capsys.readouterr().out.strip().splitlines()) == 2


def read_measure_from_report(path):
    from krnet.measure import from_json_dict
    return from_json_dict(json.loads(path.read_text())["measure"])
