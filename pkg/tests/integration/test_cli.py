"""End-to-end tests of the command line."""
import json

import pandas as pd
import pytest

from src.main import main

SMALL_GRID = ["--set", "grid.n_windows=10", "--set", "grid.delta=0.03125"]
SMALL_LIL = SMALL_GRID + ["--set", "lil.m=64", "--set", "lil.dist.m=16",
                          "--set", "lil.dist.random_starts=1", "--set", "lil.dist.max_iter=30"]


@pytest.fixture(autouse=True)
def lab_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LAB_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("LAB_OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("LAB_LOG_LEVEL", "WARNING")
    monkeypatch.delenv("LAB_WORKERS", raising=False)
    return tmp_path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


class TestSimulate:
    def test_writes_one_row_per_grid_point(self, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--out", str(out), "--seeds", "2", "--set", "simulate.m=64",
                     "--set", "simulate.dump_path=true"] + SMALL_GRID)
        assert code == 0
        frame = pd.read_csv(out / "xi_seed1.csv")
        assert len(frame) == 1 + 64
        assert list(frame.columns) == ["u", "t", "xi_1"]
        assert (out / "path_seed0.csv").exists()
        manifest = read_json(out / "manifest.json")
        assert manifest["seeds"] == [0, 1]
        assert manifest["command"] == "simulate"

    def test_reruns_are_byte_identical(self, tmp_path):
        args = ["simulate", "--seed-list", "3,5", "--set", "simulate.m=32"] + SMALL_GRID
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("xi_seed3.csv", "xi_seed5.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_anticipating_mode(self, tmp_path):
        out = tmp_path / "flow"
        code = main(["simulate", "--out", str(out), "--set", "simulate.mode=anticipating",
                     "--set", "simulate.horizon=4.0", "--set", "initial={kind: endpoint}"] + SMALL_GRID)
        assert code == 0
        frame = pd.read_csv(out / "flow_seed0.csv")
        assert frame["t"].iloc[-1] == 4.0

    def test_default_output_directory(self, lab_env):
        assert main(["simulate", "--set", "simulate.m=16"] + SMALL_GRID) == 0
        assert (lab_env / "results" / "simulate" / "xi_seed0.csv").exists()
        assert (lab_env / "logs" / "lab.log").exists()
        metrics = (lab_env / "logs" / "metrics.prom").read_text()
        assert 'lab_log_entries_total{level="INFO",component="simulate"}' in metrics
        assert "lab_stage_seconds" in metrics


class TestExitCodes:
    def test_scale_domain_error(self, tmp_path):
        code = main(["simulate", "--out", str(tmp_path), "--set", "simulate.u=2.0"] + SMALL_GRID)
        assert code == 3

    def test_unknown_key(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--set", "grid.windows=3"]) == 2

    def test_broken_yaml_file(self, tmp_path):
        path = tmp_path / "bad.yml"
        path.write_text("grid: [\n")
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_unknown_family(self, tmp_path):
        code = main(["skeleton", "--out", str(tmp_path),
                     "--set", "system={dim: 1, diffusion: [{family: cosh}]}"])
        assert code == 2

    def test_rank_deficiency_is_numerical(self, tmp_path):
        code = main(["rate", "--out", str(tmp_path), "--set", "system.preset=zero",
                     "--set", "rate.method=exact"])
        assert code == 4

    def test_strict_rate_search(self, tmp_path):
        code = main(["rate", "--out", str(tmp_path), "--set", "rate.method=variational",
                     "--set", "rate.target={kind: linear, slope: [1.0], m: 64}",
                     "--set", "rate.x0=[1.0]", "--set", "rate.strict=true"])
        assert code == 4

    def test_energy_of_targets(self, tmp_path):
        code = main(["lil", "--out", str(tmp_path), "--set", "lil.mode=recurrence",
                     "--set", "lil.targets=[{id: fast, slope: [2.0]}]"] + SMALL_LIL)
        assert code == 3


def test_skeleton(tmp_path):
    assert main(["skeleton", "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "skeleton_summary.json")
    assert summary["energy"] == pytest.approx(1.0)
    assert len(pd.read_csv(tmp_path / "skeleton_path.csv")) == 64 * 4 + 1


def test_rate_of_the_extreme_line(tmp_path):
    assert main(["rate", "--out", str(tmp_path), "--set", "rate.random_starts=2"]) == 0
    summary = read_json(tmp_path / "rate_summary.json")
    assert summary["exact-pseudo-inverse"] == pytest.approx(1.0, rel=1e-6)
    assert summary["relative_gap"] <= 5e-3
    assert (tmp_path / "rate_control_variational.csv").exists()


class TestRateFallback:
    TANH = ["--set", "system={dim: 1, diffusion: [{family: tanh}], "
                     "limit: {drift: {family: zero}, diffusion: [{family: tanh}]}}",
            "--set", "rate.target={kind: values, values: [[0], [0], [0], [0.05], [0.1], "
                     "[0.15], [0.2], [0.25], [0.3]]}",
            "--set", "rate.m=8", "--set", "rate.random_starts=1", "--set", "rate.max_iter=50"]

    def test_both_falls_back_to_the_search(self, tmp_path):
        assert main(["rate", "--out", str(tmp_path)] + self.TANH) == 0
        with open(tmp_path / "rate_results.jsonl") as fh:
            records = [json.loads(line) for line in fh]
        assert [r["method"] for r in records] == ["exact-pseudo-inverse", "variational"]
        assert records[0]["error"] == "rank-deficient"
        assert records[0]["time"] == pytest.approx(0.0625)
        assert records[0]["sigma_min"] == pytest.approx(0.0, abs=1e-12)
        summary = read_json(tmp_path / "rate_summary.json")
        assert summary["exact_failure"]["error"] == "rank-deficient"
        assert "variational" in summary

    def test_exact_alone_still_fails(self, tmp_path):
        code = main(["rate", "--out", str(tmp_path), "--set", "rate.method=exact"] + self.TANH)
        assert code == 4


def test_rate_refinement_table(tmp_path):
    code = main(["rate", "--out", str(tmp_path), "--set", "rate.method=exact",
                 "--set", "rate.random_starts=1", "--set", "rate.refine=[32, 16]"])
    assert code == 0
    table = pd.read_csv(tmp_path / "rate_refinement.csv")
    assert list(table["m"]) == [16, 32]
    assert table["value"].to_numpy() == pytest.approx([1.0, 1.0], rel=1e-2)
    assert set(read_json(tmp_path / "rate_summary.json")["refinement"]) == {"16", "32"}


def test_dist_of_the_doubled_line(tmp_path):
    assert main(["dist", "--out", str(tmp_path), "--set", "dist.random_starts=2"]) == 0
    result = read_json(tmp_path / "dist_result.json")
    assert result["distance"] == pytest.approx(0.5858, abs=1e-2)
    assert result["radius_bound"] == pytest.approx(2 ** 0.5)


def test_checkers(tmp_path):
    assert main(["check-h", "--out", str(tmp_path / "h")]) == 0
    assert read_json(tmp_path / "h" / "check_h.json")["verdict"] == "PASS"
    assert main(["check-c", "--out", str(tmp_path / "c"), "--set", "initial={kind: gaussian}"]) == 0
    assert read_json(tmp_path / "c" / "check_c.json")["verdict"] == "PASS"


class TestLil:
    def test_convergence_table(self, tmp_path):
        assert main(["lil", "--out", str(tmp_path), "--seeds", "2"] + SMALL_LIL) == 0
        table = pd.read_csv(tmp_path / "lil_report.csv")
        assert len(table) == 2 * (10 - 5 + 1)
        summary = read_json(tmp_path / "lil_summary.json")
        assert summary["first_index"] == 5 and summary["last_index"] == 10
        assert (tmp_path / "lil_phi_ratio.csv").exists()
        assert read_json(tmp_path / "lil_engine.json")["horizon"] == 1024.0

    def test_recurrence_writes_targets(self, tmp_path):
        code = main(["lil", "--out", str(tmp_path), "--seeds", "2", "--set", "lil.mode=recurrence",
                     "--set", "lil.targets=[{id: half, slope: [1.0]}]"] + SMALL_LIL)
        assert code == 0
        targets = pd.read_csv(tmp_path / "lil_targets.csv")
        assert list(targets["target_id"]) == ["half", "half"]

    @pytest.mark.parametrize("mode,name", [("gamma", "lil_gamma.csv"), ("oscillation", "lil_oscillation.csv")])
    def test_statistic_modes(self, tmp_path, mode, name):
        assert main(["lil", "--out", str(tmp_path), "--set", f"lil.mode={mode}"] + SMALL_LIL) == 0
        assert len(pd.read_csv(tmp_path / name)) == 6

    def test_scan(self, tmp_path):
        code = main(["lil", "--out", str(tmp_path), "--set", "lil.mode=scan",
                     "--set", "lil.u_scan=[100.0, 600.0]"] + SMALL_LIL)
        assert code == 0
        scan = pd.read_csv(tmp_path / "lil_scan.csv")
        assert scan["bound_holds"].all()

    def test_unknown_mode(self, tmp_path):
        assert main(["lil", "--out", str(tmp_path), "--set", "lil.mode=spectral"] + SMALL_LIL) == 2
