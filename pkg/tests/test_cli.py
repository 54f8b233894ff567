import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from wbdoa.cli import main
from wbdoa.config import apply_sweep_value, load_config

TINY_TOML = """
[geometry]
num_sensors = 4
spacing_m = 0.5
wave_speed_mps = 1500.0
sample_rate_hz = 3000.0

[signal]
n_samples = 32

[scenario]
noise_power = 1.0

[[scenario.sources]]
doa_deg = 30.0
snr_db = 6.0
band_hz = [100.0, 1000.0]

[sampler]
n_samples = 256
n_burnin = 64

[experiment]
replications = 2

[experiment.sweep]
axis = "snr_db"
values = [0.0, 6.0]
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(TINY_TOML)
    return path


def run_ok(args):
    result = CliRunner().invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestConfig:
    def test_toml_round_trip(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg.geometry.num_sensors == 4
        assert cfg.signal.n_samples == 32 and cfg.signal.period == 64
        assert len(cfg.sources) == 1
        assert cfg.sources[0].doa == pytest.approx(np.radians(30.0))
        assert cfg.sampler.n_samples == 256
        assert cfg.sweep_axis == "snr_db" and cfg.sweep_values == (0.0, 6.0)

    def test_json_accepted(self, tmp_path):
        payload = {
            "geometry": {"num_sensors": 2},
            "signal": {"n_samples": 16},
            "scenario": {"sources": [{"doa_deg": 0.0, "snr_db": 0.0, "band_hz": [10, 700]}]},
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(payload))
        cfg = load_config(path)
        assert cfg.geometry.num_sensors == 2 and len(cfg.sources) == 1

    def test_profiles_override_dimensions(self, tiny_config):
        desk = load_config(tiny_config, profile="desk")
        paper = load_config(tiny_config, profile="paper")
        assert (desk.geometry.num_sensors, desk.signal.n_samples) == (8, 128)
        assert (paper.geometry.num_sensors, paper.signal.n_samples) == (20, 256)
        assert paper.sampler.n_samples == 2**12 and paper.sampler.n_burnin == 2**10

    def test_sweep_specialization(self, tiny_config):
        cfg = load_config(tiny_config)
        at_zero = apply_sweep_value(cfg, 0.0)
        assert at_zero.sources[0].snr_db == 0.0

    def test_separation_axis_requires_two_sources(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(
            TINY_TOML.replace('axis = "snr_db"', 'axis = "separation_deg"')
        )
        with pytest.raises(ValueError, match="two sources"):
            load_config(bad)

    def test_separation_axis_places_sources_symmetrically(self, tmp_path):
        two = tmp_path / "two.toml"
        extra = '\n[[scenario.sources]]\ndoa_deg = -30.0\nsnr_db = 6.0\nband_hz = [100.0, 1000.0]\n'
        two.write_text(
            TINY_TOML.replace('axis = "snr_db"', 'axis = "separation_deg"')
            .replace("values = [0.0, 6.0]", "values = [10.0, 20.0]")
            + extra
        )
        cfg = apply_sweep_value(load_config(two), 10.0)
        doas = sorted(np.degrees(s.doa) for s in cfg.sources)
        assert doas[1] - doas[0] == pytest.approx(10.0)
        assert np.mean(doas) == pytest.approx(0.0)  # symmetric about the midpoint


class TestShippedScenarios:
    SCENARIOS = Path(__file__).parent.parent / "scenarios"

    def test_all_scenarios_parse(self):
        paths = sorted(self.SCENARIOS.glob("*.toml"))
        assert paths
        for path in paths:
            load_config(path)

    def test_four_source_demo_ground_truth(self, tmp_path):
        out = tmp_path / "demo"
        run_ok([
            "simulate", "--config", str(self.SCENARIOS / "four_source_demo.toml"),
            "--seed", "0", "--out", str(out),
        ])
        truth = json.loads((out / "truth.json").read_text())
        assert truth["k"] == 4
        assert truth["doas_deg"] == pytest.approx([-60.0, -15.0, 30.0, 45.0])
        assert truth["snr_db"] == [-6.0, 4.0, 0.0, -4.0]


class TestSimulate:
    def test_writes_artifacts(self, tiny_config, tmp_path):
        out = tmp_path / "sim"
        run_ok(["simulate", "--config", str(tiny_config), "--seed", "1", "--out", str(out)])
        data = np.loadtxt(out / "data.csv", delimiter=",", skiprows=1)
        assert data.shape == (32, 4)
        truth = json.loads((out / "truth.json").read_text())
        assert truth["k"] == 1
        assert truth["doas_deg"] == pytest.approx([30.0])
        assert (out / "meta.json").exists()

    def test_noise_only_scenario(self, tmp_path):
        cfg_path = tmp_path / "null.toml"
        cfg_path.write_text(
            "\n".join(
                line
                for line in TINY_TOML.splitlines()
                if not line.startswith(("[[scenario.sources", "doa_deg", "snr_db", "band_hz"))
            )
        )
        out = tmp_path / "sim0"
        run_ok(["simulate", "--config", str(cfg_path), "--seed", "0", "--out", str(out)])
        assert json.loads((out / "truth.json").read_text())["k"] == 0

    def test_byte_identical_per_seed(self, tiny_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            run_ok(["simulate", "--config", str(tiny_config), "--seed", "9", "--out", str(out)])
        assert (out_a / "data.csv").read_bytes() == (out_b / "data.csv").read_bytes()
        assert (out_a / "truth.json").read_bytes() == (out_b / "truth.json").read_bytes()


class TestInferReconstructReport:
    @pytest.fixture
    def simulated(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        run_ok(["simulate", "--config", str(tiny_config), "--seed", "2", "--out", str(out)])
        return out

    def test_infer_outputs(self, tiny_config, simulated):
        run_ok([
            "infer", "--data", str(simulated / "data.csv"),
            "--config", str(tiny_config), "--seed", "3", "--out", str(simulated),
        ])
        report = json.loads((simulated / "report.json").read_text())
        assert sum(report["pmf"]) == pytest.approx(1.0, abs=1e-12)
        assert len(report["pmf"]) == 4  # k_max + 1 with 4 sensors
        assert (simulated / "trace.jsonl").exists()

    def test_infer_deterministic(self, tiny_config, simulated, tmp_path):
        outs = []
        for name in ("i1", "i2"):
            out = tmp_path / name
            run_ok([
                "infer", "--data", str(simulated / "data.csv"),
                "--config", str(tiny_config), "--seed", "4", "--out", str(out),
            ])
            outs.append(out)
        a, b = outs
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert (a / "trace.jsonl").read_bytes() == (b / "trace.jsonl").read_bytes()

    def test_infer_shape_mismatch_fails(self, tiny_config, simulated, tmp_path):
        data = np.loadtxt(simulated / "data.csv", delimiter=",", skiprows=1)
        bad = tmp_path / "bad.csv"
        header = ",".join(f"sensor_{i}" for i in range(3))
        np.savetxt(bad, data[:, :3], delimiter=",", header=header, comments="")
        result = CliRunner().invoke(
            main,
            ["infer", "--data", str(bad), "--config", str(tiny_config), "--out", str(tmp_path)],
        )
        assert result.exit_code != 0

    def test_report_from_trace(self, tiny_config, simulated, tmp_path):
        run_ok([
            "infer", "--data", str(simulated / "data.csv"),
            "--config", str(tiny_config), "--seed", "3", "--out", str(simulated),
        ])
        out = tmp_path / "rep"
        run_ok([
            "report", "--trace", str(simulated / "trace.jsonl"),
            "--config", str(tiny_config), "--out", str(out),
        ])
        a = json.loads((simulated / "report.json").read_text())
        b = json.loads((out / "report.json").read_text())
        assert a["k_hat"] == b["k_hat"] and a["pmf"] == b["pmf"]

    def test_reconstruct_row_count(self, tiny_config, simulated):
        run_ok([
            "infer", "--data", str(simulated / "data.csv"),
            "--config", str(tiny_config), "--seed", "3", "--out", str(simulated),
        ])
        run_ok([
            "reconstruct", "--trace", str(simulated / "trace.jsonl"),
            "--data", str(simulated / "data.csv"),
            "--config", str(tiny_config), "--seed", "5", "--out", str(simulated),
        ])
        with open(simulated / "reconstruction.csv") as fh:
            rows = list(csv.DictReader(fh))
        report = json.loads((simulated / "report.json").read_text())
        assert len(rows) == report["k_hat"] * 64  # period = 2 * 32
        assert set(rows[0]) == {"source", "n", "mean", "lower", "upper"}


class TestSweep:
    def test_rows_and_resume(self, tiny_config, tmp_path):
        out = tmp_path / "sweep"
        run_ok(["sweep", "--config", str(tiny_config), "--seed", "6", "--out", str(out)])
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4  # 2 axis values x 2 replications
        assert {r["correct"] for r in rows} <= {"0", "1"}
        assert all(r["k_true"] == "1" for r in rows)
        # rerun: all cells already present, nothing appended
        result = run_ok(["sweep", "--config", str(tiny_config), "--seed", "6", "--out", str(out)])
        assert "0 new rows" in result.output
        with open(out / "sweep.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 4

    def test_accuracy_trend_over_snr(self, tmp_path):
        # reduced scale: accuracy should be non-decreasing in SNR up to noise
        from scipy import stats

        cfg_path = tmp_path / "trend.toml"
        cfg_path.write_text(
            TINY_TOML.replace("num_sensors = 4", "num_sensors = 8")
            .replace("n_samples = 32", "n_samples = 64")
            .replace("n_samples = 256", "n_samples = 512")
            .replace("n_burnin = 64", "n_burnin = 128")
            .replace("values = [0.0, 6.0]", "values = [-12.0, -4.0, 4.0]")
            .replace("replications = 2", "replications = 4")
        )
        out = tmp_path / "trend"
        run_ok(["sweep", "--config", str(cfg_path), "--seed", "8", "--out", str(out)])
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        means = []
        for value in (-12.0, -4.0, 4.0):
            cell = [int(r["correct"]) for r in rows if float(r["axis"]) == value]
            means.append(np.mean(cell))
        rho = stats.spearmanr([-12.0, -4.0, 4.0], means).statistic
        assert np.isnan(rho) or rho >= 0.0

    def test_parallel_matches_serial(self, tiny_config, tmp_path):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        run_ok(["sweep", "--config", str(tiny_config), "--seed", "7", "--out", str(serial)])
        run_ok(["sweep", "--config", str(tiny_config), "--seed", "7", "--out", str(parallel), "--jobs", "2"])

        def stable_rows(path):
            with open(path / "sweep.csv") as fh:
                return [
                    {k: v for k, v in row.items() if k != "wall_time"}
                    for row in csv.DictReader(fh)
                ]

        assert stable_rows(serial) == stable_rows(parallel)


class TestMcmcTestCommand:
    def test_broken_kernel_exits_nonzero(self, tmp_path):
        result = CliRunner().invoke(
            main,
            ["mcmc-test", "--draws", "400", "--seed", "0", "--kernel", "broken-death",
             "--out", str(tmp_path)],
        )
        assert result.exit_code == 1
        payload = json.loads((tmp_path / "mcmc_test.json").read_text())
        assert payload["passed"] is False and payload["kernel"] == "broken-death"
