import subprocess
import sys

import pytest

from ridescore.cli import main
from ridescore.mtl import TrainConfig
from ridescore.pipeline import PipelineConfig
from ridescore.synth import (
    AnomalyInterval,
    CommuterProfile,
    ScenarioScript,
    format_scenario,
)


def quick_config_file(tmp_path, **kw):
    from dataclasses import replace

    cfg = PipelineConfig(bootstrap_minutes=1.0, train=TrainConfig(epochs=40, seed=0))
    if kw:
        cfg = replace(cfg, **kw)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json(), encoding="utf-8")
    return path


def scenario_file(tmp_path, commuter="c0", feature="speed", name="scenario.txt", weights=None):
    profile = CommuterProfile(*(weights or (1.0, 0.0, 0.0)))
    script = ScenarioScript(
        trip_duration_s=360.0,
        trip_id=f"trip_{commuter}",
        commuter_id=commuter,
        profile=profile,
        anomaly_intervals=(AnomalyInterval(150.0, 230.0, feature, 8.0),),
    )
    path = tmp_path / name
    path.write_text(format_scenario(script), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthesized dataset + trained model shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = quick_config_file(root)
    dataset = root / "trips"
    for i, commuter in enumerate(["c0", "c1"]):
        scenario = scenario_file(
            root, commuter=commuter, feature=["speed", "jerk"][i], name=f"s{i}.txt",
            weights=[(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)][i],
        )
        assert main(["synth", str(scenario), "--count", "5", "--seed", str(10 + i),
                     "--out", str(dataset)]) == 0
    models = root / "models"
    assert main(["train", str(dataset), "--model-name", "m", "--out", str(models),
                 "--config", str(config)]) == 0
    return {
        "root": root,
        "config": config,
        "dataset": dataset,
        "model": models / "m.json",
    }


class TestSynth:
    def test_zero_count_ok(self, tmp_path):
        scenario = scenario_file(tmp_path)
        out = tmp_path / "none"
        assert main(["synth", str(scenario), "--count", "0", "--out", str(out)]) == 0
        assert not list(out.glob("*.trip"))

    def test_deterministic(self, tmp_path):
        scenario = scenario_file(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["synth", str(scenario), "--count", "2", "--seed", "3", "--out", str(a)]) == 0
        assert main(["synth", str(scenario), "--count", "2", "--seed", "3", "--out", str(b)]) == 0
        for pa, pb in zip(sorted(a.glob("*.trip")), sorted(b.glob("*.trip"))):
            assert pa.read_bytes() == pb.read_bytes()

    def test_bad_scenario_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense = 1\n")
        assert main(["synth", str(bad), "--count", "1", "--out", str(tmp_path)]) == 1
        assert "error:" in capsys.readouterr().err


class TestExtractDetect:
    def test_extract_csv(self, workspace, capsys):
        trip = sorted(workspace["dataset"].glob("*.trip"))[0]
        assert main(["extract", str(trip)]) == 0
        out = capsys.readouterr().out
        header = out.splitlines()[0]
        assert header.startswith("window_index,t_mid,speed,jerk,congestion")

    def test_detect_writes_trace(self, workspace, tmp_path):
        trip = sorted(workspace["dataset"].glob("*.trip"))[0]
        out = tmp_path / "trace.csv"
        assert main(["detect", str(trip), "--config", str(workspace["config"]),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert "likelihood_speed" in lines[0]
        assert "flag_congestion" in lines[0]
        assert len(lines) == 73  # header + 72 windows

    def test_detect_deterministic(self, workspace, tmp_path):
        trip = sorted(workspace["dataset"].glob("*.trip"))[0]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["detect", str(trip), "--config", str(workspace["config"]),
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestRunRate:
    def test_run_report(self, workspace, tmp_path, capsys):
        trip = sorted(workspace["dataset"].glob("*.trip"))[0]
        out_dir = tmp_path / "reports"
        assert main(["run", str(trip), "--model", str(workspace["model"]),
                     "--config", str(workspace["config"]), "--out", str(out_dir)]) == 0
        report = capsys.readouterr().out
        kv = dict(line.split(" = ") for line in report.strip().splitlines())
        assert 1 <= int(kv["rating"]) <= 5
        impacts = [float(kv["impact_speed"]), float(kv["impact_congestion"]), float(kv["impact_jerkiness"])]
        assert sum(impacts) == pytest.approx(100.0, abs=0.1)
        report_files = list(out_dir.glob("*.report.txt"))
        trace_files = list(out_dir.glob("*.trace.csv"))
        assert len(report_files) == 1 and len(trace_files) == 1

    def test_run_short_trip_fails_with_message(self, workspace, tmp_path, capsys):
        scenario = scenario_file(tmp_path)
        short_dir = tmp_path / "short"
        # 360 s trip with the default 10-minute bootstrap is too short.
        assert main(["synth", str(scenario), "--count", "1", "--out", str(short_dir)]) == 0
        trip = sorted(short_dir.glob("*.trip"))[0]
        code = main(["run", str(trip), "--model", str(workspace["model"])])
        assert code == 1
        assert "insufficient trip length" in capsys.readouterr().err

    def test_rate_outputs_rating_and_impacts(self, workspace, capsys):
        trip = sorted(workspace["dataset"].glob("*.trip"))[0]
        assert main(["rate", str(trip), "--model", str(workspace["model"]),
                     "--config", str(workspace["config"])]) == 0
        out = capsys.readouterr().out
        assert "rating = " in out
        assert "impact_jerkiness = " in out


class TestEval:
    def test_eval_kv_output(self, workspace, capsys):
        assert main(["eval", str(workspace["dataset"]), "--model", str(workspace["model"]),
                     "--config", str(workspace["config"])]) == 0
        out = capsys.readouterr().out
        kv = dict(line.split(" = ") for line in out.strip().splitlines())
        assert "auc_macro" in kv
        float(kv["auc_macro"])


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "ridescore.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        for sub in ("synth", "extract", "detect", "train", "run", "eval", "rate", "serve"):
            assert sub in proc.stdout
