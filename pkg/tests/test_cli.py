"""End-to-end command-line tests: every command runs against real artifacts
produced by a tiny training run."""

import csv
import json

import numpy as np
import pytest

from tcvae.autodiff import default_dtype, set_default_dtype
from tcvae.checkpoint import load_checkpoint
from tcvae.cli import main
from tcvae.config import load_run_config
from tcvae.data import load_csv, write_csv
from tcvae.synthetic import drifting_series, random_walk_series, white_noise_series


# captured at collection time, before any fixture can change it; the
# module-scoped workspace fixture trains under the f32 run default, so a
# per-test snapshot would record the polluted value
_IMPORT_DTYPE = default_dtype()


@pytest.fixture(autouse=True)
def _restore_dtype():
    yield
    set_default_dtype(_IMPORT_DTYPE)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    series = drifting_series(length=260, num_variables=2, seed=3)
    data_path = root / "series.csv"
    write_csv(series, data_path)
    config_path = root / "run.conf"
    config_path.write_text(
        f"data = {data_path}\n"
        f"out_dir = {root / 'run'}\n"
        "w = 8\nh = 4\nd = 16\nk = 8\nheads = 2\n"
        "epochs = 2\nbatch_size = 32\nlambda_kl = 0.01\nseed = 1\n",
        encoding="utf-8")
    code = main(["train", "--config", str(config_path)])
    assert code == 0
    return {"root": root, "data": data_path, "config": config_path,
            "run_dir": root / "run", "checkpoint": root / "run" / "model.tcva"}


class TestTrain:
    def test_artifacts_written(self, workspace):
        run_dir = workspace["run_dir"]
        for name in ("model.tcva", "loss_trace.csv", "loss_curve.png",
                     "config.txt"):
            assert (run_dir / name).stat().st_size > 0

    def test_loss_trace_has_one_row_per_epoch(self, workspace):
        with open(workspace["run_dir"] / "loss_trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss"]
        assert len(rows) == 3
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        assert all(np.isfinite(float(r[1])) for r in rows[1:])

    def test_config_echo_is_reloadable(self, workspace):
        run = load_run_config(workspace["run_dir"] / "config.txt")
        assert run.w == 8 and run.h == 4 and run.epochs == 2 and run.seed == 1

    def test_flag_overrides_file(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "short"
        code = main(["train", "--config", str(workspace["config"]),
                     "--epochs", "1", "--out", str(out_dir)])
        assert code == 0
        capsys.readouterr()
        with open(out_dir / "loss_trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 2

    def test_missing_data_path_fails(self, capsys):
        code = main(["train", "--epochs", "1"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_training_defaults_to_f32(self, workspace):
        model, _scaler = load_checkpoint(workspace["checkpoint"])
        dtypes = {p.data.dtype for p in model.parameters()}
        assert dtypes == {np.dtype(np.float32)}

    def test_precision_env_overrides_config(self, workspace, tmp_path,
                                            monkeypatch, capsys):
        monkeypatch.setenv("TCVAE_PRECISION", "f64")
        out_dir = tmp_path / "wide"
        code = main(["train", "--config", str(workspace["config"]),
                     "--epochs", "1", "--out", str(out_dir)])
        assert code == 0
        capsys.readouterr()
        model, _scaler = load_checkpoint(out_dir / "model.tcva")
        dtypes = {p.data.dtype for p in model.parameters()}
        assert dtypes == {np.dtype(np.float64)}


class TestForecast:
    def test_output_mirrors_input_schema(self, workspace, tmp_path, capsys):
        out = tmp_path / "pred.csv"
        code = main(["forecast", "--checkpoint", str(workspace["checkpoint"]),
                     "--data", str(workspace["data"]), "--out", str(out)])
        assert code == 0
        capsys.readouterr()
        source = load_csv(workspace["data"])
        predicted = load_csv(out)
        assert predicted.variable_names == source.variable_names
        assert predicted.length == 4
        spacing = source.timestamps[1] - source.timestamps[0]
        assert predicted.timestamps[0] == source.timestamps[-1] + spacing
        assert np.isfinite(predicted.values).all()

    def test_figure_written_alongside(self, workspace, tmp_path, capsys):
        out = tmp_path / "pred.csv"
        main(["forecast", "--checkpoint", str(workspace["checkpoint"]),
              "--data", str(workspace["data"]), "--out", str(out)])
        capsys.readouterr()
        assert (tmp_path / "pred.png").stat().st_size > 0

    def test_same_seed_reproduces(self, workspace, tmp_path, capsys):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path in paths:
            main(["forecast", "--checkpoint", str(workspace["checkpoint"]),
                  "--data", str(workspace["data"]), "--out", str(path),
                  "--seed", "5"])
        capsys.readouterr()
        assert paths[0].read_text() == paths[1].read_text()

    def test_seed_changes_draw(self, workspace, tmp_path, capsys):
        outputs = []
        for seed in ("5", "6"):
            path = tmp_path / f"s{seed}.csv"
            main(["forecast", "--checkpoint", str(workspace["checkpoint"]),
                  "--data", str(workspace["data"]), "--out", str(path),
                  "--seed", seed])
            outputs.append(load_csv(path).values)
        capsys.readouterr()
        assert not np.array_equal(outputs[0], outputs[1])

    def test_missing_checkpoint_fails(self, workspace, tmp_path, capsys):
        code = main(["forecast", "--checkpoint", str(tmp_path / "nope.tcva"),
                     "--data", str(workspace["data"]),
                     "--out", str(tmp_path / "pred.csv")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_short_series_fails(self, workspace, tmp_path, capsys):
        series = drifting_series(length=6, num_variables=2, seed=0)
        short_path = tmp_path / "short.csv"
        write_csv(series, short_path)
        code = main(["forecast", "--checkpoint", str(workspace["checkpoint"]),
                     "--data", str(short_path),
                     "--out", str(tmp_path / "pred.csv")])
        assert code == 1
        assert "at least 8 rows" in capsys.readouterr().err


class TestEvaluate:
    def test_report_files(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "report"
        code = main(["evaluate", "--checkpoint", str(workspace["checkpoint"]),
                     "--data", str(workspace["data"]), "--out", str(out_dir)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "mae = " in stdout and "persistence_mae = " in stdout
        text = (out_dir / "metrics.txt").read_text()
        keys = [line.split(" = ")[0] for line in text.strip().splitlines()]
        assert keys == ["mae", "rmse", "mape", "count", "zero_targets"]
        report = json.loads((out_dir / "metrics.json").read_text())
        assert set(report) == {"model", "persistence", "mean"}
        assert report["model"]["count"] > 0
        assert (out_dir / "error_curve.png").stat().st_size > 0

    def test_per_window_rows(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "report"
        main(["evaluate", "--checkpoint", str(workspace["checkpoint"]),
              "--data", str(workspace["data"]), "--out", str(out_dir)])
        capsys.readouterr()
        with open(out_dir / "per_window.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["window", "mae", "rmse", "mape"]
        assert len(rows) - 1 == 260 - (8 + 4) + 1

    def test_raw_units_scale_errors_up(self, workspace, tmp_path, capsys):
        out_a = tmp_path / "norm"
        out_b = tmp_path / "raw"
        main(["evaluate", "--checkpoint", str(workspace["checkpoint"]),
              "--data", str(workspace["data"]), "--out", str(out_a)])
        main(["evaluate", "--checkpoint", str(workspace["checkpoint"]),
              "--data", str(workspace["data"]), "--raw-units",
              "--out", str(out_b)])
        capsys.readouterr()
        normalized = json.loads((out_a / "metrics.json").read_text())
        raw = json.loads((out_b / "metrics.json").read_text())
        assert raw["model"]["mae"] != normalized["model"]["mae"]


class TestDriftStats:
    def test_report_and_average(self, tmp_path, capsys):
        series = drifting_series(length=120, num_variables=3, seed=2)
        data_path = tmp_path / "drift.csv"
        write_csv(series, data_path)
        code = main(["drift-stats", "--data", str(data_path),
                     "--out", str(tmp_path)])
        assert code == 0
        capsys.readouterr()
        lines = (tmp_path / "drift_stats.txt").read_text().strip().splitlines()
        assert len(lines) == 4
        names = [line.split(" = ")[0] for line in lines]
        assert names == series.variable_names + ["average"]
        values = [float(line.split(" = ")[1]) for line in lines]
        assert abs(values[-1] - np.mean(values[:-1])) < 1e-5
        assert (tmp_path / "drift_stats.png").stat().st_size > 0

    def test_noise_reads_more_stationary_than_walk(self, tmp_path, capsys):
        noise_path = tmp_path / "noise.csv"
        walk_path = tmp_path / "walk.csv"
        write_csv(white_noise_series(length=300, seed=0), noise_path)
        write_csv(random_walk_series(length=300, seed=0), walk_path)
        stats = {}
        for label, path in (("noise", noise_path), ("walk", walk_path)):
            main(["drift-stats", "--data", str(path),
                  "--out", str(tmp_path / label)])
            line = (tmp_path / label / "drift_stats.txt").read_text() \
                .strip().splitlines()[-1]
            stats[label] = float(line.split(" = ")[1])
        capsys.readouterr()
        assert stats["noise"] < stats["walk"]


class TestPlotData:
    def test_window_report(self, workspace, tmp_path, capsys):
        code = main(["plot-data", "--checkpoint", str(workspace["checkpoint"]),
                     "--data", str(workspace["data"]),
                     "--window-index", "5", "--out", str(tmp_path)])
        assert code == 0
        capsys.readouterr()
        with open(tmp_path / "window_5.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["timestamp", "var1_actual", "var1_predicted",
                           "var2_actual", "var2_predicted"]
        assert len(rows) - 1 == 4
        source = load_csv(workspace["data"])
        for offset, row in enumerate(rows[1:]):
            expected = source.values[5 + 8 + offset]
            assert float(row[1]) == expected[0]
            assert float(row[3]) == expected[1]
        assert (tmp_path / "window_5.png").stat().st_size > 0

    def test_out_of_range_index_fails(self, workspace, tmp_path, capsys):
        code = main(["plot-data", "--checkpoint", str(workspace["checkpoint"]),
                     "--data", str(workspace["data"]),
                     "--window-index", "10000", "--out", str(tmp_path)])
        assert code == 1
        assert "out of range" in capsys.readouterr().err


class TestUsage:
    def test_unknown_command_exits_nonzero_with_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code != 0
        assert "usage:" in capsys.readouterr().err

    def test_no_command_exits_nonzero(self, capsys):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code != 0
