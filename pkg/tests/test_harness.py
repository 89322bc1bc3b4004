"""Tests for spec parsing, experiment runs, CSV output, CLI, and sweeps."""

import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from particleflow import (
    ConfigError,
    load_spec,
    read_metrics_csv,
    read_particles_csv,
    run_experiment,
    run_sweep,
    save_spec,
    spec_from_dict,
    spec_to_dict,
)
from particleflow.cli import main as cli_main


def _minimal_spec(**overrides):
    raw = {
        "name": "unit",
        "particles": 12,
        "seed": 3,
        "repeats": 2,
        "target": {"kind": "bimodal-gauss"},
        "init": {"kind": "gaussian", "center": 0.0, "scale": 2.0},
        "sampler": {"kind": "sgld", "stepsize": 0.05, "iterations": 20},
        "metrics": {"names": ["moments"], "cadence": 5},
        "grid": {"resolution": 120},
        "snapshots": {"iterations": [0, 20], "plots": False},
    }
    raw.update(overrides)
    return raw


class TestSpecParsing:
    def test_round_trip(self):
        spec = spec_from_dict(_minimal_spec())
        again = spec_from_dict(spec_to_dict(spec))
        assert spec == again

    def test_unknown_top_key_suggestion(self):
        with pytest.raises(ConfigError, match="repeats"):
            spec_from_dict(_minimal_spec(repeat=3))

    def test_unknown_sampler_kind_suggestion(self):
        raw = _minimal_spec()
        raw["sampler"]["kind"] = "swgd"
        with pytest.raises(ConfigError, match="svgd"):
            spec_from_dict(raw)

    def test_unknown_metric_suggestion(self):
        raw = _minimal_spec()
        raw["metrics"]["names"] = ["momnets"]
        with pytest.raises(ConfigError, match="moments"):
            spec_from_dict(raw)

    def test_missing_required_sections(self):
        with pytest.raises(ConfigError, match="particles"):
            spec_from_dict({"target": {"kind": "ring"}, "sampler": {"kind": "sgld"}})

    def test_metric_target_compatibility(self):
        raw = _minimal_spec()
        raw["metrics"]["names"] = ["accuracy"]
        with pytest.raises(ConfigError, match="logistic"):
            spec_from_dict(raw)

    def test_density_metrics_need_2d(self):
        raw = _minimal_spec(target={"kind": "gaussian", "dim": 5})
        with pytest.raises(ConfigError, match="2-D"):
            spec_from_dict(raw)

    def test_init_center_length_checked(self):
        raw = _minimal_spec()
        raw["init"] = {"kind": "gaussian", "center": [1.0, 2.0, 3.0], "scale": 1.0}
        with pytest.raises(ConfigError):
            spec_from_dict(raw)

    def test_snapshot_iterations_bounded(self):
        raw = _minimal_spec()
        raw["snapshots"] = {"iterations": [0, 999]}
        with pytest.raises(ConfigError):
            spec_from_dict(raw)

    def test_yaml_error_carries_position(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("name: x\n  indent: wrong\n")
        with pytest.raises(ConfigError, match="line"):
            load_spec(bad)

    def test_save_load_round_trip(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        path = tmp_path / "spec.yaml"
        save_spec(spec, path)
        assert load_spec(path) == spec

    def test_logreg_file_requires_existing_path(self):
        raw = _minimal_spec(target={"kind": "logreg-file", "path": "/nonexistent/data.csv"},
                            metrics={"names": ["accuracy"]})
        with pytest.raises(ConfigError, match="exist"):
            spec_from_dict(raw)


class TestRunExperiment:
    def test_output_files_and_schemas(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        result = run_experiment(spec, out_dir=tmp_path / "out")
        out = Path(result.out_dir)
        assert (out / "metrics.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "runs.csv").exists()
        assert (out / "particles_s3_i0.csv").exists()
        assert (out / "particles_s4_i20.csv").exists()
        with open(out / "metrics.csv") as fh:
            header = fh.readline().strip()
        assert header == "iteration,metric,seed,value"
        with open(out / "particles_s3_i0.csv") as fh:
            header = fh.readline().strip()
        assert header == "iteration,particle,dim0,dim1"
        with open(out / "summary.csv") as fh:
            header = fh.readline().strip()
        assert header == "iteration,metric,count,mean,std"

    def test_metrics_round_trip_exact(self, tmp_path):
        """%.17g formatting preserves doubles bit for bit."""
        spec = spec_from_dict(_minimal_spec())
        result = run_experiment(spec, out_dir=tmp_path / "out")
        rows = read_metrics_csv(Path(result.out_dir) / "metrics.csv")
        by_key = {(it, metric, seed): value for it, metric, seed, value in rows}
        for run in result.runs:
            for rec in run.records:
                assert by_key[(rec.iteration, rec.metric, run.seed)] == rec.value

    def test_particles_round_trip_exact(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        result = run_experiment(spec, out_dir=tmp_path / "out")
        final = result.runs[0].snapshots[20]
        iteration, got = read_particles_csv(Path(result.out_dir) / "particles_s3_i20.csv")
        assert iteration == 20
        np.testing.assert_array_equal(got, final)

    def test_rerun_is_byte_identical(self, tmp_path):
        """Same spec, two runs: every output byte matches (figures included)."""
        spec = spec_from_dict(_minimal_spec(snapshots={"iterations": [0, 20], "plots": True}))
        a = run_experiment(spec, out_dir=tmp_path / "a")
        b = run_experiment(spec, out_dir=tmp_path / "b")
        files_a = sorted(p.name for p in Path(a.out_dir).iterdir())
        files_b = sorted(p.name for p in Path(b.out_dir).iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (Path(a.out_dir) / name).read_bytes() == (Path(b.out_dir) / name).read_bytes(), name

    def test_seeds_produce_distinct_runs(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        result = run_experiment(spec, out_dir=tmp_path / "out")
        a = result.runs[0].final_positions
        b = result.runs[1].final_positions
        assert not np.array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_recorded_not_raised(self, tmp_path):
        raw = _minimal_spec()
        raw["sampler"] = {"kind": "svgd", "stepsize": 1e9, "iterations": 30, "bandwidth": 1.0}
        raw["metrics"] = {"names": [], "cadence": 5}
        spec = spec_from_dict(raw)
        result = run_experiment(spec, out_dir=tmp_path / "out")
        statuses = [r.status for r in result.runs]
        assert "diverged" in statuses
        with open(Path(result.out_dir) / "runs.csv") as fh:
            body = fh.read()
        assert "diverged" in body

    def test_curves_figure_written_when_metrics_exist(self, tmp_path):
        spec = spec_from_dict(_minimal_spec(snapshots={"iterations": [0], "plots": True}))
        result = run_experiment(spec, out_dir=tmp_path / "out")
        assert (Path(result.out_dir) / "curves.svg").exists()

    def test_mode_coverage_metric_rows(self, tmp_path):
        raw = _minimal_spec()
        raw["metrics"] = {"names": ["mode-coverage"], "cadence": 20, "mode_radius": 1.0}
        spec = spec_from_dict(raw)
        result = run_experiment(spec, out_dir=tmp_path / "out")
        metrics = {rec.metric for run in result.runs for rec in run.records}
        assert {"mode_share_0", "mode_share_1"} <= metrics


class TestLogregExperiment:
    def test_accuracy_metrics_present(self, tmp_path):
        raw = {
            "name": "lr",
            "particles": 8,
            "seed": 1,
            "repeats": 1,
            "target": {"kind": "logreg-synth", "n": 300, "dim": 3, "separation": 2.0,
                       "train_fraction": 0.8, "data_seed": 5},
            "init": {"kind": "gaussian", "center": 0.0, "scale": 0.1},
            "sampler": {"kind": "svgd", "stepsize": 0.001, "iterations": 40},
            "metrics": {"names": ["accuracy", "log-likelihood"], "cadence": 10},
            "snapshots": {"iterations": [0], "plots": False},
        }
        spec = spec_from_dict(raw)
        result = run_experiment(spec, out_dir=tmp_path / "out")
        metrics = {rec.metric for run in result.runs for rec in run.records}
        assert {"accuracy", "log_likelihood"} <= metrics
        accs = [rec.value for run in result.runs for rec in run.records
                if rec.metric == "accuracy"]
        assert all(0.0 <= a <= 1.0 for a in accs)


class TestSweep:
    def test_sweep_writes_per_value_dirs_and_table(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        root = tmp_path / "sweep"
        results = run_sweep(spec, "sampler.stepsize", [0.02, 0.05], root)
        assert len(results) == 2
        assert (root / "sampler.stepsize=0.02").is_dir()
        assert (root / "sampler.stepsize=0.05").is_dir()
        with open(root / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["value"] for r in rows} == {"0.02", "0.05"}
        assert all(r["param"] == "sampler.stepsize" for r in rows)

    def test_sweep_rejects_unknown_path(self, tmp_path):
        spec = spec_from_dict(_minimal_spec())
        with pytest.raises(ConfigError):
            run_sweep(spec, "sampler.bogus", [1.0], tmp_path / "sweep")


class TestCli:
    def _write_spec(self, tmp_path, **overrides):
        path = tmp_path / "spec.yaml"
        with open(path, "w") as fh:
            yaml.safe_dump(_minimal_spec(**overrides), fh)
        return path

    def test_run_ok(self, tmp_path, capsys):
        path = self._write_spec(tmp_path)
        code = cli_main(["run", str(path), "-o", str(tmp_path / "out")])
        assert code == 0
        assert "wrote" in capsys.readouterr().out
        assert (tmp_path / "out" / "metrics.csv").exists()

    def test_validate_ok(self, tmp_path, capsys):
        path = self._write_spec(tmp_path)
        assert cli_main(["validate", str(path)]) == 0
        assert "name: unit" in capsys.readouterr().out

    def test_validate_bad_spec_exit_1(self, tmp_path, capsys):
        path = tmp_path / "spec.yaml"
        path.write_text("particles: 10\n")  # missing target and sampler
        assert cli_main(["validate", str(path)]) == 1

    def test_missing_file_exit_3(self, tmp_path):
        assert cli_main(["run", str(tmp_path / "nope.yaml")]) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_2(self, tmp_path):
        path = self._write_spec(
            tmp_path,
            sampler={"kind": "svgd", "stepsize": 1e9, "iterations": 30, "bandwidth": 1.0},
            metrics={"names": [], "cadence": 5},
        )
        assert cli_main(["run", str(path), "-o", str(tmp_path / "out")]) == 2

    def test_plot_metrics_csv(self, tmp_path):
        path = self._write_spec(tmp_path)
        assert cli_main(["run", str(path), "-o", str(tmp_path / "out")]) == 0
        fig = tmp_path / "fig.svg"
        assert cli_main(["plot", str(tmp_path / "out" / "metrics.csv"), "-o", str(fig)]) == 0
        assert fig.exists() and fig.stat().st_size > 0

    def test_plot_particles_csv(self, tmp_path):
        path = self._write_spec(tmp_path)
        assert cli_main(["run", str(path), "-o", str(tmp_path / "out")]) == 0
        fig = tmp_path / "cloud.svg"
        src = tmp_path / "out" / "particles_s3_i20.csv"
        assert cli_main(["plot", str(src), "-o", str(fig)]) == 0
        assert fig.exists()

    def test_sweep_cli(self, tmp_path):
        path = self._write_spec(tmp_path)
        code = cli_main(["sweep", str(path), "--param", "sampler.stepsize",
                         "--values", "0.02,0.05", "-o", str(tmp_path / "sweep")])
        assert code == 0
        assert (tmp_path / "sweep" / "sweep.csv").exists()
