import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from phmor.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main
from phmor.systems import write_matrix_csv


def write_config(path, **sections):
    base = {
        "run": {"out_dir": str(Path(path).parent / "out")},
        "model": {"kind": "ade",
                  "ade": {"c": 1.0, "d": 1e-3, "num_intervals": 40,
                          "t_end": 0.4}},
        "timestep": {"step_size": 2e-3},
        "offline": {"kind": "extended", "layout": "shared", "num_modes": 2,
                    "num_waves": 1, "snapshot_stride": 20},
        "reduction": {"kind": "separable"},
        "diagnostics": {"power_balance": True, "relative_error": True,
                        "certificate": True},
        "sweep": {"step_sizes": [2e-3, 1e-3]},
    }
    for key, val in sections.items():
        base.setdefault(key, {}).update(val)
    Path(path).write_text(yaml.safe_dump(base))
    return str(path)


@pytest.fixture
def tiny_ade(tmp_path):
    return write_config(tmp_path / "cfg.yaml")


class TestConfigValidation:
    def test_zero_final_time_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.yaml",
                           model={"kind": "ade",
                                  "ade": {"num_intervals": 40, "t_end": 0.0}})
        assert main(["fom-run", "--config", cfg]) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_unknown_model_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", model={"kind": "heat"})
        assert main(["fom-run", "--config", cfg]) == EXIT_CONFIG

    def test_library_only_reductions_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml",
                           reduction={"kind": "factorizable"})
        assert main(["fom-run", "--config", cfg]) == EXIT_CONFIG

    def test_baseline_needs_wildfire(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml",
                           reduction={"kind": "galerkin-baseline"})
        assert main(["fom-run", "--config", cfg]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["fom-run", "--config", str(tmp_path / "nope.yaml")]) \
            == EXIT_CONFIG


class TestPipeline:
    def test_full_ade_pipeline(self, tiny_ade, tmp_path):
        out = tmp_path / "out"
        for cmd in ("fom-run", "offline", "rom-run", "diag"):
            assert main([cmd, "--config", tiny_ade]) == EXIT_OK
        for name in ("fom_trajectory.csv", "fom_stats.json", "modes.csv",
                     "paths.csv", "offline.json", "rom_trajectory.csv",
                     "lifted_trajectory.csv", "power_balance.csv",
                     "error.json", "certificate.json", "diag_summary.json"):
            assert (out / name).exists(), name
            assert (out / (name + ".meta.json")).exists(), name
        summary = json.loads((out / "diag_summary.json").read_text())
        assert summary["relative_error"] < 0.5
        meta = json.loads((out / "fom_trajectory.csv.meta.json").read_text())
        assert set(meta) == {"config_hash", "artifact_version"}

    def test_diag_without_inputs_lists_missing(self, tiny_ade, tmp_path, capsys):
        assert main(["diag", "--config", tiny_ade]) == EXIT_MISSING
        err = capsys.readouterr().err
        assert "missing input artifacts" in err
        payload = json.loads((tmp_path / "out" / "error.json").read_text())
        assert payload["error"] == "missing-inputs"
        assert payload["missing"]

    def test_reproducible_outputs(self, tiny_ade, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["fom-run", "--config", tiny_ade,
                         "--out", str(out)]) == EXIT_OK
        assert (out_a / "fom_trajectory.csv").read_bytes() == \
            (out_b / "fom_trajectory.csv").read_bytes()

    def test_step_size_override(self, tiny_ade, tmp_path):
        assert main(["fom-run", "--config", tiny_ade,
                     "--step-size", "4e-3"]) == EXIT_OK
        traj = (tmp_path / "out" / "fom_trajectory.csv").read_text()
        assert len(traj.strip().splitlines()) == 101

    def test_sweep_reports_convergence_order(self, tiny_ade, tmp_path):
        for cmd in ("fom-run", "offline"):
            assert main([cmd, "--config", tiny_ade]) == EXIT_OK
        assert main(["sweep", "--config", tiny_ade]) == EXIT_OK
        summary = json.loads((tmp_path / "out" / "sweep_summary.json").read_text())
        assert len(summary["members"]) == 2
        assert "max_error_order" in summary
        assert (tmp_path / "out" / "sweep" / "tau_0.002"
                / "power_balance.csv").exists()

    def test_pod_reduction_with_error_bound(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml",
                           reduction={"kind": "lti", "pod_rank": 6},
                           diagnostics={"error_bound": True})
        for cmd in ("fom-run", "rom-run", "diag"):
            assert main([cmd, "--config", cfg]) == EXIT_OK
        out = tmp_path / "out"
        assert (out / "bound.csv").exists()
        summary = json.loads((out / "diag_summary.json").read_text())
        assert summary["bound_valid"] is True

    def test_wildfire_smoke(self, tmp_path):
        cfg = write_config(
            tmp_path / "cfg.yaml",
            model={"kind": "wildfire",
                   "wildfire": {"num_points": 64, "t_end": 8.0}},
            timestep={"step_size": 0.1, "rom_step_size": 0.1},
            offline={"kind": "periodic", "layout": "per-mode",
                     "num_modes": 2, "num_waves": 2, "snapshot_stride": 8},
            reduction={"kind": "separable", "baseline": True},
        )
        for cmd in ("fom-run", "offline", "rom-run", "diag"):
            assert main([cmd, "--config", cfg]) == EXIT_OK
        out = tmp_path / "out"
        assert (out / "baseline_power_balance.csv").exists()
        summary = json.loads((out / "diag_summary.json").read_text())
        assert "baseline_comparison" in summary


class TestCustomLti:
    def test_matrices_from_csv(self, tmp_path, fix_a):
        mdir = tmp_path / "mats"
        mdir.mkdir()
        for name in ("E", "J", "R", "Q", "K", "B"):
            write_matrix_csv(mdir / f"{name}.csv", getattr(fix_a, name))
        write_matrix_csv(mdir / "x0.csv", np.array([[1.0], [0.0]]))
        cfg = write_config(
            tmp_path / "cfg.yaml",
            model={"kind": "custom-lti",
                   "custom_lti": {"matrix_dir": str(mdir), "t_end": 1.0}},
            timestep={"step_size": 0.01},
            reduction={"kind": "lti", "pod_rank": 2},
        )
        for cmd in ("fom-run", "rom-run", "diag"):
            assert main([cmd, "--config", cfg]) == EXIT_OK
        summary = json.loads((tmp_path / "out" / "diag_summary.json").read_text())
        # a rank-2 basis of a 2-state model reproduces it exactly
        assert summary["relative_error"] <= 1e-8
