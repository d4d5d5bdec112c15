import numpy as np
import pandas as pd
import pytest
import yaml

from compdid.core.config import build_bandwidth_config, deep_merge, get_criterion, get_kernel_family, load_run_config
from compdid.core.errors import ConfigError
from compdid.main import _estimate_overrides, build_parser, main
from compdid.models.config import CvCriterion
from compdid.services.report import read_estimation_report, read_mc_report
from compdid.tools.kernels import KernelFamily


def _write_inputs(tmp_path, data, drop_cell=None):
    frame = pd.DataFrame({
        "y": data.y, "d": data.d, "t": data.t,
        "x1": data.x_c[:, 0], "xu": data.x_u[:, 0], "xo": data.x_o[:, 0],
    })
    if drop_cell is not None:
        frame = frame[~((frame["d"] == drop_cell[0]) & (frame["t"] == drop_cell[1]))]
    csv = tmp_path / "data.csv"
    frame.to_csv(csv, index=False)
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump({
        "input": str(csv),
        "columns": {"outcome": "y", "treatment": "d", "period": "t",
                    "continuous": ["x1"], "unordered": ["xu"], "ordered": ["xo"]},
        "fixed_bandwidths": {"h": 0.8, "lam": [0.5, 0.5], "b": 0.8, "theta": [0.5, 0.5]},
    }))
    return config


def test_estimate_command(tmp_path, mixed_data):
    config = _write_inputs(tmp_path, mixed_data)
    code = main(["estimate", "--config", str(config), "--no-bootstrap",
                 "--output", str(tmp_path / "out"), "--format", "json"])
    assert code == 0
    report = read_estimation_report(tmp_path / "out.json")
    assert report.n == mixed_data.n
    assert {e.kind for e in report.estimates} == {"dr", "sz", "twfe_linear", "twfe_saturated"}
    assert report.config["bootstrap"] is None


def test_empty_cell_exit_code(tmp_path, mixed_data, capsys):
    config = _write_inputs(tmp_path, mixed_data, drop_cell=(1, 1))
    code = main(["estimate", "--config", str(config), "--no-bootstrap", "--output", str(tmp_path / "out")])
    assert code == 4
    assert "[estimators] empty treatment cell (1,1)" in capsys.readouterr().err


def test_missing_column_exit_code(tmp_path, mixed_data, capsys):
    config = _write_inputs(tmp_path, mixed_data)
    settings = yaml.safe_load(config.read_text())
    settings["columns"]["continuous"] = ["income"]
    config.write_text(yaml.safe_dump(settings))
    assert main(["estimate", "--config", str(config), "--no-bootstrap"]) == 3
    assert "income" in capsys.readouterr().err


def test_invalid_floor_exit_code(tmp_path, mixed_data, capsys):
    config = _write_inputs(tmp_path, mixed_data)
    assert main(["estimate", "--config", str(config), "--floor", "0.3"]) == 2
    assert "floor" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["estimate", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_invalid_design_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["simulate", "--design", "3"])
    assert excinfo.value.code == 2


def test_command_is_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_flags_override_the_config_file(tmp_path, mixed_data):
    config = _write_inputs(tmp_path, mixed_data)
    args = build_parser().parse_args([
        "estimate", "--config", str(config), "--orders", "2", "0", "--criterion", "ls", "--draws", "77", "--seed", "5",
    ])
    resolved = load_run_config(args.config, _estimate_overrides(args))
    assert (resolved.p_order, resolved.q_order) == (2, 0)
    assert resolved.bandwidth.criterion is CvCriterion.LEAST_SQUARES
    assert resolved.bootstrap.draws == 77 and resolved.bootstrap.seed == 5
    assert resolved.fixed_bandwidths.h == 0.8


def test_simulate_command(tmp_path):
    code = main([
        "simulate", "--design", "2", "--reps", "2", "--n", "200", "--seed", "7", "--criterion", "ml",
        "--output", str(tmp_path / "mc"), "--format", "json",
    ])
    assert code == 0
    report = read_mc_report(tmp_path / "mc.json")
    assert report.design == 2 and report.n == 200 and report.seed == 7
    assert report.replications == 2
    assert np.isfinite(report.true_att)


def test_name_lookups():
    assert get_kernel_family("Quartic") is KernelFamily.BIWEIGHT
    assert get_kernel_family("gaussian") is KernelFamily.EPANECHNIKOV
    assert get_criterion("least_squares") is CvCriterion.LEAST_SQUARES


def test_deep_merge_keeps_untouched_keys():
    merged = deep_merge({"bootstrap": {"draws": 999, "seed": 0}, "floor": 0.01}, {"bootstrap": {"seed": 3}})
    assert merged == {"bootstrap": {"draws": 999, "seed": 3}, "floor": 0.01}


def test_bandwidth_section():
    config = build_bandwidth_config({"bandwidth": {"criterion": "likelihood", "grid_size": 4}}, coarse=True)
    assert config.coarse and config.grid_size == 4
    assert config.criterion is CvCriterion.LOCAL_LIKELIHOOD
    with pytest.raises(ConfigError):
        build_bandwidth_config({"bandwidth": {"grid_size": 0}})
