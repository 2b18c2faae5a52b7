import numpy as np
import pytest

from funnelsim.config import build_scenario, load_config, run_options
from funnelsim.errors import ConfigError
from funnelsim.scenarios import freeflyer_scenario


def test_preset_passthrough():
    sc = build_scenario({"scenario": "freeflyer"})
    ref = freeflyer_scenario()
    assert sc.name == ref.name
    assert np.array_equal(sc.Q, ref.Q)
    assert np.array_equal(sc.R, ref.R)
    assert np.array_equal(sc.bounds.u_max, ref.bounds.u_max)
    assert np.array_equal(sc.bounds.x0, ref.bounds.x0)
    assert sc.n_intervals == ref.n_intervals
    assert sc.sim_dt == ref.sim_dt
    assert np.array_equal(sc.estimation.x_bar_max, ref.estimation.x_bar_max)
    assert sc.model.total_mass == ref.model.total_mass
    assert np.array_equal(sc.deadband, ref.deadband)
    assert set(sc.bounds.waypoints) == set(ref.bounds.waypoints)


def test_overrides_apply():
    doc = {
        "scenario": "freeflyer",
        "n_intervals": 20,
        "sim_dt": 0.01,
        "bounds": {"u_max": [1.0, 1.0, 0.2],
                   "waypoints": {"5": [1.0, 1.0, float("nan"),
                                       float("nan"), float("nan"), float("nan")]}},
        "tracking": {"Q": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]},
        "estimation": {"n_sims": 7, "alpha": 2.0},
    }
    sc = build_scenario(doc)
    assert sc.n_intervals == 20
    assert sc.estimation.m_knots == 20
    assert sc.sim_dt == 0.01
    assert np.array_equal(sc.bounds.u_max, [1.0, 1.0, 0.2])
    # u_min defaults to the mirrored override, not the preset's
    assert np.array_equal(sc.bounds.u_min, [-1.0, -1.0, -0.2])
    assert np.array_equal(sc.Q, np.diag([1.0] * 6))
    assert sc.estimation.n_sims == 7
    assert sc.estimation.alpha == 2.0
    assert list(sc.bounds.waypoints) == [5]
    assert np.isnan(sc.bounds.waypoints[5][2])


def test_full_matrix_weight():
    Q = (np.eye(6) + 0.1).tolist()
    sc = build_scenario({"scenario": "freeflyer", "tracking": {"Q": Q}})
    assert np.allclose(sc.Q, np.eye(6) + 0.1)


def test_from_scratch_config():
    doc = {
        "n_intervals": 8,
        "model": {"base_mass": 1.0, "base_inertia": 0.5},
        "weights": {"w_time": 0.1, "W_effort": [1.0, 1.0, 1.0]},
        "bounds": {"u_max": [2.0, 2.0, 1.0],
                   "x0": [0.0] * 6, "xf": [0.5, 0.3, 0.0, 0.0, 0.0, 0.0]},
        "tracking": {"Q": [10.0] * 6, "R": [1.0] * 3},
        "estimation": {"n_sims": 30, "x_bar_max": [0.05] * 6},
    }
    sc = build_scenario(doc)
    assert sc.name == "custom"
    assert sc.model.state_dim == 6
    assert sc.model.control_dim == 3
    assert sc.estimation.beta == 1000.0
    assert np.isinf(sc.estimation.alpha)
    assert np.array_equal(sc.bounds.u_min, [-2.0, -2.0, -1.0])
    problem = sc.problem()
    assert problem.K == 8


def test_model_with_links_and_payload():
    doc = {
        "n_intervals": 4,
        "model": {
            "base_mass": 100.0, "base_inertia": 66.0, "arm_mount": 1.0,
            "links": [{"mass": 10.0, "inertia": 0.675, "length": 0.9, "com": 0.45}],
            "payload": {"mass": 50.0, "inertia": 3.0},
        },
        "weights": {"w_time": 0.1, "W_effort": [1.0] * 4},
        "bounds": {"u_max": [10.0, 10.0, 50.0, 50.0]},
        "tracking": {"Q": [1.0] * 8, "R": [1.0] * 4},
        "estimation": {"n_sims": 5, "x_bar_max": [0.1] * 8},
    }
    sc = build_scenario(doc)
    assert sc.model.n_joints == 1
    assert sc.model.total_mass == 160.0


@pytest.mark.parametrize("strip,message", [
    ("model", "[model] is required"),
    ("weights", "w_time"),
    ("bounds", "u_max"),
    ("tracking", "'Q' and 'R'"),
    ("estimation", "x_bar_max"),
])
def test_missing_sections_without_preset(strip, message):
    doc = {
        "n_intervals": 8,
        "model": {"base_mass": 1.0, "base_inertia": 0.5},
        "weights": {"w_time": 0.1, "W_effort": [1.0, 1.0, 1.0]},
        "bounds": {"u_max": [2.0, 2.0, 1.0]},
        "tracking": {"Q": [10.0] * 6, "R": [1.0] * 3},
        "estimation": {"n_sims": 30, "x_bar_max": [0.05] * 6},
    }
    del doc[strip]
    with pytest.raises(ConfigError, match="required|missing"):
        try:
            build_scenario(doc)
        except ConfigError as exc:
            assert message in str(exc)
            raise


def test_dimension_errors_name_the_key():
    with pytest.raises(ConfigError, match="bounds.u_max"):
        build_scenario({"scenario": "freeflyer", "bounds": {"u_max": [1.0, 1.0]}})
    with pytest.raises(ConfigError, match="tracking.Q"):
        build_scenario({"scenario": "freeflyer", "tracking": {"Q": [1.0] * 5}})
    with pytest.raises(ConfigError, match="6x6"):
        build_scenario({"scenario": "freeflyer",
                        "tracking": {"Q": [[1.0, 0.0], [0.0, 1.0]]}})


def test_bad_waypoint_key():
    with pytest.raises(ConfigError, match="not an integer"):
        build_scenario({"scenario": "freeflyer",
                        "bounds": {"waypoints": {"abc": [0.0] * 6}}})


def test_model_missing_key():
    with pytest.raises(ConfigError, match="model: missing key"):
        build_scenario({"n_intervals": 4, "model": {"base_mass": 1.0},
                        "weights": {"w_time": 0.1, "W_effort": [1.0] * 3},
                        "bounds": {"u_max": [1.0] * 3},
                        "tracking": {"Q": [1.0] * 6, "R": [1.0] * 3},
                        "estimation": {"n_sims": 5, "x_bar_max": [0.1] * 6}})


def test_run_options_defaults_and_validation():
    opts = run_options({})
    assert opts == {"seed": 0, "n_check": 200, "deadband": False,
                    "parallel": False, "batch_size": 64}
    opts = run_options({"seed": 9, "run": {"n_check": 10, "parallel": True}})
    assert opts["seed"] == 9 and opts["n_check"] == 10 and opts["parallel"]
    with pytest.raises(ConfigError):
        run_options({"run": {"batch_size": 0}})
    with pytest.raises(ConfigError):
        run_options({"run": {"n_check": -1}})


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text('scenario = "freeflyer\n')
    with pytest.raises(ConfigError, match="line 1"):
        load_config(bad)


def test_load_config_special_floats(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        'scenario = "freeflyer"\n'
        'seed = 11\n'
        '[bounds]\n'
        'xf = [2.0, 2.0, nan, 0.0, 0.0, 0.0]\n'
        '[estimation]\n'
        'alpha = inf\n')
    sc, opts = load_config(cfg)
    assert opts["seed"] == 11
    assert np.isnan(sc.bounds.xf[2])
    assert np.isinf(sc.estimation.alpha)
