import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adamfield.experiments import (
    ConfigError,
    ExperimentConfig,
    first_order_sign,
    fit_loglog_slope,
    geometric_marks,
    run_rate_in_batch,
    run_rate_in_gamma,
)
from adamfield.innovation import preset
from adamfield.seq_space import DampingParams


def test_fit_examples():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    f = fit_loglog_slope(x, x)
    assert f.slope == pytest.approx(1.0, abs=1e-12) and f.residual == 0.0
    assert fit_loglog_slope(x, np.sqrt(x)).slope == pytest.approx(0.5, abs=1e-12)
    g = fit_loglog_slope(x, 7 / x)
    assert g.slope == pytest.approx(-1.0, abs=1e-12)
    assert g.intercept == pytest.approx(math.log(7), abs=1e-12)
    np.testing.assert_allclose(g.predict(x), 7 / x, rtol=1e-12)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2, 3], [1, 2])


def test_fit_window():
    x = np.arange(1.0, 101.0)
    y = np.where(x < 10, 1.0, x**-2)
    f = fit_loglog_slope(x, y, window=(10, 100))
    assert f.slope == pytest.approx(-2.0, abs=1e-12) and f.window == (10.0, 100.0)


@given(st.floats(-3, 3), st.floats(-5, 5))
def test_fit_recovers_power_laws(a, b):
    x = np.logspace(0, 3, 12)
    f = fit_loglog_slope(x, math.exp(b) * x**a)
    assert f.slope == pytest.approx(a, abs=1e-9)
    assert f.intercept == pytest.approx(b, abs=1e-8)


def test_geometric_marks():
    k = geometric_marks(1000, 10)
    assert k[0] == 1 and k[-1] == 1000 and np.all(np.diff(k) > 0)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(DampingParams(0.8, 0.9, 0.05), {"kind": "power", "a": 1.0, "b": 0.0, "q": 0.6},
                           {"preset": "uniform"}, [1, 4], 10, 500, [3, 4], "o", {"p": 4.0, "theta_grid": [0.0, 0.5]})
    path = tmp_path / "c.toml"
    cfg.save(path)
    back = ExperimentConfig.load(path)
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_config_errors():
    with pytest.raises(ConfigError, match="sections"):
        ExperimentConfig.loads("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"\[run\]"):
        ExperimentConfig.loads("[run]\nreplica = 3\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("[params]\nalpha = 0.9\nbeta = 0.99\nepsilon = 0.1\ngamma = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("not toml [")
    with pytest.raises(ConfigError):
        ExperimentConfig(batch_sizes=[0])
    with pytest.raises(ConfigError):
        ExperimentConfig(innovation={"preset": "nope"}).base_innovation()


def test_first_order_sign():
    assert first_order_sign(preset("asymmetric")) == 1
    assert first_order_sign(preset("symmetric")) == 0


def test_symmetric_batch_rate_is_degenerate():
    cfg = ExperimentConfig(innovation={"preset": "symmetric"}, batch_sizes=[1, 4, 16],
                           options={"chains": [16, 64]})
    res = run_rate_in_batch(cfg)
    assert res.degenerate and res.fit is None and res.predicted_sign == 0
    assert all(r["ci_low"] <= 0 <= r["ci_high"] for r in res.rows)


def test_rate_in_gamma_rejects_constant_innovation():
    cfg = ExperimentConfig(innovation={"kind": "constant", "constant": 1.0})
    assert cfg.base_innovation().kind == "constant"
    with pytest.raises(ConfigError):
        run_rate_in_gamma(cfg, theta_star=0.0)
