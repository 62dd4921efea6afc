import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adamfield.adam import (
    AdamState,
    RunConfig,
    Trajectory,
    adam_step,
    run_adam,
    run_adam_batch,
    run_adam_config,
    step_bound,
)
from adamfield.innovation import UniformLaw, constant_innovation, custom_innovation, minibatch_innovation, preset, quadratic
from adamfield.innovation import DiscreteLaw
from adamfield.io import read_csv
from adamfield.rng import TAG_ADAM, stream
from adamfield.schedule import StepSchedule
from adamfield.seq_space import DampingParams

P = DampingParams(0.9, 0.99, 0.1)
SCHED = StepSchedule.preset("inv_n_2_3")


def test_hand_step():
    s = adam_step(AdamState.zeros(1), [2.0], DampingParams(0.0, 0.75, 1.0), 1.0)
    assert s.m[0] == 2.0 and s.v[0] == 1.0
    assert s.sigma[0] == pytest.approx(1 / 3, abs=1e-15)
    assert s.theta[0] == pytest.approx(2 / 3, abs=1e-15)
    assert s.n == 1


def test_zero_input_keeps_theta():
    s0 = AdamState(4, np.array([1.5]), np.zeros(1), np.array([0.3]))
    s1 = adam_step(s0, [0.0], P, 0.1)
    assert s1.theta[0] == 1.5 and s1.v[0] == pytest.approx(P.beta * 0.3)


@given(st.floats(1e-3, 1e3), st.floats(0.0, 0.99), st.floats(0.01, 0.99), st.floats(1e-3, 1.0))
def test_first_step_closed_form(lam, a_frac, beta, eps):
    p = DampingParams(a_frac * math.sqrt(beta), beta, eps)
    s = adam_step(AdamState.zeros(1), [lam], p, 0.5)
    # m = (1-a) lam, vhat = lam^2 after bias correction
    assert s.theta[0] == pytest.approx(0.5 * (1 - p.alpha) * lam / (lam + eps), rel=1e-12)


def test_epsilon_inside_toggle():
    s = adam_step(AdamState.zeros(1), [2.0], DampingParams(0.0, 0.75, 1.0), 1.0, epsilon_inside=True)
    assert s.sigma[0] == pytest.approx(1 / math.sqrt(4 + 1))


def test_step_validation():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(1), [1.0], P, 0.0)
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), [1.0], P, 0.1)
    with pytest.raises(ValueError):
        AdamState(0, [0.0], [0.0], [-1.0])


def _oracle_path(inputs, theta0, p, sched, bias=True):
    """Iterate adam_step on given batch-mean inputs (quadratic innovation)."""
    s = AdamState.zeros(1, theta=[theta0])
    out = [s.theta[0]]
    for n, u in enumerate(inputs, start=1):
        s = adam_step(s, u - s.theta, p, sched.gamma(n), bias_correction=bias)
        out.append(s.theta[0])
    return np.array(out)


@pytest.mark.parametrize("inn", [preset("asymmetric"), minibatch_innovation(preset("asymmetric"), 16),
                                 minibatch_innovation(preset("uniform"), 4), quadratic(UniformLaw(-2, 1))])
def test_compiled_run_matches_step_oracle(inn):
    tr = run_adam(AdamState.zeros(1, theta=[0.3]), inn, P, SCHED, 500, seed=7, replica=2, keep_inputs=True)
    expected_inputs = inn.sample_u(stream(7, TAG_ADAM, 2), 500)
    np.testing.assert_array_equal(tr.inputs, expected_inputs)
    np.testing.assert_allclose(tr.theta[:, 0], _oracle_path(expected_inputs, 0.3, P, SCHED), rtol=1e-12, atol=1e-14)


def test_python_path_matches_compiled_path():
    law = DiscreteLaw((-4.0, 1.0), (0.2, 0.8))
    comp = run_adam(AdamState.zeros(1), quadratic(law), P, SCHED, 300, seed=1, stride=7)
    cust = custom_innovation(law, lambda u, th: u - th, dx_dtheta=-1.0)
    py = run_adam(AdamState.zeros(1), cust, P, SCHED, 300, seed=1, stride=7)
    np.testing.assert_array_equal(comp.n, py.n)
    np.testing.assert_allclose(comp.theta, py.theta, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(comp.v, py.v, rtol=1e-13, atol=1e-15)


def test_m_is_exponential_average_of_inputs():
    inn = preset("uniform")
    tr = run_adam(AdamState.zeros(1, theta=[0.1]), inn, P, SCHED, 100, seed=4, keep_inputs=True)
    x = tr.x[1:, 0]  # recorded X_n
    n = len(x)
    m_direct = (1 - P.alpha) * math.fsum(P.alpha ** (n - k) * x[k - 1] for k in range(1, n + 1))
    assert tr.m[-1, 0] == pytest.approx(m_direct, rel=1e-12)
    v_direct = (1 - P.beta) * math.fsum(P.beta ** (n - k) * x[k - 1] ** 2 for k in range(1, n + 1))
    assert tr.v[-1, 0] == pytest.approx(v_direct, rel=1e-12)


def test_deterministic_innovation_increments():
    inn = constant_innovation(1.0)
    sched = StepSchedule.preset("inv_n")
    tr = run_adam(AdamState.zeros(1), inn, P, sched, 5000, seed=0)
    th = tr.theta[:, 0]
    assert np.all(np.diff(th) > 0)
    assert (th[-1] - th[-2]) / sched.gamma(5000) == pytest.approx(1 / 1.1, rel=1e-9)


def test_constant_input_converges_monotonically():
    inn = quadratic(DiscreteLaw.point(2.0))
    tr = run_adam(AdamState.zeros(1, theta=[-1.0]), inn, DampingParams(0.0, 0.9, 0.1), StepSchedule.power(0.5, 0, 1),
                  20_000, seed=0)
    th = tr.theta[:, 0]
    assert np.all(np.diff(th) >= 0) and np.all(th <= 2.0)
    assert th[-1] == pytest.approx(2.0, abs=1e-2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["asymmetric", "symmetric", "uniform"]))
def test_step_bound_and_positivity(seed, name):
    tr = run_adam(AdamState.zeros(1, theta=[0.5]), preset(name), P, SCHED, 400, seed=seed)
    steps = np.abs(np.diff(tr.theta[:, 0]))
    n = tr.n[1:]
    bound = np.array([step_bound(P, int(k), SCHED.gamma(int(k))) for k in n])
    assert np.all(steps <= bound * (1 + 1e-12))
    assert np.all(tr.v >= 0)


def test_replay_is_bit_identical():
    tr = run_adam(AdamState.zeros(1), preset("asymmetric"), P, SCHED, 1000, seed=11, stride=10)
    again = tr.replay()
    for name in ("theta", "m", "v", "sigma"):
        assert np.array_equal(getattr(tr, name), getattr(again, name), equal_nan=True)
    cfg = RunConfig.from_dict(tr.config.to_dict())
    assert np.array_equal(run_adam_config(cfg).theta, tr.theta)


def test_batch_replica_equals_single_run():
    init = AdamState.zeros(1, theta=[0.2])
    inn = minibatch_innovation(preset("asymmetric"), 8)
    b = run_adam_batch(init, inn, P, SCHED, 300, seed=5, replicas=4, stride=50)
    for r in range(4):
        single = run_adam(init, inn, P, SCHED, 300, seed=5, replica=r, stride=50)
        assert np.array_equal(b.theta[r], single.theta)


def test_record_steps():
    init = AdamState.zeros(1)
    cfg = RunConfig(P, SCHED, preset("uniform"), init, 100, 3, record_steps=(50, 7, 100, 7))
    tr = run_adam_config(cfg)
    assert list(tr.n) == [0, 7, 50, 100]
    full = run_adam(init, preset("uniform"), P, SCHED, 100, seed=3)
    assert np.array_equal(tr.theta[1:], full.theta[[7, 50, 100]])
    with pytest.raises(ValueError):
        RunConfig(P, SCHED, preset("uniform"), init, 10, 0, record_steps=(11,))


def test_restart_from_nonzero_state():
    init = AdamState(10, np.array([0.5]), np.array([0.1]), np.array([0.2]))
    tr = run_adam(init, preset("symmetric"), P, SCHED, 20, seed=0, keep_inputs=True)
    s = init
    for j, u in enumerate(tr.inputs):
        s = adam_step(s, u - s.theta, P, SCHED.gamma(11 + j))
    assert tr.n[-1] == 30
    assert tr.theta[-1, 0] == pytest.approx(s.theta[0], rel=1e-13)


def test_non_finite_run_is_flagged():
    inn = custom_innovation(UniformLaw(), lambda u, th: np.where(th > 1.0, np.nan, 1.0 + 0 * u))
    tr = run_adam(AdamState.zeros(1, theta=[0.9]), inn, P, StepSchedule.constant(1.0), 50, seed=0)
    assert not tr.valid and tr.failed_step is not None


def test_trajectory_csv(tmp_path):
    tr = run_adam(AdamState.zeros(2), preset("uniform", dim=2), P, SCHED, 40, seed=0, stride=10)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    header, rows = read_csv(path)
    assert header == ["n", "t_n", "theta[0]", "theta[1]", "m[0]", "m[1]", "v[0]", "v[1]", "sigma[0]", "sigma[1]"]
    assert len(rows) == 5
    assert float(rows[-1][2]) == tr.theta[-1, 0]
    assert (tmp_path / "t.csv.json").exists()
    assert isinstance(tr, Trajectory)
