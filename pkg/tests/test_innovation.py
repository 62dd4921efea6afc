import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adamfield.innovation import (
    DiscreteLaw,
    InnovationSpec,
    NormalLaw,
    UniformLaw,
    constant_innovation,
    custom_innovation,
    law_from_dict,
    minibatch_innovation,
    preset,
    quadratic,
)
from adamfield.rng import stream


def test_presets():
    a = preset("asymmetric")
    assert a.mean_u == 0.0
    assert a.x_moment(3, 0.0) == pytest.approx(-12.0)
    s = preset("symmetric")
    assert s.x_moment(3, 0.0) == 0.0
    with pytest.raises(ValueError):
        preset("nope")


@pytest.mark.parametrize("m", [1, 4, 16])
def test_minibatch_variance(m):
    inn = minibatch_innovation(preset("asymmetric"), m)
    u = inn.sample_u(stream(3, 0), 100_000)[:, 0]
    x = inn.x_of(u[:, None], np.array([0.7]))[:, 0]
    target = preset("asymmetric").law.var / m
    se = x.var() * math.sqrt(2 / (len(x) - 1))
    assert abs(x.var(ddof=1) - target) <= 3 * se
    assert abs(x.mean() - (0.0 - 0.7)) <= 3 * x.std() / math.sqrt(len(x))


def test_minibatch_one_is_base():
    base = preset("uniform")
    assert minibatch_innovation(base, 1) == base
    with pytest.raises(ValueError):
        minibatch_innovation(base, 0)


def test_exact_batch_law_matches_convolution_oracle():
    law = DiscreteLaw((-4.0, 1.0), (0.2, 0.8))
    bm = law.batch_mean(5)
    # binomial count of the +1 atoms
    for j in range(6):
        val = (j * 1.0 + (5 - j) * -4.0) / 5
        prob = math.comb(5, j) * 0.8**j * 0.2 ** (5 - j)
        k = bm.values.index(pytest.approx(val))
        assert bm.probs[k] == pytest.approx(prob, rel=1e-12)


def test_non_lattice_law_has_no_exact_batch():
    law = DiscreteLaw((0.0, 1.0, math.pi), (0.3, 0.3, 0.4))
    assert law.batch_mean(3) is None
    inn = minibatch_innovation(quadratic(law), 3)
    assert inn.kernel_law().raw_batch == 3


def test_raw_batch_sampling_matches_exact_law_in_distribution():
    law = DiscreteLaw((-1.0, 2.0), (0.5, 0.5))
    exact = law.batch_mean(4)
    raw = np.mean(law.sample(stream(1, 1), (200_000, 4)), axis=1)
    for v, p in zip(exact.values, exact.probs):
        freq = np.mean(np.isclose(raw, v))
        assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / len(raw))


@given(st.floats(-3, 3), st.integers(1, 5))
def test_uniform_moments_match_quadrature(center, q):
    law = UniformLaw(-1.0, 2.0)
    x = np.linspace(-1.0, 2.0, 200_001)
    ref = np.trapezoid(np.abs(x - center) ** q, x) / 3.0
    assert law.moment(q, center, absolute=True) == pytest.approx(ref, rel=1e-6, abs=1e-9)
    ref_signed = np.trapezoid((x - center) ** q, x) / 3.0
    assert law.moment(q, center) == pytest.approx(ref_signed, rel=1e-6, abs=1e-8)


def test_normal_moments():
    law = NormalLaw(0.5, 2.0)
    assert law.moment(2) == pytest.approx(0.25 + 4.0)
    assert law.moment(3) == pytest.approx(0.125 + 3 * 0.5 * 4.0)
    assert law.moment(1, center=0.5, absolute=True) == pytest.approx(2.0 * math.sqrt(2 / math.pi))
    assert NormalLaw().batch_mean(4).sd == 0.5


def test_same_stream_same_samples():
    inn = preset("uniform")
    a = inn.sample_u(stream(9, 1, 2), 50)
    b = inn.sample_u(stream(9, 1, 2), 50)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, inn.sample_u(stream(9, 1, 3), 50))


def test_constant_and_custom():
    c = constant_innovation(2.0, dim=2)
    assert np.array_equal(c.x_of(np.zeros((3, 2)), [5.0, 1.0]), np.full((3, 2), 2.0))
    assert c.derivative == 0.0 and c.x_moment(3) == 8.0
    cu = custom_innovation(UniformLaw(), lambda u, th: np.sin(u) - th, dx_dtheta=-1.0)
    u = cu.sample_u(stream(0), 4)
    assert u.shape == (4, 1, 1)
    np.testing.assert_allclose(cu.x_of(u, np.array([0.2])), np.sin(u[:, 0]) - 0.2)
    assert cu.x_moment(1) is None
    with pytest.raises(ValueError):
        cu.kernel_law()
    with pytest.raises(ValueError):
        InnovationSpec("custom", UniformLaw())


def test_dict_round_trip():
    for inn in (preset("asymmetric"), minibatch_innovation(preset("uniform"), 8), constant_innovation(1.5)):
        assert InnovationSpec.from_dict(inn.to_dict()) == inn
    assert InnovationSpec.from_dict({"preset": "asymmetric", "batch": 4}).batch == 4
    assert law_from_dict({"kind": "samples", "values": [1, 1, 2]}).probs == pytest.approx((2 / 3, 1 / 3))
    with pytest.raises(ValueError):
        law_from_dict({"kind": "cauchy"})


def test_invalid_laws():
    with pytest.raises(ValueError):
        DiscreteLaw((1.0, 2.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        UniformLaw(1.0, 1.0)
    with pytest.raises(ValueError):
        NormalLaw(0.0, 0.0)
