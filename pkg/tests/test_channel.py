import math

import numpy as np
import pytest
from scipy import integrate

from ldpclab.channel import (LlrVector, NoiseSpec, llr_density, llr_from_normals, make_rng, sample_llr,
                             sample_llr_batch, sinh_moment, sinh_moment_mc)


def test_rng_streams_reproducible_and_distinct():
    a = make_rng(7, "decay").standard_normal(5)
    b = make_rng(7, "decay").standard_normal(5)
    c = make_rng(7, "other").standard_normal(5)
    d = make_rng(7, ("decay", 1)).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_llr_moments():
    noise = NoiseSpec.uniform(4, 0.5)
    L, clamped = sample_llr_batch(noise, 200_000, make_rng(1))
    assert not clamped.any()
    assert abs(L.mean() - 2.0) < 0.01
    assert abs(L.var() - 2.0) < 0.02


def test_perfect_bits_are_clamped():
    noise = NoiseSpec.uniform(3, 0.5).with_perfect([1])
    lv = sample_llr(noise, make_rng(2))
    assert lv.clamped.tolist() == [False, True, False]
    assert lv.values[1] == 0.0


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec((0.5, -1.0))
    with pytest.raises(ValueError):
        NoiseSpec.uniform(3, 0.0)
    with pytest.raises(ValueError):
        LlrVector.from_values([1.0, math.inf])


def test_llr_from_normals_common_numbers():
    z = np.array([[0.0, 1.0]])
    L = llr_from_normals(NoiseSpec.uniform(2, 0.25), z)
    assert np.allclose(L, [[4.0, 6.0]])


def test_density_normalized_and_symmetric():
    eps = 0.8
    total, _ = integrate.quad(lambda x: llr_density(x, eps), -50, 50)
    assert abs(total - 1) < 1e-10
    # channel symmetry: c(-l) = exp(-2l) c(l)
    for x in (0.3, 1.2, 2.5):
        assert math.isclose(llr_density(-x, eps), math.exp(-2 * x) * llr_density(x, eps), rel_tol=1e-12)


def test_sinh_moment_quadrature_vs_mc():
    for e2 in (0.1, 0.5, 1.0):
        q = sinh_moment(math.sqrt(e2), 1 / 16)
        m, se = sinh_moment_mc(math.sqrt(e2), 1 / 16, 400_000, make_rng(3, e2.hex()))
        assert abs(q - m) < 4 * se


def test_sinh_moment_decreases_at_low_noise():
    vals = [sinh_moment(math.sqrt(e2), 0.2) for e2 in (1.0, 0.5, 0.2, 0.1)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_sinh_moment_argument_checks():
    with pytest.raises(ValueError):
        sinh_moment(0.5, 0.5)
    with pytest.raises(ValueError):
        sinh_moment(0.5, 0.1, method="monte-carlo")
