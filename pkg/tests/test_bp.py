import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpclab.bp import CLAMP, bp_decode, bp_extrinsic, boxplus, de_gexit, density_evolution, tree_equivalence_check
from ldpclab.channel import LlrVector, NoiseSpec, make_rng, sample_llr_batch
from ldpclab.graph import CodeEnsembleSpec, builtin_code, neighborhood, sample_ensemble
from ldpclab.inference import gibbs_exact, neighborhood_gibbs

finite = st.floats(-25, 25, allow_nan=False)


@given(finite, finite)
@settings(max_examples=200, deadline=None)
def test_boxplus_matches_tanh_rule(a, b):
    with mpmath.workdps(80):
        ref = float(mpmath.atanh(mpmath.tanh(a) * mpmath.tanh(b)))
    out = float(boxplus(a, b))
    assert out == pytest.approx(float(boxplus(b, a)), abs=1e-15)
    assert abs(out) <= min(abs(a), abs(b)) + 1e-12
    assert out == pytest.approx(ref, abs=1e-12)


def test_boxplus_neutral_and_sign():
    assert float(boxplus(np.inf, 0.7)) == 0.7
    assert float(boxplus(-1.0, 2.0)) < 0
    assert float(boxplus(0.0, 5.0)) == 0.0


def test_one_iteration_hand_value():
    # spc3, bit 0: tanh(l0 + atanh(tanh l1 tanh l2))
    l = np.array([0.3, 0.9, 1.4])
    hand = math.tanh(0.3 + math.atanh(math.tanh(0.9) * math.tanh(1.4)))
    assert bp_decode(builtin_code("spc3"), l, 1)[0] == pytest.approx(hand, abs=1e-14)


def test_zero_iterations_is_channel():
    l = np.array([0.3, -0.9, 1.4])
    assert np.allclose(bp_decode(builtin_code("spc3"), l, 0), np.tanh(l))
    assert np.all(bp_extrinsic(builtin_code("spc3"), l, 0) == 0)


def test_bp_exact_on_cycle_free_code():
    G = builtin_code("rep3")
    l = np.array([0.3, -0.9, 1.4])
    assert np.allclose(bp_decode(G, l, 5), gibbs_exact(G, l).marginals, atol=1e-14)


def test_clamped_input():
    G = builtin_code("spc3")
    lv = LlrVector.from_values([0.5, 0.0, 0.8], clamped=[False, True, False])
    est = bp_decode(G, lv, 2)
    assert est[1] == pytest.approx(1.0)
    assert est[0] == pytest.approx(math.tanh(0.5 + 0.8), abs=1e-12)


def test_messages_clamped():
    G = builtin_code("spc3")
    ext = bp_extrinsic(G, np.array([200.0, 200.0, 200.0]), 3)
    assert np.all(np.abs(ext) <= 2 * CLAMP)


@pytest.mark.parametrize("seed", range(8))
def test_bp_matches_exact_on_tree_neighborhoods(seed):
    rng = make_rng(seed, "bp-tree")
    spec = CodeEnsembleSpec.regular(2, 3)
    d = 6
    while True:
        G = sample_ensemble(spec, 399, rng)
        if neighborhood(G, 0, d).is_tree:
            break
    L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, 0.6), 1, rng)
    bp = bp_decode(G, L[0], d // 2)[0]
    exact = neighborhood_gibbs(G, 0, d, L[0], "free")
    assert abs(bp - exact) < 1e-10


def test_density_evolution_zero_iterations():
    spec = CodeEnsembleSpec.regular(3, 6)
    r = density_evolution(spec, math.sqrt(0.5), 0, 100_000, make_rng(1))
    # E tanh(l) = 1 - E[2 / (1 + e^{2l})]; compare with a direct sample
    L = 2 + math.sqrt(2) * make_rng(2).standard_normal(400_000)
    assert abs(r.mean - np.tanh(L).mean()) < 4 * math.hypot(r.stderr, np.tanh(L).std() / 632)


def test_density_evolution_reproducible_and_monotone_in_noise():
    spec = CodeEnsembleSpec.regular(3, 6)
    a = de_gexit(spec, math.sqrt(0.3), 5, 20_000, make_rng(3))
    b = de_gexit(spec, math.sqrt(0.3), 5, 20_000, make_rng(3))
    assert a == b
    c = de_gexit(spec, math.sqrt(1.0), 5, 20_000, make_rng(3))
    assert -1 <= c[0] < a[0] <= 0


def test_de_gexit_low_noise_limits():
    spec = CodeEnsembleSpec.regular(3, 6)
    v, _ = de_gexit(spec, math.sqrt(0.02), 10, 10_000, make_rng(4))
    assert abs(v) < 1e-6
    v, _ = de_gexit(spec, math.sqrt(1e3), 2, 50_000, make_rng(4))
    assert abs(v + 0.5) < 0.01


def test_tree_equivalence_small():
    r = tree_equivalence_check(CodeEnsembleSpec.regular(3, 6), 200, 0, 2, math.sqrt(0.5), 150, make_rng(5),
                               population=20_000)
    assert not r.aborted
    assert abs(r.difference) < 4 * r.stderr
    assert 0 < r.rejection_rate < 1
