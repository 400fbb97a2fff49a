import csv
import io
import math

import numpy as np
import pytest

from ldpclab.channel import NoiseSpec
from ldpclab.experiments import (_wls_fit, boundary_checks, correlation_decay, gexit_fd_check, map_gexit_mc,
                                 repetition_oracle, select_pairs)
from ldpclab.graph import CodeEnsembleSpec, builtin_code, from_check_lists


def test_select_pairs():
    G = builtin_code("ring10")
    assert len(select_pairs(G, "all")) == 45
    anchored = select_pairs(G, "anchors:0,1")
    assert len(anchored) == 17 and (0, 1) in anchored
    with pytest.raises(ValueError):
        select_pairs(G, "some")


def test_wls_fit_recovers_line():
    x = np.array([2.0, 4.0, 6.0, 8.0])
    slope, icpt, se, ci = _wls_fit(x, 1.0 - 3.0 * x, np.full(4, 1e-4))
    assert slope == pytest.approx(-3.0) and icpt == pytest.approx(1.0)
    assert ci[0] < slope < ci[1]


def test_perfect_bit_gives_exact_zero():
    G = builtin_code("ring30")
    noise = NoiseSpec.uniform(G.n, 0.2).with_perfect([0])
    rep = correlation_decay(G, noise, "anchors:0", samples=200, seed=1)
    assert all(r.c_p == 0.0 for r in rep.pairs)
    assert rep.status == "fully decayed"


def test_disconnected_pair_is_zero():
    G = from_check_lists(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    rep = correlation_decay(G, 0.5, [(0, 4), (0, 2)], samples=300, seed=2, sampler="plain")
    assert rep.pair(0, 4).c_p == 0.0 and rep.pair(0, 4).dist is None
    assert rep.pair(0, 2).c_p > 0


def test_decay_report_shape_and_determinism():
    G = builtin_code("ring30")
    a = correlation_decay(G, 0.1, "anchors:0,1", samples=600, seed=3, code_id="ring30", block=200)
    b = correlation_decay(G, 0.1, "anchors:0,1", samples=600, seed=3, code_id="ring30", block=200, workers=2)
    assert a.to_csv() == b.to_csv()
    rows = list(csv.DictReader(io.StringIO(a.to_csv())))
    assert list(rows[0]) == ["i", "j", "dist", "c_p", "stderr", "n_samples"]
    assert len({r["n_samples"] for r in rows}) == 1
    assert all(float(r["c_p"]) >= 0 for r in rows)
    assert a.status == "ok" and a.slope < 0


def test_importance_and_plain_agree_at_moderate_noise():
    G = builtin_code("ring10")
    pairs = [(0, 1), (0, 3)]
    imp = correlation_decay(G, 0.5, pairs, samples=6000, seed=4)
    pln = correlation_decay(G, 0.5, pairs, samples=6000, seed=5, sampler="plain")
    for p in pairs:
        x, y = imp.pair(*p), pln.pair(*p)
        assert abs(x.c_p - y.c_p) < 4 * math.hypot(x.stderr, y.stderr)


def test_repetition_oracle_consistency():
    fd, gex = repetition_oracle(3, 0.5)
    assert fd == pytest.approx(gex, abs=1e-8)


def test_gexit_fd_small_spc():
    r = gexit_fd_check(builtin_code("spc3"), 0.5, 50_000, seed=1)
    assert r.within < 4
    assert -1 <= r.gexit_value <= 0


def test_gexit_fd_low_noise_both_vanish():
    r = gexit_fd_check(builtin_code("spc3"), 0.01, 5000, seed=1)
    assert abs(r.fd_value) < 1e-10 and abs(r.gexit_value) < 1e-10


def test_map_gexit_limits():
    spec = CodeEnsembleSpec.regular(2, 4)
    low = map_gexit_mc(spec, 12, 0.02, 20, 50, seed=1)
    assert abs(low.map_gexit) < 1e-6
    # check degrees stay even after collapsing double edges, so all-ones is a codeword
    high = map_gexit_mc(spec, 12, 1e3, 20, 50, seed=1)
    assert abs(high.map_gexit + 0.5) < 0.02


def test_boundary_zero_when_neighborhood_is_everything():
    G = builtin_code("ring10")
    rep = boundary_checks(G, 0, [2, 4, 12], 0.3, 300, seed=1)
    last = rep.gaps[-1]
    assert last.covers and last.empty_boundary
    assert last.plus_full_gap == 0.0 and last.plus_free_gap == 0.0


def test_boundary_perfect_root():
    G = builtin_code("ring10")
    noise = NoiseSpec.uniform(10, 0.3).with_perfect([0])
    rep = boundary_checks(G, 0, [2, 4], noise, 200, seed=1)
    assert all(g.plus_full_gap == 0 and g.plus_free_gap == 0 for g in rep.gaps)
