import json
import math

import numpy as np
import pytest

from ldpclab.channel import make_rng
from ldpclab.cluster import (boundary, diagnose_conventions, enumerate_clusters, enumerate_compatible,
                             identity_check, is_cluster, is_compatible, kernel, kernel_batch,
                             t1_t2_diagnostics)
from ldpclab.graph import build_graph, builtin_code, from_check_lists, graph_distance, path_code
from ldpclab.inference import dual_cov, dual_exact


def path_toy_kernel(l):
    """Hand expansion for x0 - c0 - x1 - c1 - x2 with i=0, j=2 and Xhat = {c0, c1}."""
    a = np.exp(-2 * np.asarray(l))
    return 32 * a[1] * (1 - a[0] ** 2) * (1 - a[2] ** 2)


def path_toy_cov(l):
    a = np.exp(-2 * np.asarray(l))
    return a[1] * (1 - a[0] ** 2) * (1 - a[2] ** 2) / (1 + a[0] * a[1] * a[2]) ** 2


@pytest.mark.parametrize("seed", range(10))
def test_path_toy_matches_hand_expansion(seed):
    l = np.random.default_rng(seed).normal(1.5, 1.2, 3)
    G = path_code(2)
    assert kernel(G, (0, 1), l, 0, 2) == pytest.approx(path_toy_kernel(l), rel=1e-12)
    d = dual_exact(G, l, targets=[0, 2, (0, 2)])
    assert dual_cov(d, 0, 2) == pytest.approx(path_toy_cov(l), rel=1e-12)
    rep = identity_check(G, l, 0, 2, "literal")
    assert rep.scaled_residual < 1e-12


def test_literal_reading_misses_empty_gamma():
    # two bits on one check: the literal reading drops the Gamma = {} term
    l = np.array([0.7, 1.1, 0.4])
    reps = diagnose_conventions(builtin_code("spc3"), l, 0, 1)
    assert reps["literal"].scaled_residual > 1e-3
    assert reps["connected"].scaled_residual < 1e-12
    dump = json.loads(reps["literal"].to_json())
    assert dump["terms"] and "gammas" in dump["terms"][0]


@pytest.mark.parametrize("seed", range(12))
def test_connected_reading_is_exact(seed):
    rng = np.random.default_rng(seed)
    while True:
        G = build_graph((rng.random((4, 7)) < 0.45).astype(np.uint8))
        if graph_distance(G, 0, 1) is not None:
            break
    l = rng.normal(1.0, 1.2, 7)
    assert identity_check(G, l, 0, 1, "connected").scaled_residual < 1e-10


def test_disconnected_pair_has_no_clusters():
    G = from_check_lists(4, [(0, 1), (2, 3)])
    assert enumerate_clusters(G, 0, 3) == []
    rep = identity_check(G, np.array([0.5, 0.6, 0.7, 0.8]), 0, 3)
    assert rep.rhs == 0.0 and abs(rep.lhs) < 1e-12


@pytest.mark.parametrize("name,i,j", [("ring10", 0, 4), ("reg36", 0, 5), ("path2", 0, 2)])
def test_clusters_validate_and_respect_distance_bound(name, i, j):
    G = builtin_code(name)
    if G.m > 16:
        pytest.skip("too many checks")
    clusters = enumerate_clusters(G, i, j, size_cap=8)
    dist = graph_distance(G, i, j)
    for cl in clusters:
        assert is_cluster(G, cl.checks, i, j)
        assert boundary(G, cl.witness) == frozenset(cl.checks)
        assert len(cl) >= dist / 2
    assert len({cl.checks for cl in clusters}) == len(clusters)


def test_size_cap_sets_truncated():
    G = builtin_code("ring10")
    assert enumerate_clusters(G, 0, 2, size_cap=3).truncated
    assert not enumerate_clusters(G, 0, 2).truncated


def test_compatible_sets_validator_and_size_bound():
    G = builtin_code("ring10")
    i, j = 0, 3
    for cl in enumerate_clusters(G, i, j):
        for conv in ("literal", "connected"):
            for g in enumerate_compatible(G, cl.checks, i, j, conv):
                assert is_compatible(G, cl.checks, g.variables, i, j, conv)
                assert len(g.variables) >= (len(cl) - 2 * G.dl_max) / G.dl_max
    with pytest.raises(ValueError):
        is_compatible(G, (0,), (), 0, 1, "other")


def test_endpoint_flag():
    G = path_code(2)
    with_ends = enumerate_compatible(G, (0, 1), 0, 2, "literal", allow_endpoints=True)
    without = enumerate_compatible(G, (0, 1), 0, 2, "literal", allow_endpoints=False)
    assert len(without) < len(with_ends)
    assert all(0 not in g.variables and 2 not in g.variables for g in without)


def test_kernel_batch_matches_single():
    G = path_code(2)
    L = np.random.default_rng(1).normal(1.5, 1.2, (5, 3))
    kb = kernel_batch(G, (0, 1), L, 0, 2)
    assert np.allclose(kb, [kernel(G, (0, 1), row, 0, 2) for row in L], rtol=1e-12)


def test_t2_bound_and_t1_trend():
    G = path_code(2)
    hi = t1_t2_diagnostics(G, (0, 1), 0, 2, math.sqrt(0.5), samples=1500, rng=make_rng(1))
    lo = t1_t2_diagnostics(G, (0, 1), 0, 2, math.sqrt(0.1), samples=1500, rng=make_rng(2))
    assert hi.t2_bound_ok and lo.t2_bound_ok
    assert lo.t1_sq < hi.t1_sq
