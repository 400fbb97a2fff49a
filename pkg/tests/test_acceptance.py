"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from ldpclab.bp import bp_decode, tree_equivalence_check
from ldpclab.channel import NoiseSpec, make_rng, sample_llr_batch
from ldpclab.cli import EXIT_OK, _random_code, cluster_harness, main, replay_argv
from ldpclab.experiments import boundary_checks, correlation_decay, gexit_compare, gexit_fd_check, repetition_oracle
from ldpclab.graph import CodeEnsembleSpec, builtin_code, neighborhood, path_code, sample_ensemble
from ldpclab.inference import check_derivative_identities, check_duality, gibbs_exact, neighborhood_gibbs

pytestmark = pytest.mark.acceptance


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_criterion_01_duality(capsys):
    t0 = time.perf_counter()
    rng = make_rng(101, "acceptance-duality")
    worst = 0.0
    for _ in range(100):
        G = _random_code(rng, 16)
        for e2 in (0.1, 0.5, 1.0):
            L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, e2), 1, rng)
            logz = gibbs_exact(G, L[0]).logZ
            worst = max(worst, check_duality(G, L[0]) / max(1.0, abs(logz)))
    dt = time.perf_counter() - t0
    report(capsys, 1, worst < 1e-10 and dt < 60, f"max relative residual {worst:.2e} in {dt:.1f}s")


def test_criterion_02_derivatives(capsys):
    t0 = time.perf_counter()
    rng = make_rng(102, "acceptance-derivatives")
    worst, done = 0.0, 0
    while done < 100:
        G = _random_code(rng, 14)
        L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, float(rng.choice([0.1, 0.5, 1.0]))), 1, rng)
        i, j = (int(x) for x in rng.choice(G.n, 2, replace=False))
        chk = check_derivative_identities(G, L[0], i, j)
        if chk.near_pole:
            continue
        worst = max(worst, chk.residual1, chk.residual2)
        done += 1
    dt = time.perf_counter() - t0
    report(capsys, 2, worst < 1e-8 and dt < 60, f"max absolute residual {worst:.2e} in {dt:.1f}s")


def test_criterion_03_bp_tree(capsys):
    t0 = time.perf_counter()
    rng = make_rng(103, "acceptance-bp-tree")
    spec, d, worst, found = CodeEnsembleSpec.regular(2, 3), 6, 0.0, 0
    while found < 50:
        G = sample_ensemble(spec, 399, rng)
        o = int(rng.integers(G.n))
        if not neighborhood(G, o, d).is_tree:
            continue
        L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, 0.6), 1, rng)
        worst = max(worst, abs(bp_decode(G, L[0], d // 2)[o] - neighborhood_gibbs(G, o, d, L[0], "free")))
        found += 1
    dt = time.perf_counter() - t0
    report(capsys, 3, worst < 1e-10 and dt < 60, f"max |BP - exact| {worst:.2e} over 50 trees in {dt:.1f}s")


def test_criterion_04_tree_de(capsys):
    t0 = time.perf_counter()
    r = tree_equivalence_check(CodeEnsembleSpec.regular(3, 6), 200, 0, 2, math.sqrt(0.5), 1000,
                               make_rng(104, "acceptance-tree-de"), population=100_000)
    dt = time.perf_counter() - t0
    ok = not r.aborted and abs(r.difference) <= 3 * r.stderr and dt < 300
    report(capsys, 4, ok, f"tree {r.tree_mean:.5f} vs DE {r.de_mean:.5f}, diff {r.difference:.2e}"
                          f" ({abs(r.difference) / r.stderr:.2f} se) in {dt:.1f}s")


def test_criterion_05_correlation_decay(capsys):
    t0 = time.perf_counter()
    G = builtin_code("ring30")
    reps = {e2: correlation_decay(G, e2, "all", samples=10_000, seed=105, code_id="ring30") for e2 in (0.1, 0.05)}
    hi, lo = reps[0.1], reps[0.05]
    perfect = correlation_decay(G, NoiseSpec.uniform(G.n, 0.1).with_perfect([0]), "anchors:0", samples=500,
                                seed=105)
    zero = all(p.c_p == 0.0 for p in perfect.pairs if 0 in (p.i, p.j))
    dt = time.perf_counter() - t0
    ok = (hi.status == lo.status == "ok" and hi.slope_ci[1] < 0 and lo.slope_ci[1] < 0
          and lo.slope_ci[1] < hi.slope_ci[0] and zero and dt < 600)
    report(capsys, 5, ok, f"slope(0.1) {hi.slope:.3f} ci ({hi.slope_ci[0]:.3f}, {hi.slope_ci[1]:.3f});"
                          f" slope(0.05) {lo.slope:.3f} ci ({lo.slope_ci[0]:.3f}, {lo.slope_ci[1]:.3f});"
                          f" perfect-bit zero {zero}; {dt:.1f}s")


def test_criterion_06_gexit_formula(capsys):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in ("spc3", "rep3"):
        r = gexit_fd_check(builtin_code(name), 0.5, 1_000_000, seed=106)
        ok &= r.within < 3
        parts.append(f"{name} {r.within:.2f} se")
        if name == "rep3":
            fd, gex = repetition_oracle(3, 0.5)
            gap = max(abs(r.fd_value - fd), abs(r.gexit_value - gex))
            ok &= gap < 1e-3
            parts.append(f"rep3 oracle gap {gap:.1e}")
    dt = time.perf_counter() - t0
    report(capsys, 6, ok and dt < 300, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_07_low_noise_gexit(capsys):
    t0 = time.perf_counter()
    r = gexit_compare(CodeEnsembleSpec.poisson(2.0), 24, 0.1, 2000, 500, 20, 100_000, seed=107)
    dt = time.perf_counter() - t0
    comb = math.hypot(r.map_err, r.de_err)
    ok = abs(r.map_gexit - r.de_gexit) <= 3 * comb and r.de_gexit < 0 and dt < 1800
    report(capsys, 7, ok, f"MAP {r.map_gexit:.4e}+-{r.map_err:.1e} vs DE {r.de_gexit:.4e}+-{r.de_err:.1e}"
                          f" ({abs(r.map_gexit - r.de_gexit) / comb:.2f} se) in {dt:.1f}s")


def test_criterion_08_boundary(capsys):
    t0 = time.perf_counter()
    rep = boundary_checks(builtin_code("ring30"), 0, [2, 4, 6], 0.05, 2000, seed=108)
    small = boundary_checks(builtin_code("ring10"), 0, [2, 4, 12], 0.05, 500, seed=108)
    last = small.gaps[-1]
    exact = last.covers and last.empty_boundary and last.plus_full_gap == 0 and last.plus_free_gap == 0
    inner = [g for g in small.gaps if not (g.covers and g.empty_boundary)]
    dt = time.perf_counter() - t0
    ok = rep.non_increasing() and exact and all(g.plus_full_gap > 0 for g in inner) and dt < 600
    gaps = ", ".join(f"d={g.d} {g.plus_full_gap:.2e}/{g.plus_free_gap:.2e}" for g in rep.gaps)
    report(capsys, 8, ok, f"{gaps}; covering depth gives exact zero {exact}; {dt:.1f}s")


def test_criterion_09_cluster_expansion(capsys):
    t0 = time.perf_counter()
    rep = cluster_harness(path_code(2), 0, 2, 100, 0.5, 2000, seed=109)
    definitive = rep["literal_ok"] or all(r["literal"]["terms"] is not None for r in rep["runs"])
    t2_ok = bool(rep["t2"]) and all(t["bound_ok"] for t in rep["t2"])
    dt = time.perf_counter() - t0
    worst = rep["max_scaled_residual"]
    ok = len(rep["runs"]) == 100 and definitive and t2_ok and dt < 300
    report(capsys, 9, ok, f"{rep['verdict']}; literal {worst['literal']:.1e}, connected {worst['connected']:.1e};"
                          f" T2 bound on {len(rep['t2'])} clusters {t2_ok}; {dt:.1f}s")


def _scalars(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _scalars(v, f"{prefix}/{k}")
    elif isinstance(obj, list):
        for k, v in enumerate(obj):
            yield from _scalars(v, f"{prefix}/{k}")
    elif isinstance(obj, float):
        yield prefix, obj


def _close(a: float, b: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return a == b or abs(a - b) <= 1e-12 * max(abs(a), abs(b))


RUNS = [
    ("decay", ["--samples", "2000", "--pairs", "anchors:0,7", "--eps2", "0.1"], "decay_eps2_0.1.json"),
    ("boundary-check", ["--samples", "400", "--depths", "2,4"], "boundary_eps2_0.05.json"),
    ("gexit-compare", ["--graphs", "40", "--noise-samples", "40", "--population", "20000"], "gexit.json"),
    ("gexit-fd", ["--code", "builtin:rep3", "--samples", "40000"], "gexit_fd.csv"),
]


def test_criterion_10_determinism(tmp_path, capsys):
    problems = []
    for cmd, extra, name in RUNS:
        a, b, c = (tmp_path / cmd / k for k in "abc")
        assert main([cmd, "--seed", "110", *extra, "--out", str(a)]) == EXIT_OK
        manifest = json.loads((a / "manifest.json").read_text())
        assert main(replay_argv(manifest, str(b))) == EXIT_OK
        for f in sorted(p.name for p in a.iterdir() if p.name != "manifest.json"):
            if (a / f).read_bytes() != (b / f).read_bytes():
                problems.append(f"{cmd}: {f} differs on replay")
        assert main([cmd, "--seed", "110", *extra, "--workers", "2", "--out", str(c)]) == EXIT_OK
        if name.endswith(".json"):
            sa = dict(_scalars(json.loads((a / name).read_text())))
            sc = dict(_scalars(json.loads((c / name).read_text())))
            bad = [k for k in sa if "wall_clock" not in k and "workers" not in k and not _close(sa[k], sc.get(k, np.nan))]
            problems += [f"{cmd}: {k} differs across workers" for k in bad]
        elif (a / name).read_bytes() != (c / name).read_bytes():
            problems.append(f"{cmd}: {name} differs across workers")
    report(capsys, 10, not problems, "; ".join(problems) or f"{len(RUNS)} commands replay byte-identically;"
                                                           " scalars agree across worker counts")
