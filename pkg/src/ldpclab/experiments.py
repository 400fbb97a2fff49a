"""Monte Carlo harnesses: correlation decay, GEXIT comparisons and boundary gaps.

Every harness splits its samples into fixed-size blocks; block ``b`` draws
from its own counter-based stream ``(seed, label, b)``. Blocks may run on any
number of worker processes and are concatenated in block order, so results
do not depend on the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .bp import de_gexit
from .channel import NoiseSpec, llr_from_normals, make_rng
from .graph import (UNREACHABLE, CodeEnsembleSpec, TannerGraph, neighborhood, sample_ensemble,
                    variable_distances)
from .inference import (CapacityError, _conditioned_basis, covariances_batch, gibbs_batch,
                        gray_codewords, neighborhood_batch)

SCHEMA_VERSION = 1
DEFAULT_BLOCK = 500


# ---------------------------------------------------------------- plumbing

def _blocks(total: int, block: int) -> list[tuple[int, int]]:
    """``(index, size)`` for each block; the partition ignores the worker count."""
    return [(b, min(block, total - s)) for b, s in enumerate(range(0, total, block))]


def run_blocks(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to each task, in order, on ``workers`` processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _mean_se(x: np.ndarray, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, np.nan)
    return mean, se


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    import scipy

    out["scipy"] = scipy.__version__
    try:
        out["artifact"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["artifact"] = "unknown"
    return out


@dataclass
class RunManifest:
    """Everything needed to regenerate a report; ``wall_clock`` is informational only."""

    seed: int
    workers: int
    config: dict
    config_hash: str = ""
    versions: dict = field(default_factory=_versions)
    schema_version: int = SCHEMA_VERSION
    wall_clock: float = 0.0

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def reproducible(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- correlation decay

@dataclass
class PairRecord:
    i: int
    j: int
    dist: int | None
    c_p: float
    stderr: float
    n_samples: int
    floor: float


@dataclass
class DistanceAggregate:
    dist: int
    n_pairs: int
    c_p: float
    stderr: float
    floor: float
    used_in_fit: bool


@dataclass
class DecayReport:
    code_id: str
    eps: tuple[float, ...]
    seed: int
    samples: int
    sampler: str
    pairs: list[PairRecord]
    distances: list[DistanceAggregate]
    slope: float = math.nan
    intercept: float = math.nan
    slope_se: float = math.nan
    slope_ci: tuple[float, float] = (math.nan, math.nan)
    status: str = "ok"
    manifest: RunManifest | None = None

    def pair(self, i: int, j: int) -> PairRecord:
        for r in self.pairs:
            if (r.i, r.j) in ((i, j), (j, i)):
                return r
        raise KeyError((i, j))

    def to_csv(self) -> str:
        rows = [(r.i, r.j, "" if r.dist is None else r.dist, r.c_p, r.stderr, r.n_samples) for r in self.pairs]
        return _csv(("i", "j", "dist", "c_p", "stderr", "n_samples"), rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["manifest"] = self.manifest.reproducible() if self.manifest else None
        return d


def select_pairs(G: TannerGraph, policy="all") -> list[tuple[int, int]]:
    """``"all"``, ``"anchors:a,b,..."`` (every pair touching an anchor) or an explicit list."""
    if isinstance(policy, str):
        if policy == "all":
            return [(i, j) for i in range(G.n) for j in range(i + 1, G.n)]
        if policy.startswith("anchors:"):
            anchors = [int(a) for a in policy.split(":", 1)[1].split(",") if a]
            out = []
            for a in anchors:
                out += [tuple(sorted((a, j))) for j in range(G.n) if j != a]
            return sorted(set(out))
        raise ValueError(f"unknown pair policy {policy!r}")
    return [tuple(p) for p in policy]


def _importance_components(G: TannerGraph, clamped: np.ndarray, pairs, max_bits: int = 20) -> np.ndarray:
    """Minimum-weight codewords through each pair, as a boolean matrix (K, n)."""
    basis = _conditioned_basis(G.to_matrix(), clamped)
    if basis.shape[0] > max_bits:
        raise CapacityError(f"2^{basis.shape[0]} codewords too many for the importance sampler")
    X = gray_codewords(basis).astype(bool)
    w = X.sum(axis=1)
    chosen = set()
    for i, j in pairs:
        hit = X[:, i] & X[:, j]
        if hit.any():
            chosen.update(np.flatnonzero(hit & (w == w[hit].min())).tolist())
    return X[sorted(chosen)]


def _decay_block(task):
    G, mu, clamped, pairs, comps, alpha0, seed, label, b, size = task
    rng = make_rng(seed, (label, b))
    z = rng.standard_normal((size, G.n))
    noise_mean = mu.copy()
    weights = np.ones(size)
    if comps is not None and len(comps):
        pick = rng.random(size)
        which = rng.integers(0, len(comps), size)
        shifted = (pick >= alpha0)[:, None] & comps[which]
        L = np.where(shifted, 0.0, noise_mean) + np.sqrt(mu) * z
        # density ratio of the mean-zero shift on the bits of codeword x
        logr = (mu / 2 - L) @ comps.T.astype(float)
        top = np.maximum(logr.max(axis=1), math.log(alpha0))
        mix = alpha0 * np.exp(-top) + (1 - alpha0) / len(comps) * np.exp(logr - top[:, None]).sum(axis=1)
        weights = np.exp(-top) / mix
    else:
        L = noise_mean + np.sqrt(mu) * z
    L[:, clamped] = 0.0
    bg = gibbs_batch(G, L, clamped, pairs)
    cov = np.abs(covariances_batch(G, bg))
    scale = 4.0 * (bg.p11 * bg.p00 + bg.p10 * bg.p01)
    return cov * weights[:, None], 1e-14 * scale * weights[:, None]


def _wls_fit(x: np.ndarray, y: np.ndarray, var: np.ndarray, level: float = 0.95):
    """Weighted least squares ``y = a + b x`` with known variances."""
    W = 1.0 / var
    A = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(A.T @ (A * W[:, None]))
    coef = cov @ (A.T @ (W * y))
    se = math.sqrt(cov[1, 1])
    z = stats.norm.ppf(0.5 + level / 2)
    return float(coef[1]), float(coef[0]), se, (float(coef[1] - z * se), float(coef[1] + z * se))


def correlation_decay(G: TannerGraph, noise, pairs="all", samples: int = 10_000, seed: int = 0,
                      workers: int = 1, sampler: str = "importance", alpha0: float = 0.1,
                      block: int = DEFAULT_BLOCK, max_rel_se: float = 0.3, min_pairs: int = 3,
                      code_id: str = "") -> DecayReport:
    """Estimate ``C_P(i, j) = E|cov(sigma_i, sigma_j)|`` and fit ``ln C_P`` against distance.

    ``noise`` is a ``NoiseSpec`` or a uniform ``eps**2``. With
    ``sampler="importance"`` the noise is drawn from a defensive mixture that,
    with probability ``1 - alpha0``, moves the bits of one minimum-weight
    codeword through some pair to mean zero; samples are reweighted so the
    estimate stays unbiased. ``"plain"`` draws from the channel directly.
    Each pair's floor is ``1e-14`` times the size of the terms cancelling in
    its covariance; distances below floor are not fitted.
    """
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec.uniform(G.n, float(noise))
    pairs = select_pairs(G, pairs)
    clamped = noise.clamped
    snr = noise.snr()
    mu = np.where(clamped, 0.0, snr)
    comps = None
    if sampler == "importance":
        comps = _importance_components(G, clamped, pairs)
    elif sampler != "plain":
        raise ValueError(f"unknown sampler {sampler!r}")
    label = ("decay", code_id or "graph")
    tasks = [(G, mu, clamped, pairs, comps, alpha0, seed, label, b, size) for b, size in _blocks(samples, block)]
    parts = run_blocks(_decay_block, tasks, workers)
    V = np.concatenate([p[0] for p in parts])
    F = np.concatenate([p[1] for p in parts])
    mean, se = _mean_se(V)
    floor = F.mean(axis=0)

    dist_cache = {}
    def dist(i, j):
        if i not in dist_cache:
            dist_cache[i] = variable_distances(G, i)
        return dist_cache[i].get(j, UNREACHABLE)

    records = [PairRecord(i, j, dist(i, j), float(mean[t]), float(se[t]), samples, float(floor[t]))
               for t, (i, j) in enumerate(pairs)]
    aggs = []
    for d in sorted({r.dist for r in records if r.dist is not None}):
        cols = [t for t, r in enumerate(records) if r.dist == d]
        m, s = _mean_se(V[:, cols].mean(axis=1))
        fl = float(floor[cols].mean())
        usable = (len(cols) >= min_pairs and m > fl and m > 0 and s / m < max_rel_se)
        aggs.append(DistanceAggregate(d, len(cols), float(m), float(s), fl, bool(usable)))

    report = DecayReport(code_id, noise.eps, seed, samples, sampler, records, aggs)
    above = [a for a in aggs if a.c_p > a.floor]
    if not above:
        report.status = "fully decayed"
    else:
        fit = [a for a in aggs if a.used_in_fit]
        if len(fit) < 2:
            report.status = "insufficient distances"
        else:
            x = np.array([a.dist for a in fit], float)
            y = np.log([a.c_p for a in fit])
            var = np.array([(a.stderr / a.c_p) ** 2 for a in fit])
            report.slope, report.intercept, report.slope_se, report.slope_ci = _wls_fit(x, y, var)
    report.manifest = RunManifest(seed, workers, {
        "op": "decay", "code": code_id, "eps": list(noise.eps), "pairs": len(pairs), "samples": samples,
        "sampler": sampler, "alpha0": alpha0, "block": block})
    return report


# ---------------------------------------------------------------- GEXIT

@dataclass
class GexitReport:
    eps2: float
    code_id: str
    map_gexit: float = math.nan
    map_err: float = math.nan
    de_gexit: float = math.nan
    de_err: float = math.nan
    fd_value: float = math.nan
    fd_err: float = math.nan
    graphs: int = 0
    skipped: int = 0
    manifest: RunManifest | None = None

    def to_csv(self) -> str:
        return _csv(("eps2", "map_gexit", "map_err", "de_gexit", "de_err", "fd_value", "fd_err"),
                    [(self.eps2, self.map_gexit, self.map_err, self.de_gexit, self.de_err,
                      self.fd_value, self.fd_err)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["manifest"] = self.manifest.reproducible() if self.manifest else None
        return d


def _map_block(task):
    spec, n, eps2, noise_samples, seed, b, size = task
    out = np.empty(size)
    skipped = 0
    for t in range(size):
        rng = make_rng(seed, ("map-gexit", b, t))
        G = sample_ensemble(spec, n, rng)
        L = eps2**-1 + eps2**-0.5 * rng.standard_normal((noise_samples, n))
        try:
            bg = gibbs_batch(G, L)
        except CapacityError:
            out[t] = np.nan
            skipped += 1
            continue
        # averaging over every node has the same mean as a uniform random node
        out[t] = bg.marginals.mean()
    return out, skipped


def map_gexit_mc(spec: CodeEnsembleSpec, n: int, eps2: float, graphs: int, noise_samples: int,
                 seed: int, workers: int = 1, block: int = 50) -> GexitReport:
    """Double Monte Carlo (graphs x noise) of ``(E<sigma_o>_P - 1) / 2``."""
    tasks = [(spec, n, eps2, noise_samples, seed, b, size) for b, size in _blocks(graphs, block)]
    parts = run_blocks(_map_block, tasks, workers)
    vals = np.concatenate([p[0] for p in parts])
    skipped = sum(p[1] for p in parts)
    vals = vals[np.isfinite(vals)]
    m, s = _mean_se(vals)
    rep = GexitReport(eps2, spec.describe(), 0.5 * (float(m) - 1.0), 0.5 * float(s), graphs=len(vals),
                      skipped=skipped)
    rep.manifest = RunManifest(seed, workers, {"op": "map-gexit", "ensemble": spec.describe(), "n": n,
                                               "eps2": eps2, "graphs": graphs, "noise": noise_samples,
                                               "block": block})
    return rep


def gexit_compare(spec: CodeEnsembleSpec, n: int, eps2: float, graphs: int, noise_samples: int,
                  iterations: int, population: int, seed: int, workers: int = 1) -> GexitReport:
    rep = map_gexit_mc(spec, n, eps2, graphs, noise_samples, seed, workers)
    rep.de_gexit, rep.de_err = de_gexit(spec, math.sqrt(eps2), iterations, population,
                                        make_rng(seed, "de-gexit"))
    rep.manifest.config.update({"op": "gexit-compare", "iterations": iterations, "population": population})
    rep.manifest.config_hash = config_hash(rep.manifest.config)
    return rep


@dataclass
class FdCheck:
    fd_value: float
    gexit_value: float
    residual: float
    stderr: float
    fd_err: float
    gexit_err: float
    samples: int
    oracle_fd: float = math.nan
    oracle_gexit: float = math.nan

    @property
    def within(self) -> float:
        """Residual in units of its standard error."""
        return abs(self.residual) / self.stderr if self.stderr > 0 else math.inf


def _fd_block(task):
    G, snr, delta, seed, b, size = task
    rng = make_rng(seed, ("gexit-fd", b))
    z = rng.standard_normal((size, G.n))
    ds = delta * snr
    h = []
    for s in (snr + ds, snr - ds):
        L = llr_from_normals(NoiseSpec.uniform(G.n, 1 / s), z)
        h.append(gibbs_batch(G, L).entropy / G.n)
    fd = (h[0] - h[1]) / (2 * ds)
    mid = gibbs_batch(G, llr_from_normals(NoiseSpec.uniform(G.n, 1 / snr), z))
    gex = 0.5 * (mid.marginals.mean(axis=1) - 1.0)
    return fd, gex


def gexit_fd_check(G: TannerGraph, eps2: float, samples: int, seed: int, delta: float = 0.01,
                   workers: int = 1, block: int = 20_000) -> FdCheck:
    """Central difference of ``E[h_n]`` in ``eps**-2`` against ``(E<sigma_o>_P - 1) / 2``.

    Both points and the midpoint share the same standard normals; the
    residual's error is taken from the per-sample paired differences.
    """
    snr = 1.0 / eps2
    tasks = [(G, snr, delta, seed, b, size) for b, size in _blocks(samples, block)]
    parts = run_blocks(_fd_block, tasks, workers)
    fd = np.concatenate([p[0] for p in parts])
    gex = np.concatenate([p[1] for p in parts])
    fm, fs = _mean_se(fd)
    gm, gs = _mean_se(gex)
    rm, rs = _mean_se(fd - gex)
    return FdCheck(float(fm), float(gm), float(rm), float(rs), float(fs), float(gs), samples)


def repetition_oracle(n: int, eps2: float, delta: float = 1e-4) -> tuple[float, float]:
    """Quadrature ``(d E[h_n] / d eps^-2, (E<sigma>-1)/2)`` for the length-``n`` repetition code.

    The posterior depends only on ``L = sum l_i ~ N(n s, n s)``.
    """
    def expect(f, s):
        mu, sd = n * s, math.sqrt(n * s)
        dens = lambda x: math.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        val, _ = integrate.quad(lambda x: f(x) * dens(x), mu - 40 * sd, mu + 40 * sd,
                                epsabs=1e-14, epsrel=1e-12, limit=400, points=[0.0] if mu - 40 * sd < 0 else None)
        return val

    def entropy(x):
        ax = abs(x)
        # ln(2 cosh x) - x tanh x, stable for large |x|
        return ax + math.log1p(math.exp(-2 * ax)) - ax * math.tanh(ax)

    s = 1.0 / eps2
    ds = delta * s
    fd = (expect(entropy, s + ds) - expect(entropy, s - ds)) / (2 * ds) / n
    gex = 0.5 * (expect(math.tanh, s) - 1.0)
    return fd, gex


# ---------------------------------------------------------------- boundary-condition gaps

@dataclass
class BoundaryGap:
    d: int
    plus_full_gap: float
    plus_full_err: float
    plus_free_gap: float
    plus_free_err: float
    covers: bool
    empty_boundary: bool


@dataclass
class BoundaryReport:
    o: int
    eps: tuple[float, ...]
    samples: int
    gaps: list[BoundaryGap]
    manifest: RunManifest | None = None

    def to_csv(self) -> str:
        rows = [(g.d, g.plus_full_gap, g.plus_full_err, g.plus_free_gap, g.plus_free_err) for g in self.gaps]
        return _csv(("d", "plus_full_gap", "plus_full_err", "plus_free_gap", "plus_free_err"), rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["manifest"] = self.manifest.reproducible() if self.manifest else None
        return d

    def non_increasing(self, sigmas: float = 3.0) -> bool:
        for a, b in zip(self.gaps, self.gaps[1:]):
            for ga, ea, gb, eb in ((a.plus_full_gap, a.plus_full_err, b.plus_full_gap, b.plus_full_err),
                                   (a.plus_free_gap, a.plus_free_err, b.plus_free_gap, b.plus_free_err)):
                if gb > ga + sigmas * math.hypot(ea, eb):
                    return False
        return True


def _boundary_block(task):
    G, o, depths, noise, seed, b, size = task
    rng = make_rng(seed, ("boundary", o, b))
    z = rng.standard_normal((size, G.n))
    L = llr_from_normals(noise, z)
    clamped = noise.clamped
    L[:, clamped] = 0.0
    # <s>_A - <s>_B = 2 (P_B(-1) - P_A(-1)); flips keep the tiny gaps of low noise
    full = gibbs_batch(G, L, clamped).flip[:, o]
    out = []
    for d in depths:
        plus = neighborhood_batch(G, o, d, L, clamped, "plus_one").flip[:, 0]
        free = neighborhood_batch(G, o, d, L, clamped, "free").flip[:, 0]
        out.append((2.0 * (plus - full), 2.0 * (plus - free)))
    return out


def boundary_checks(G: TannerGraph, o: int, depths: Sequence[int], noise, samples: int, seed: int,
                    workers: int = 1, block: int = DEFAULT_BLOCK) -> BoundaryReport:
    """Gaps ``|E<s_o>_P - E<s_o>+_{N_d}|`` and ``|E<s_o>_{N_d} - E<s_o>+_{N_d}|`` per depth.

    All depths share the same noise draws.
    """
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec.uniform(G.n, float(noise))
    depths = [int(d) for d in depths]
    tasks = [(G, o, depths, noise, seed, b, size) for b, size in _blocks(samples, block)]
    parts = run_blocks(_boundary_block, tasks, workers)
    gaps = []
    for k, d in enumerate(depths):
        d1 = np.concatenate([p[k][0] for p in parts])
        d2 = np.concatenate([p[k][1] for p in parts])
        m1, s1 = _mean_se(d1)
        m2, s2 = _mean_se(d2)
        nb = neighborhood(G, o, d)
        # identical measures give identical samples: report exact zeros
        gaps.append(BoundaryGap(d, abs(float(m1)), 0.0 if not d1.any() else float(s1),
                                abs(float(m2)), 0.0 if not d2.any() else float(s2),
                                nb.covers(G), not nb.boundary))
    rep = BoundaryReport(o, noise.eps, samples, gaps)
    rep.manifest = RunManifest(seed, workers, {"op": "boundary", "o": o, "depths": depths,
                                               "eps": list(noise.eps), "samples": samples, "block": block})
    return rep
