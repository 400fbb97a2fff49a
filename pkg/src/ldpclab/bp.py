"""Sum-product decoding and density evolution by population dynamics.

Messages are half-LLRs. The check rule is ``atanh(prod tanh m)``, evaluated
pairwise in the log domain so it stays accurate near saturation; every
message is clamped to ``[-CLAMP, CLAMP]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import LlrVector, NoiseSpec, sample_llr_batch
from .graph import CodeEnsembleSpec, TannerGraph, neighborhood, sample_ensemble
from .inference import neighborhood_batch

CLAMP = 30.0


def boxplus(a, b):
    """``atanh(tanh a * tanh b)``, with ``+inf`` as the neutral element."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        s, d = a + b, a - b
        out = 0.5 * (np.abs(s) - np.abs(d) + np.log1p(np.exp(-2 * np.abs(s))) - np.log1p(np.exp(-2 * np.abs(d))))
    out = np.where(np.isposinf(b), a, out)
    out = np.where(np.isposinf(a), b, out)
    return out


def _clamp(x):
    return np.clip(x, -CLAMP, CLAMP)


@dataclass
class MessageState:
    """Edge messages of a flooding decoder; edge ``e`` joins ``var[e]`` and ``chk[e]``."""

    var: np.ndarray
    chk: np.ndarray
    v2c: np.ndarray
    c2v: np.ndarray
    iteration: int = 0


class _EdgeLayout:
    def __init__(self, G: TannerGraph):
        var, chk = [], []
        for c, vs in enumerate(G.check_to_vars):
            for v in vs:
                var.append(v)
                chk.append(c)
        self.var = np.array(var, dtype=int)
        self.chk = np.array(chk, dtype=int)
        self.n, self.m = G.n, G.m
        width = max(G.dr_max, 1)
        self.slot = np.zeros(len(var), dtype=int)
        fill = np.zeros(G.m, dtype=int)
        for e, c in enumerate(chk):
            self.slot[e] = fill[c]
            fill[c] += 1
        self.width = width

    def check_update(self, v2c: np.ndarray) -> np.ndarray:
        """Exclude-self boxplus via prefix/suffix reductions along each check row."""
        M = np.full((self.m, self.width), np.inf)
        M[self.chk, self.slot] = v2c
        prefix = np.full_like(M, np.inf)
        suffix = np.full_like(M, np.inf)
        for t in range(1, self.width):
            prefix[:, t] = boxplus(prefix[:, t - 1], M[:, t - 1])
        for t in range(self.width - 2, -1, -1):
            suffix[:, t] = boxplus(suffix[:, t + 1], M[:, t + 1])
        out = boxplus(prefix, suffix)[self.chk, self.slot]
        # a check of degree 1 forces its bit: sigma = +1 exactly
        return _clamp(np.where(np.isposinf(out), CLAMP, out))


def _llr_input(l) -> np.ndarray:
    if isinstance(l, LlrVector):
        return np.where(l.clamped, CLAMP, l.values)
    return np.asarray(l, dtype=float)


def bp_messages(G: TannerGraph, l, iterations: int) -> MessageState:
    """Run ``iterations`` flooding rounds from all-zero check messages."""
    lv = _clamp(_llr_input(l))
    lay = _EdgeLayout(G)
    c2v = np.zeros(len(lay.var))
    v2c = lv[lay.var].copy()
    for _ in range(iterations):
        c2v = lay.check_update(v2c)
        total = lv + np.bincount(lay.var, weights=c2v, minlength=G.n)
        v2c = _clamp(total[lay.var] - c2v)
    return MessageState(lay.var, lay.chk, v2c, c2v, iterations)


def bp_decode(G: TannerGraph, l, iterations: int) -> np.ndarray:
    """Soft bit estimates ``tanh(l_i + Delta_i)`` after ``iterations`` rounds."""
    st = bp_messages(G, l, iterations)
    lv = _clamp(_llr_input(l))
    delta = np.bincount(st.var, weights=st.c2v, minlength=G.n)
    return np.tanh(lv + delta)


def bp_extrinsic(G: TannerGraph, l, iterations: int) -> np.ndarray:
    """``Delta_i``: sum of incoming check messages after ``iterations`` rounds."""
    st = bp_messages(G, l, iterations)
    return np.bincount(st.var, weights=st.c2v, minlength=G.n)


# ---------------------------------------------------------------- density evolution

@dataclass
class DePopulation:
    """Population of check-to-variable messages after ``generation`` rounds."""

    messages: np.ndarray
    generation: int
    spec: CodeEnsembleSpec


@dataclass
class DeResult:
    population: DePopulation
    mean: float
    stderr: float
    samples: np.ndarray


def _draw_groups(rng, degs, probs, size):
    """Degree per slot, returned as ``{degree: slot indices}``."""
    drawn = rng.choice(degs, size=size, p=probs)
    return {int(d): np.flatnonzero(drawn == d) for d in np.unique(drawn)}


def _check_generation(rng, v2c_pop, cdegs, cprobs, size):
    out = np.empty(size)
    for d, idx in _draw_groups(rng, cdegs, cprobs, size).items():
        acc = np.full(idx.size, np.inf)
        for _ in range(d - 1):
            acc = boxplus(acc, v2c_pop[rng.integers(0, v2c_pop.size, idx.size)])
        out[idx] = np.where(np.isposinf(acc), CLAMP, acc)
    return _clamp(out)


def _sum_incoming(rng, c2v_pop, counts: dict, size):
    out = np.zeros(size)
    for d, idx in counts.items():
        if d and idx.size:
            picks = c2v_pop[rng.integers(0, c2v_pop.size, (idx.size, d))]
            out[idx] = picks.sum(axis=1)
    return out


def density_evolution(spec: CodeEnsembleSpec, eps: float, iterations: int, population: int, rng) -> DeResult:
    """Population dynamics for ``iterations`` rounds over BIAWGN(``eps``).

    Generation 0 is the all-zero check message (channel outputs as the only
    initial information). Returns the final population and the Monte Carlo
    estimate of ``E[tanh(l + Delta)]`` at a node drawn from the
    node-perspective degree distribution.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if population < 2:
        raise ValueError("population must be >= 2")
    (vd_e, vp_e), (cd_e, cp_e) = spec.edge_perspective()
    vd_n, vp_n = spec.variable_distribution()
    snr = eps ** -2
    sd = math.sqrt(snr)
    c2v = np.zeros(population)
    for _ in range(iterations):
        l = snr + sd * rng.standard_normal(population)
        groups = _draw_groups(rng, vd_e, vp_e, population)
        extra = {d - 1: idx for d, idx in groups.items()}
        v2c = _clamp(l + _sum_incoming(rng, c2v, extra, population))
        c2v = _check_generation(rng, v2c, cd_e, cp_e, population)
    l = snr + sd * rng.standard_normal(population)
    node = _draw_groups(rng, vd_n, vp_n, population)
    delta = _sum_incoming(rng, c2v, node, population) if iterations else np.zeros(population)
    vals = np.tanh(l + delta)
    return DeResult(DePopulation(c2v, iterations, spec), float(vals.mean()),
                    float(vals.std(ddof=1) / math.sqrt(population)), vals)


def de_gexit(spec: CodeEnsembleSpec, eps: float, iterations: int, population: int, rng) -> tuple[float, float]:
    """``(1/2)(E[tanh(l + Delta)] - 1)`` and its standard error."""
    r = density_evolution(spec, eps, iterations, population, rng)
    return 0.5 * (r.mean - 1.0), 0.5 * r.stderr


@dataclass
class TreeEquivalence:
    difference: float
    stderr: float
    tree_mean: float
    tree_stderr: float
    de_mean: float
    de_stderr: float
    trials: int
    rejections: int
    aborted: bool = False

    @property
    def rejection_rate(self) -> float:
        total = self.trials + self.rejections
        return self.rejections / total if total else 0.0


def tree_equivalence_check(spec: CodeEnsembleSpec, n: int, o: int, d: int, eps: float, trials: int,
                           rng, population: int = 10**5, max_rejection: float = 0.99) -> TreeEquivalence:
    """Compare tree-conditioned exact ``E<sigma_o>_{N_d(o)}`` with density evolution.

    ``d`` is the graph depth (even); density evolution runs ``d // 2`` rounds.
    Graphs whose depth-``d`` neighborhood is not a tree are resampled.
    """
    if d % 2:
        raise ValueError("depth must be even")
    noise = NoiseSpec.uniform(n, eps**2)
    values, rejections = [], 0
    while len(values) < trials:
        G = sample_ensemble(spec, n, rng)
        if d > 0:
            nb = neighborhood(G, o, d)
            if not nb.is_tree:
                rejections += 1
                if rejections > 100 and rejections / (rejections + len(values)) > max_rejection:
                    return TreeEquivalence(math.nan, math.nan, math.nan, math.nan, math.nan, math.nan,
                                           len(values), rejections, aborted=True)
                continue
        L, clamped = sample_llr_batch(noise, 1, rng)
        if d == 0:
            values.append(float(np.tanh(L[0, o])))
        else:
            b = neighborhood_batch(G, o, d, L, clamped, "free")
            values.append(float(b.marginals[0, 0]))
    tv = np.array(values)
    t_mean, t_se = float(tv.mean()), float(tv.std(ddof=1) / math.sqrt(trials))
    de = density_evolution(spec, eps, d // 2, population, rng)
    diff = t_mean - de.mean
    return TreeEquivalence(diff, math.hypot(t_se, de.stderr), t_mean, t_se, de.mean, de.stderr, trials, rejections)
