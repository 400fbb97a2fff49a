"""Exact enumeration of the LDPC Gibbs measure and of its dual bracket.

The primal measure on codewords is ``exp(sum_i l_i sigma_i) / Z_P`` with
``sigma_i = (-1)**x_i``. The dual sum runs over check-node signs ``u`` with
weight ``prod_i (1 + exp(-2 l_i) tau_i)``, ``tau_i = prod_{c in i} u_c``.

Covariances are assembled from the four pair probabilities,
``cov = 4 (p11 p00 - p10 p01)``, which keeps relative accuracy when the
posterior is nearly frozen (low noise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import LlrVector
from .graph import TannerGraph, codeword_basis, neighborhood, rank_gf2

DEFAULT_BUDGET = 2**26
#: |Z_G| below this is treated as a vanishing denominator.
ZG_FLOOR = 1e-300
_CHUNK_BITS = 16
_MAX_CELLS = 2**22


class CapacityError(RuntimeError):
    """Enumeration would exceed the state budget."""


class DegenerateRatioError(ArithmeticError):
    """Dual bracket requested while ``Z_G`` vanishes numerically."""


# ---------------------------------------------------------------- primal side

def gray_codewords(basis: np.ndarray) -> np.ndarray:
    """All ``2**k`` combinations of the basis rows, in reflected Gray-code order."""
    k, n = basis.shape
    words = np.zeros((1, n), dtype=np.uint8)
    for t in range(k):
        words = np.concatenate([words, words[::-1] ^ basis[t]])
    return words


def _conditioned_basis(H: np.ndarray, clamped: np.ndarray) -> np.ndarray:
    """Basis of codewords with ``x_i = 0`` on every clamped bit."""
    n = H.shape[1]
    rows = [H] if H.size else [np.zeros((0, n), dtype=np.uint8)]
    fixed = np.flatnonzero(clamped)
    if fixed.size:
        E = np.zeros((fixed.size, n), dtype=np.uint8)
        E[np.arange(fixed.size), fixed] = 1
        rows.append(E)
    return codeword_basis(np.concatenate(rows)) if n else np.zeros((0, 0), dtype=np.uint8)


@dataclass
class BatchGibbs:
    """Exact primal statistics for ``S`` channel realizations of one code.

    ``log_flip[s, i]`` is ``log P(sigma_i = -1)``; pair arrays follow ``pairs``.
    """

    logZ: np.ndarray
    log_flip: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    p11: np.ndarray
    p10: np.ndarray
    p01: np.ndarray
    p00: np.ndarray
    entropy: np.ndarray

    @property
    def marginals(self) -> np.ndarray:
        return 1.0 - 2.0 * np.exp(self.log_flip)

    @property
    def flip(self) -> np.ndarray:
        return np.exp(self.log_flip)

    @property
    def covariances(self) -> np.ndarray:
        return 4.0 * (self.p11 * self.p00 - self.p10 * self.p01)

    @property
    def pair_moments(self) -> np.ndarray:
        return self.p11 + self.p00 - self.p10 - self.p01


class _Accumulator:
    """Running log-sum-exp over codeword chunks for a batch of samples."""

    def __init__(self, S, n, P):
        self.M = np.full(S, -np.inf)
        self.Z = np.zeros(S)
        self.A1 = np.zeros((S, n))
        self.AP = np.zeros((S, P))
        self.D = np.zeros(S)  # sum_x w_x (M - E_x) >= 0, for the entropy

    def add(self, E, X, Y):
        m_chunk = E.max(axis=0)
        newM = np.maximum(self.M, m_chunk)
        with np.errstate(invalid="ignore"):
            scale = np.where(np.isfinite(self.M), np.exp(self.M - newM), 0.0)
        W = np.exp(E - newM)  # (K, S)
        with np.errstate(invalid="ignore"):
            shiftD = np.where(np.isfinite(self.M), (newM - self.M) * self.Z, 0.0)
        self.D = (self.D + shiftD) * scale + np.einsum("ks,ks->s", W, newM - E)
        self.Z = self.Z * scale + W.sum(axis=0)
        self.A1 = self.A1 * scale[:, None] + W.T @ X
        if Y is not None:
            self.AP = self.AP * scale[:, None] + W.T @ Y
        self.M = newM


def _pair_columns(X: np.ndarray, pairs_local) -> np.ndarray | None:
    if not pairs_local:
        return None
    ii = np.array([a for a, _ in pairs_local])
    jj = np.array([b for _, b in pairs_local])
    return X[:, ii] * X[:, jj]


def _enumerate_component(basis: np.ndarray, L: np.ndarray, pairs_local) -> _Accumulator:
    """Accumulate weights over the code spanned by ``basis`` (rows), samples ``L (S, n)``."""
    k, n = basis.shape
    S = L.shape[0]
    P = len(pairs_local)
    acc = _Accumulator(S, n, P)
    lo = min(k, _CHUNK_BITS)
    low = gray_codewords(basis[:lo])
    high = gray_codewords(basis[lo:]) if k > lo else np.zeros((1, n), dtype=np.uint8)
    Lsum = L.sum(axis=1)
    for offset in high:
        Xb = low ^ offset
        X = Xb.astype(float)
        Y = _pair_columns(X, pairs_local)
        # energy of codeword x: sum_i l_i (1 - 2 x_i)
        E = Lsum[None, :] - 2.0 * (X @ L.T)
        acc.add(E, X, Y)
    return acc


def _sample_chunk(k: int) -> int:
    return max(1, _MAX_CELLS // 2 ** min(k, _CHUNK_BITS))


def gibbs_batch(G: TannerGraph, L, clamped=None, pairs: Sequence[tuple[int, int]] = (),
                budget: int = DEFAULT_BUDGET) -> BatchGibbs:
    """Exact marginals, pair probabilities and entropy for each row of ``L``.

    The graph is split into connected components and each component's code is
    enumerated separately; clamped bits are conditioned to ``sigma = +1``.
    ``logZ`` omits the (infinite) channel factors of clamped bits.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    S, n = L.shape
    if n != G.n:
        raise ValueError(f"LLR length {n} does not match code length {G.n}")
    clamped = np.zeros(n, dtype=bool) if clamped is None else np.asarray(clamped, dtype=bool)
    L = np.where(clamped[None, :], 0.0, L)
    pairs = tuple((int(i), int(j)) for i, j in pairs)

    logZ = np.zeros(S)
    entropy = np.zeros(S)
    log_flip = np.full((S, n), -np.inf)
    P = len(pairs)
    p11 = np.zeros((S, P))
    p10 = np.zeros((S, P))
    p01 = np.zeros((S, P))
    p00 = np.zeros((S, P))

    H = G.to_matrix()
    comp_of = np.full(n, -1)
    comps = [c for c in G.components() if c[0]]
    for ci, (vs, _) in enumerate(comps):
        comp_of[vs] = ci

    for ci, (vs, cs) in enumerate(comps):
        sub_clamped = clamped[vs]
        basis = _conditioned_basis(H[np.ix_(cs, vs)] if cs else np.zeros((0, len(vs)), np.uint8), sub_clamped)
        k = basis.shape[0]
        if 2**k > budget:
            raise CapacityError(f"component with {len(vs)} bits has 2^{k} codewords > budget {budget}")
        pos = {v: a for a, v in enumerate(vs)}
        local = [(t, pos[i], pos[j]) for t, (i, j) in enumerate(pairs)
                 if comp_of[i] == ci and comp_of[j] == ci and i != j]
        pairs_local = [(a, b) for _, a, b in local]
        free = ~sub_clamped
        Lc = L[:, vs]
        step = _sample_chunk(k)
        for s0 in range(0, S, step):
            sl = slice(s0, min(S, s0 + step))
            acc = _enumerate_component(basis, Lc[sl], pairs_local)
            lz = acc.M + np.log(acc.Z)
            logZ[sl] += lz
            entropy[sl] += np.log(acc.Z) + acc.D / acc.Z
            with np.errstate(divide="ignore"):
                lf = np.log(acc.A1) - np.log(acc.Z)[:, None]
            lf[:, ~free] = -np.inf
            log_flip[sl][:, vs] = lf
            if local:
                idx = [t for t, _, _ in local]
                p11[sl, idx] = acc.AP / acc.Z[:, None]

    # the other cells follow from the marginals; the subtractions only lose
    # accuracy where the covariance formula itself cancels
    flip = np.exp(log_flip)
    for t, (i, j) in enumerate(pairs):
        if i != j and comp_of[i] == comp_of[j]:
            fi, fj, q = flip[:, i], flip[:, j], p11[:, t]
            p10[:, t] = np.maximum(fi - q, 0.0)
            p01[:, t] = np.maximum(fj - q, 0.0)
            p00[:, t] = (1.0 - fi) - p01[:, t]
        elif i == j:
            p11[:, t], p00[:, t] = flip[:, i], 1.0 - flip[:, i]
            p10[:, t] = p01[:, t] = 0.0
        elif comp_of[i] != comp_of[j]:
            fi, fj = flip[:, i], flip[:, j]
            p11[:, t], p10[:, t] = fi * fj, fi * (1 - fj)
            p01[:, t], p00[:, t] = (1 - fi) * fj, (1 - fi) * (1 - fj)
    result = BatchGibbs(logZ, log_flip, pairs, p11, p10, p01, p00, entropy)
    return result


@dataclass
class GibbsResult:
    """Exact primal statistics for one channel realization."""

    logZ: float
    marginals: np.ndarray
    log_flip: np.ndarray
    pairs: tuple[tuple[int, int], ...] = ()
    pair_moments: np.ndarray = field(default_factory=lambda: np.zeros(0))
    covariances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    entropy: float = 0.0

    def covariance(self, i: int, j: int) -> float:
        for t, p in enumerate(self.pairs):
            if p == (i, j) or p == (j, i):
                return float(self.covariances[t])
        raise KeyError((i, j))


def _llr_arrays(l) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(l, LlrVector):
        return l.values, l.clamped
    v = np.asarray(l, dtype=float)
    return v, np.zeros(v.shape, dtype=bool)


def gibbs_exact(G: TannerGraph, l, pairs: Sequence[tuple[int, int]] = (),
                budget: int = DEFAULT_BUDGET) -> GibbsResult:
    """Exact ``log Z_P``, marginals, pair statistics and conditional entropy (nats)."""
    values, clamped = _llr_arrays(l)
    b = gibbs_batch(G, values[None, :], clamped, pairs, budget)
    cov = b.covariances[0]
    # different components: the measure factorizes, the covariance is exactly 0
    comp = _component_index(G)
    for t, (i, j) in enumerate(b.pairs):
        if i != j and comp[i] != comp[j]:
            cov[t] = 0.0
    return GibbsResult(float(b.logZ[0]), b.marginals[0], b.log_flip[0], b.pairs,
                       b.pair_moments[0], cov, float(b.entropy[0]))


def _component_index(G: TannerGraph) -> np.ndarray:
    comp = np.full(G.n, -1)
    for ci, (vs, _) in enumerate(c for c in G.components() if c[0]):
        comp[vs] = ci
    return comp


def covariances_batch(G: TannerGraph, b: BatchGibbs) -> np.ndarray:
    """Pair covariances with exact zeros for pairs in different components."""
    cov = b.covariances
    comp = _component_index(G)
    for t, (i, j) in enumerate(b.pairs):
        if i != j and comp[i] != comp[j]:
            cov[:, t] = 0.0
    return cov


# ---------------------------------------------------------------- dual side

@dataclass
class DualResult:
    """Signed dual sum and brackets.

    ``condition`` is ``sum |terms| / |Z_G|``, the cancellation factor of the sum.
    """

    Z_G: float
    log_Z_G: float
    tau: dict[int, float]
    tau_pairs: dict[tuple[int, int], float]
    condition: float
    n_states: int


def _dual_terms(G: TannerGraph, values: np.ndarray, clamped: np.ndarray, budget: int):
    m = G.m
    if 2**m > budget:
        raise CapacityError(f"dual enumeration needs 2^{m} states > budget {budget}")
    H = G.to_matrix()
    idx = np.arange(2**m, dtype=np.int64)
    B = ((idx[:, None] >> np.arange(m)) & 1).astype(np.int64)  # b_c = (1 - u_c) / 2
    T = 1 - 2 * ((B @ H.astype(np.int64)) & 1)  # tau_i, shape (2^m, n)
    x = np.where(clamped, np.inf, values)
    a = np.exp(-2.0 * x)
    # log|1 + a tau| without cancellation: 1 - a = -expm1(-2l)
    log_plus = np.log1p(a)
    minus = -np.expm1(-2.0 * x)
    log_minus = np.log(np.abs(np.where(minus == 0, 1.0, minus)))
    sign_minus = np.sign(minus)
    zero_minus = minus == 0
    logs = np.where(T > 0, log_plus, log_minus)
    signs = np.where(T > 0, 1.0, sign_minus)
    dead = (T < 0) & zero_minus  # factor exactly 0 (l_i = 0, tau_i = -1)
    signs = np.where(dead, 0.0, signs)
    row_log = np.where(dead, 0.0, logs).sum(axis=1)
    row_sign = signs.prod(axis=1)
    shift = row_log.max() if row_log.size else 0.0
    terms = row_sign * np.exp(row_log - shift)
    return terms, T, shift


def dual_exact(G: TannerGraph, l, targets: Sequence = (), budget: int = DEFAULT_BUDGET) -> DualResult:
    """Exact dual partition function ``Z_G`` and brackets ``<tau_i>_G``, ``<tau_i tau_j>_G``.

    ``targets`` mixes variable indices and ``(i, j)`` pairs. Sums use
    ``math.fsum`` (exactly rounded), so the only error is in the terms.
    """
    values, clamped = _llr_arrays(l)
    terms, T, shift = _dual_terms(G, values, clamped, budget)
    total = math.fsum(terms)
    abs_total = math.fsum(np.abs(terms))
    Z = total * math.exp(shift) if total else 0.0
    cond = abs_total / abs(total) if total else math.inf
    tau, tau_pairs = {}, {}
    if targets:
        if abs(total) * math.exp(shift) < ZG_FLOOR:
            raise DegenerateRatioError(
                f"|Z_G| = {abs(Z):.3g} below floor {ZG_FLOOR}; sum of |terms| = {abs_total * math.exp(shift):.3g}")
        for t in targets:
            if isinstance(t, (tuple, list)):
                i, j = t
                tau_pairs[(i, j)] = math.fsum(terms * T[:, i] * T[:, j]) / total
            else:
                tau[int(t)] = math.fsum(terms * T[:, t]) / total
    log_Z = math.log(total) + shift if total > 0 else math.nan
    return DualResult(Z, log_Z, tau, tau_pairs, cond, len(terms))


def dual_cov(d: DualResult, i: int, j: int) -> float:
    return d.tau_pairs[(i, j)] - d.tau[i] * d.tau[j]


# ---------------------------------------------------------------- identities

def check_duality(G: TannerGraph, l, budget: int = DEFAULT_BUDGET) -> float:
    """``|log Z_P - (-rank ln2 + sum l + log Z_G - (m - rank) ln2)|``.

    The u-sum in ``Z_G`` visits every dual codeword ``2**(m - rank)`` times;
    for full-row-rank ``H`` the last term vanishes.
    """
    values, clamped = _llr_arrays(l)
    primal = gibbs_exact(G, l, budget=budget)
    dual = dual_exact(G, l, budget=budget)
    rhs = -G.m * math.log(2) + math.fsum(values[~clamped]) + dual.log_Z_G
    return abs(primal.logZ - rhs)


@dataclass
class DerivativeCheck:
    residual1: float
    residual2: float
    near_pole: bool = False

    def __iter__(self):
        return iter((self.residual1, self.residual2))


def check_derivative_identities(G: TannerGraph, l, i: int, j: int, delta: float = 1e-3,
                                budget: int = DEFAULT_BUDGET) -> DerivativeCheck:
    """Residuals of the first- and second-derivative duality identities at bits ``i, j``.

    Instances with ``|l_i|`` or ``|l_j|`` below ``delta`` are skipped
    (``near_pole=True``, residuals NaN).
    """
    values, clamped = _llr_arrays(l)
    if i == j:
        raise ValueError("need i != j")
    if clamped[i] or clamped[j]:
        raise ValueError("derivative identities need finite LLRs at i and j")
    if abs(values[i]) < delta or abs(values[j]) < delta:
        return DerivativeCheck(math.nan, math.nan, True)
    primal = gibbs_exact(G, l, pairs=[(i, j)], budget=budget)
    dual = dual_exact(G, l, targets=[i, j, (i, j)], budget=budget)
    li, lj = values[i], values[j]
    rhs1 = 1.0 / math.tanh(2 * li) - dual.tau[i] / math.sinh(2 * li)
    r1 = abs(primal.marginals[i] - rhs1)
    rhs2 = dual_cov(dual, i, j) / (math.sinh(2 * li) * math.sinh(2 * lj))
    r2 = abs(primal.covariances[0] - rhs2)
    return DerivativeCheck(r1, r2)


# ---------------------------------------------------------------- restricted measures

def neighborhood_batch(G: TannerGraph, o: int, d: int, L, clamped=None, boundary: str = "free",
                       budget: int = DEFAULT_BUDGET) -> BatchGibbs:
    """Root statistics of the Gibbs measure restricted to ``N_d(o)``.

    ``boundary='plus_one'`` conditions every variable at distance exactly ``d``
    to ``sigma = +1``; ``'free'`` keeps only their channel factors. The
    returned batch has a single column for the root.
    """
    if boundary not in ("free", "plus_one"):
        raise ValueError(f"unknown boundary {boundary!r}")
    L = np.atleast_2d(np.asarray(L, dtype=float))
    clamped = np.zeros(G.n, dtype=bool) if clamped is None else np.asarray(clamped, dtype=bool)
    nb = neighborhood(G, o, d)
    if nb.covers(G) and not nb.boundary:
        sub, var_ids = G, list(range(G.n))
    else:
        sub, var_ids, _ = G.subgraph(nb.variables, nb.checks)
    sub_clamped = clamped[var_ids].copy()
    if boundary == "plus_one":
        pos = {v: a for a, v in enumerate(var_ids)}
        for v in nb.boundary:
            sub_clamped[pos[v]] = True
    root = var_ids.index(o)
    b = gibbs_batch(sub, L[:, var_ids], sub_clamped, budget=budget)
    return BatchGibbs(b.logZ, b.log_flip[:, [root]], (), b.p11, b.p10, b.p01, b.p00, b.entropy)


def neighborhood_gibbs(G: TannerGraph, o: int, d: int, l, boundary: str = "free",
                       budget: int = DEFAULT_BUDGET) -> float:
    """Exact ``<sigma_o>`` in the measure restricted to ``N_d(o)``."""
    values, clamped = _llr_arrays(l)
    b = neighborhood_batch(G, o, d, values[None, :], clamped, boundary, budget)
    return float(b.marginals[0, 0])


@dataclass
class RestrictedPartitions:
    """Partition functions of the subsystem left after removing the checks ``Xhat``.

    ``log2_dual_size`` is the rank of the restricted parity-check matrix;
    ``outer_llr_sum`` is ``sum l_i`` over bits touching ``Xhat``.
    """

    Z_G: float
    log_Z_P: float
    log2_dual_size: int
    n_checks: int
    variables: tuple[int, ...]
    outer_llr_sum: float

    @property
    def Z_P(self) -> float:
        return math.exp(self.log_Z_P)

    @property
    def dual_size(self) -> int:
        return 2**self.log2_dual_size


def restricted_partitions(G: TannerGraph, Xhat, l, budget: int = DEFAULT_BUDGET) -> RestrictedPartitions:
    """``Z_G(Xhat^c)``, ``Z_P(Xhat^c)`` and ``|C^perp(Xhat^c)|``.

    The subsystem keeps the checks outside ``Xhat`` and the variables with no
    neighbor in ``Xhat``. Empty sums are 0 and empty products 1, so removing
    every check gives ``Z_G = Z_P = 1``.
    """
    values, clamped = _llr_arrays(l)
    Xhat = set(Xhat)
    keep_c = [c for c in range(G.m) if c not in Xhat]
    keep_v = [v for v in range(G.n) if not set(G.var_to_checks[v]) & Xhat]
    sub, var_ids, _ = G.subgraph(keep_v, keep_c)
    sub_l = LlrVector.from_values(values[var_ids], clamped[var_ids])
    dual = dual_exact(sub, sub_l, budget=budget)
    primal = gibbs_exact(sub, sub_l, budget=budget) if sub.n else None
    log_zp = primal.logZ if primal is not None else 0.0
    outer = [v for v in range(G.n) if v not in set(keep_v)]
    outer_sum = math.fsum(values[v] for v in outer if not clamped[v])
    return RestrictedPartitions(dual.Z_G, log_zp, rank_gf2(sub) if sub.m and sub.n else 0,
                                len(keep_c), tuple(var_ids), outer_sum)
