"""Two-replica cluster expansion of the dual covariance.

The expansion writes

    <tau_i tau_j>_G - <tau_i>_G <tau_j>_G = 1/2 sum_Xhat K(Xhat) (Z_G(Xhat^c) / Z_G)^2

with ``K`` a signed sum over two replica copies of the check signs inside
``Xhat`` and over variable sets ``Gamma`` compatible with ``Xhat``.

Two readings of compatibility are provided:

``"literal"``
    (i) ``dGamma | di | dj == Xhat``; (ii) ``dGamma`` meets both ``di`` and
    ``dj``; (iii) a walk joins ``di`` to ``dj`` through variables of ``Gamma``.
``"connected"``
    (i) as above, and ``Gamma | {i, j}`` is connected through shared checks.
    This is what expanding ``prod_k (1 + E_k)`` and grouping terms by the
    component containing ``i`` produces, so the identity holds exactly.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .channel import NoiseSpec, sample_llr_batch
from .graph import UNREACHABLE, TannerGraph, graph_distance
from .inference import _llr_arrays, dual_cov, dual_exact, restricted_partitions

CONVENTIONS = ("literal", "connected")


class ClusterCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cluster:
    checks: tuple[int, ...]
    witness: tuple[int, ...]
    contains_di: bool = True
    contains_dj: bool = True

    def __len__(self):
        return len(self.checks)


@dataclass(frozen=True)
class CompatibleSet:
    variables: tuple[int, ...]


class Clusters(list):
    """List of clusters with a ``truncated`` flag set when ``size_cap`` dropped some."""

    truncated: bool = False


def boundary(G: TannerGraph, variables: Iterable[int]) -> frozenset[int]:
    return frozenset(c for v in variables for c in G.var_to_checks[v])


def _variable_components(G: TannerGraph, variables) -> list[set[int]]:
    """Components of ``variables`` joined when they share a check."""
    todo = set(variables)
    comps = []
    while todo:
        start = todo.pop()
        comp, queue = {start}, deque([start])
        while queue:
            v = queue.popleft()
            for c in G.var_to_checks[v]:
                for w in G.check_to_vars[c]:
                    if w in todo:
                        todo.discard(w)
                        comp.add(w)
                        queue.append(w)
        comps.append(comp)
    return comps


def is_connected_set(G: TannerGraph, variables) -> bool:
    variables = set(variables)
    return len(_variable_components(G, variables)) <= 1


def is_cluster(G: TannerGraph, Xhat, i: int, j: int) -> bool:
    """Independent validator: ``Xhat = dX`` for a connected ``X`` and ``di | dj <= Xhat``."""
    Xhat = frozenset(Xhat)
    if not (boundary(G, [i]) | boundary(G, [j])) <= Xhat or not Xhat:
        return False
    inside = [v for v in range(G.n) if G.var_to_checks[v] and set(G.var_to_checks[v]) <= Xhat]
    return any(boundary(G, comp) == Xhat for comp in _variable_components(G, inside))


def enumerate_clusters(G: TannerGraph, i: int, j: int, size_cap: int | None = None,
                       max_checks: int = 16) -> Clusters:
    """All check clusters containing ``di`` and ``dj``, deduplicated by check set.

    Candidate check sets are scanned exhaustively; a set qualifies when some
    connected component of the variables living inside it has exactly that
    boundary (that component is kept as the witness).
    """
    out = Clusters()
    if i == j:
        raise ValueError("need i != j")
    if graph_distance(G, i, j) is UNREACHABLE:
        return out
    core = sorted(boundary(G, [i]) | boundary(G, [j]))
    rest = [c for c in range(G.m) if c not in set(core)]
    if len(rest) > max_checks:
        raise ClusterCapError(f"{len(rest)} free checks exceed max_checks={max_checks}")
    for r in range(len(rest) + 1):
        for extra in itertools.combinations(rest, r):
            Xhat = frozenset(core) | frozenset(extra)
            if size_cap is not None and len(Xhat) > size_cap:
                out.truncated = True
                continue
            inside = [v for v in range(G.n) if G.var_to_checks[v] and set(G.var_to_checks[v]) <= Xhat]
            for comp in _variable_components(G, inside):
                if boundary(G, comp) == Xhat:
                    out.append(Cluster(tuple(sorted(Xhat)), tuple(sorted(comp))))
                    break
    return out


def _walk_exists(G: TannerGraph, Gamma: set[int], src: set[int], dst: set[int]) -> bool:
    """Alternating walk from a check in ``src`` to one in ``dst`` using only variables in ``Gamma``."""
    if src & dst:
        return True
    seen = set(src)
    queue = deque(src)
    while queue:
        c = queue.popleft()
        for v in G.check_to_vars[c]:
            if v not in Gamma:
                continue
            for c2 in G.var_to_checks[v]:
                if c2 in dst:
                    return True
                if c2 not in seen:
                    seen.add(c2)
                    queue.append(c2)
    return False


def is_compatible(G: TannerGraph, Xhat, Gamma, i: int, j: int, convention: str = "literal",
                  allow_endpoints: bool = True) -> bool:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    Xhat = frozenset(Xhat)
    Gamma = set(Gamma)
    if not allow_endpoints and (i in Gamma or j in Gamma):
        return False
    di, dj = boundary(G, [i]), boundary(G, [j])
    dG = boundary(G, Gamma)
    if dG | di | dj != Xhat:
        return False
    if convention == "literal":
        if not (dG & di) or not (dG & dj):
            return False
        return _walk_exists(G, Gamma, set(di), set(dj))
    return is_connected_set(G, Gamma | {i, j})


def enumerate_compatible(G: TannerGraph, Xhat, i: int, j: int, convention: str = "literal",
                         allow_endpoints: bool = True, max_candidates: int = 20) -> list[CompatibleSet]:
    """All compatible ``Gamma`` drawn from variables whose checks lie inside ``Xhat``."""
    Xhat = frozenset(Xhat)
    cands = [v for v in range(G.n) if G.var_to_checks[v] and set(G.var_to_checks[v]) <= Xhat]
    if len(cands) > max_candidates:
        raise ClusterCapError(f"{len(cands)} candidates exceed max_candidates={max_candidates}")
    out = []
    for r in range(len(cands) + 1):
        for Gamma in itertools.combinations(cands, r):
            if is_compatible(G, Xhat, Gamma, i, j, convention, allow_endpoints):
                out.append(CompatibleSet(tuple(Gamma)))
    return out


# ---------------------------------------------------------------- kernel

def _replica_taus(G: TannerGraph, Xhat: tuple[int, ...], variables: list[int]):
    """tau values of ``variables`` for both replicas over all ``4**|Xhat|`` sign pairs."""
    q = len(Xhat)
    if q > 16:
        raise ClusterCapError(f"|Xhat| = {q} > 16")
    pos = {c: t for t, c in enumerate(Xhat)}
    idx = np.arange(4**q, dtype=np.int64)
    bits1 = (idx[:, None] >> np.arange(q)) & 1
    bits2 = (idx[:, None] >> (q + np.arange(q))) & 1
    taus = {}
    for v in variables:
        cols = [pos[c] for c in G.var_to_checks[v]]
        t1 = 1 - 2 * (bits1[:, cols].sum(axis=1) & 1)
        t2 = 1 - 2 * (bits2[:, cols].sum(axis=1) & 1)
        taus[v] = (t1.astype(float), t2.astype(float))
    return taus


@dataclass
class KernelTerms:
    value: float
    per_gamma: list[tuple[tuple[int, ...], float]]


def kernel_terms(G: TannerGraph, Xhat, l, i: int, j: int, convention: str = "literal",
                 allow_endpoints: bool = True, gammas=None) -> KernelTerms:
    values, clamped = _llr_arrays(l)
    Xhat = tuple(sorted(Xhat))
    if gammas is None:
        gammas = enumerate_compatible(G, Xhat, i, j, convention, allow_endpoints)
    members = sorted({v for g in gammas for v in g.variables} | {i, j})
    taus = _replica_taus(G, Xhat, members)
    ti1, ti2 = taus[i]
    tj1, tj2 = taus[j]
    pref = (ti1 - ti2) * (tj1 - tj2)
    a = np.where(clamped, 0.0, np.exp(-2.0 * np.where(clamped, 0.0, values)))
    E = {}
    for v in members:
        t1, t2 = taus[v]
        E[v] = a[v] * (t1 + t2) + a[v] ** 2 * t1 * t2
    per = []
    for g in gammas:
        prod = pref.copy()
        for v in g.variables:
            prod = prod * E[v]
        per.append((g.variables, math.fsum(prod)))
    return KernelTerms(math.fsum(t for _, t in per), per)


def kernel(G: TannerGraph, Xhat, l, i: int, j: int, convention: str = "literal",
           allow_endpoints: bool = True) -> float:
    """``K_{i,j}(Xhat)``: replica sum of ``(tau_i1 - tau_i2)(tau_j1 - tau_j2) prod_{Gamma} E_k``."""
    return kernel_terms(G, Xhat, l, i, j, convention, allow_endpoints).value


def kernel_batch(G: TannerGraph, Xhat, L: np.ndarray, i: int, j: int, convention: str = "literal",
                 allow_endpoints: bool = True) -> np.ndarray:
    """Kernel values for each row of ``L``."""
    Xhat = tuple(sorted(Xhat))
    gammas = enumerate_compatible(G, Xhat, i, j, convention, allow_endpoints)
    members = sorted({v for g in gammas for v in g.variables} | {i, j})
    taus = _replica_taus(G, Xhat, members)
    pref = (taus[i][0] - taus[i][1]) * (taus[j][0] - taus[j][1])
    A = np.exp(-2.0 * np.atleast_2d(L))  # (S, n)
    out = np.zeros(A.shape[0])
    for g in gammas:
        prod = np.broadcast_to(pref, (A.shape[0], pref.size)).copy()
        for v in g.variables:
            t1, t2 = taus[v]
            a = A[:, [v]]
            prod *= a * (t1 + t2) + a**2 * (t1 * t2)
        out += prod.sum(axis=1)
    return out


# ---------------------------------------------------------------- identity

@dataclass
class ClusterTerm:
    checks: tuple[int, ...]
    witness: tuple[int, ...]
    kernel: float
    ratio: float
    contribution: float
    gammas: list[tuple[tuple[int, ...], float]] = field(default_factory=list)


@dataclass
class IdentityReport:
    convention: str
    pair: tuple[int, int]
    lhs: float
    rhs: float
    residual: float
    terms: list[ClusterTerm]
    truncated: bool = False

    @property
    def scaled_residual(self) -> float:
        return self.residual / max(1.0, abs(self.lhs))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def identity_check(G: TannerGraph, l, i: int, j: int, convention: str = "literal",
                   allow_endpoints: bool = True, size_cap: int | None = None) -> IdentityReport:
    """Compare the dual covariance with the assembled cluster sum, term by term."""
    dual = dual_exact(G, l, targets=[i, j, (i, j)])
    lhs = dual_cov(dual, i, j)
    clusters = enumerate_clusters(G, i, j, size_cap=size_cap)
    terms = []
    for cl in clusters:
        kt = kernel_terms(G, cl.checks, l, i, j, convention, allow_endpoints)
        rp = restricted_partitions(G, cl.checks, l)
        ratio = rp.Z_G / dual.Z_G
        terms.append(ClusterTerm(cl.checks, cl.witness, kt.value, ratio,
                                 0.5 * kt.value * ratio**2, kt.per_gamma))
    rhs = math.fsum(t.contribution for t in terms)
    return IdentityReport(convention, (i, j), lhs, rhs, abs(lhs - rhs), terms, clusters.truncated)


def diagnose_conventions(G: TannerGraph, l, i: int, j: int, **kw) -> dict[str, IdentityReport]:
    return {conv: identity_check(G, l, i, j, conv, **kw) for conv in CONVENTIONS}


# ---------------------------------------------------------------- T1 / T2

@dataclass
class T1T2:
    t1_sq: float
    t1_sq_err: float
    t2_sq: float
    t2_sq_err: float
    samples: int

    @property
    def t2_bound_ok(self) -> bool:
        return self.t2_sq <= 1.0 + 3.0 * self.t2_sq_err


def t1_t2_diagnostics(G: TannerGraph, Xhat, i: int, j: int, eps: float, s: float = 1 / 16,
                      samples: int = 2000, rng=None, convention: str = "literal") -> T1T2:
    """Monte Carlo ``E|K|^{4s}`` and ``E[(Z_G(Xhat^c)/Z_G)^{8s}]`` over the noise."""
    if rng is None:
        raise ValueError("rng required")
    L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, eps**2), samples, rng)
    K = kernel_batch(G, Xhat, L, i, j, convention)
    t1 = np.abs(K) ** (4 * s)
    ratios = np.empty(samples)
    for t in range(samples):
        zg = dual_exact(G, L[t]).Z_G
        ratios[t] = restricted_partitions(G, Xhat, L[t]).Z_G / zg
    t2 = np.abs(ratios) ** (8 * s)
    se = lambda x: float(x.std(ddof=1) / math.sqrt(samples))
    return T1T2(float(t1.mean()), se(t1), float(t2.mean()), se(t2), samples)
