"""Tanner graphs, GF(2) linear algebra, graph distances and ensemble sampling."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: Distance returned for pairs in different connected components.
UNREACHABLE = None


@dataclass(frozen=True)
class TannerGraph:
    """Bipartite graph of ``n`` variable nodes and ``m`` check nodes.

    ``removed_edges`` records (variable, check) pairs dropped when a sampled
    multigraph had a repeated edge; these count as 2-cycles for tree tests.
    """

    n: int
    m: int
    check_to_vars: tuple[tuple[int, ...], ...]
    var_to_checks: tuple[tuple[int, ...], ...]
    removed_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if len(self.check_to_vars) != self.m or len(self.var_to_checks) != self.n:
            raise ValueError("adjacency sizes do not match n, m")
        for c, vs in enumerate(self.check_to_vars):
            if len(set(vs)) != len(vs):
                raise ValueError(f"repeated edge at check {c}")
            for v in vs:
                if c not in self.var_to_checks[v]:
                    raise ValueError(f"inconsistent adjacency at ({v}, {c})")
        n_edges = sum(len(cs) for cs in self.var_to_checks)
        if n_edges != sum(len(vs) for vs in self.check_to_vars):
            raise ValueError("inconsistent adjacency: edge counts differ")

    @property
    def dl_max(self) -> int:
        return max((len(cs) for cs in self.var_to_checks), default=0)

    @property
    def dr_max(self) -> int:
        return max((len(vs) for vs in self.check_to_vars), default=0)

    @property
    def k(self) -> float:
        """Geometric mean of the maximal degrees, ``sqrt(dl_max * dr_max)``."""
        return math.sqrt(self.dl_max * self.dr_max)

    @property
    def n_edges(self) -> int:
        return sum(len(vs) for vs in self.check_to_vars)

    def variable_degrees(self) -> np.ndarray:
        return np.array([len(cs) for cs in self.var_to_checks], dtype=int)

    def check_degrees(self) -> np.ndarray:
        return np.array([len(vs) for vs in self.check_to_vars], dtype=int)

    def to_matrix(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        for c, vs in enumerate(self.check_to_vars):
            H[c, list(vs)] = 1
        return H

    def subgraph(self, variables: Iterable[int], checks: Iterable[int]) -> tuple["TannerGraph", list[int], list[int]]:
        """Induced subgraph on the given nodes.

        Returns the subgraph plus the sorted original variable and check indices,
        so that local index ``a`` corresponds to ``var_ids[a]``.
        """
        var_ids = sorted(set(variables))
        chk_ids = sorted(set(checks))
        vpos = {v: a for a, v in enumerate(var_ids)}
        c2v = []
        for c in chk_ids:
            c2v.append(tuple(sorted(vpos[v] for v in self.check_to_vars[c] if v in vpos)))
        return _from_check_lists(len(var_ids), c2v), var_ids, chk_ids

    def components(self) -> list[tuple[list[int], list[int]]]:
        """Connected components as (variables, checks), each sorted."""
        seen_v = [False] * self.n
        out = []
        for start in range(self.n):
            if seen_v[start]:
                continue
            vs, cs = [start], set()
            seen_v[start] = True
            queue = deque([start])
            while queue:
                v = queue.popleft()
                for c in self.var_to_checks[v]:
                    if c in cs:
                        continue
                    cs.add(c)
                    for w in self.check_to_vars[c]:
                        if not seen_v[w]:
                            seen_v[w] = True
                            vs.append(w)
                            queue.append(w)
            out.append((sorted(vs), sorted(cs)))
        # checks with no variables form their own (trivial) components
        touched = {c for _, cs in out for c in cs}
        for c in range(self.m):
            if c not in touched:
                out.append(([], [c]))
        return out


def _from_check_lists(n: int, check_to_vars: Sequence[Sequence[int]], removed=()) -> TannerGraph:
    v2c: list[list[int]] = [[] for _ in range(n)]
    c2v = []
    for c, vs in enumerate(check_to_vars):
        vs = tuple(sorted(vs))
        c2v.append(vs)
        for v in vs:
            if not 0 <= v < n:
                raise ValueError(f"variable index {v} out of range")
            v2c[v].append(c)
    return TannerGraph(n, len(c2v), tuple(c2v), tuple(tuple(cs) for cs in v2c), tuple(removed))


def build_graph(H) -> TannerGraph:
    """Build a Tanner graph from an ``m x n`` binary parity-check matrix."""
    H = np.asarray(H)
    if H.ndim != 2:
        raise ValueError("parity-check matrix must be 2-dimensional")
    if np.any(H < 0):
        raise ValueError("negative entry in parity-check matrix")
    if np.any(H > 1):
        r, c = np.argwhere(H > 1)[0]
        raise ValueError(f"entry H[{r},{c}]={H[r, c]} > 1: duplicate edge")
    m, n = H.shape
    return _from_check_lists(n, [np.flatnonzero(H[c]).tolist() for c in range(m)])


def from_check_lists(n: int, check_to_vars: Sequence[Sequence[int]]) -> TannerGraph:
    for c, vs in enumerate(check_to_vars):
        if len(set(vs)) != len(vs):
            raise ValueError(f"duplicate edge at check {c}")
    return _from_check_lists(n, check_to_vars)


# ---------------------------------------------------------------- GF(2) algebra

def _as_gf2(H) -> np.ndarray:
    if isinstance(H, TannerGraph):
        return H.to_matrix()
    A = np.asarray(H)
    if A.ndim == 1:
        A = A[None, :]
    return (A.astype(np.int64) & 1).astype(np.uint8)


def rref_gf2(H) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and its pivot columns."""
    A = _as_gf2(H).copy()
    m, n = A.shape
    pivots = []
    r = 0
    for col in range(n):
        if r >= m:
            break
        rows = np.flatnonzero(A[r:, col])
        if rows.size == 0:
            continue
        p = r + rows[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        ones = np.flatnonzero(A[:, col])
        ones = ones[ones != r]
        if ones.size:
            A[ones] ^= A[r]
        pivots.append(col)
        r += 1
    return A[:r], pivots


def rank_gf2(H) -> int:
    return len(rref_gf2(H)[1])


def codeword_basis(H) -> np.ndarray:
    """Basis of the null space of ``H`` over GF(2), one codeword per row."""
    A = _as_gf2(H)
    n = A.shape[1]
    R, pivots = rref_gf2(A)
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for t, f in enumerate(free):
        basis[t, f] = 1
        for r, p in enumerate(pivots):
            basis[t, p] = R[r, f]
    return basis


def dual_size_log2(H) -> int:
    """``log2 |C^perp|``, the rank of ``H``."""
    return rank_gf2(H)


# ---------------------------------------------------------------- distances

def _bfs(G: TannerGraph, source: int) -> tuple[dict[int, int], dict[int, int]]:
    """Edge-count distances from variable ``source`` to variables and checks."""
    dv = {source: 0}
    dc: dict[int, int] = {}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for c in G.var_to_checks[v]:
            if c in dc:
                continue
            dc[c] = dv[v] + 1
            for w in G.check_to_vars[c]:
                if w not in dv:
                    dv[w] = dc[c] + 1
                    queue.append(w)
    return dv, dc


def graph_distance(G: TannerGraph, i: int, j: int):
    """Shortest path length (edges) between variables ``i`` and ``j``.

    Returns :data:`UNREACHABLE` when they lie in different components.
    """
    if i == j:
        raise ValueError("graph_distance requires i != j")
    return _bfs(G, i)[0].get(j, UNREACHABLE)


def variable_distances(G: TannerGraph, source: int) -> dict[int, int]:
    return _bfs(G, source)[0]


@dataclass(frozen=True)
class Neighborhood:
    root: int
    depth: int
    variables: tuple[int, ...]
    checks: tuple[int, ...]
    boundary: tuple[int, ...]
    is_tree: bool

    def covers(self, G: TannerGraph) -> bool:
        return len(self.variables) == G.n and len(self.checks) == G.m


def neighborhood(G: TannerGraph, o: int, d: int) -> Neighborhood:
    """Depth-``d`` neighborhood of variable ``o`` (``d`` even, ``d >= 2``)."""
    if d < 2 or d % 2:
        raise ValueError(f"depth must be even and >= 2, got {d}")
    dv, dc = _bfs(G, o)
    checks = sorted(c for c, r in dc.items() if r <= d - 1)
    variables = sorted(v for v, r in dv.items() if r <= d)
    boundary = tuple(v for v in variables if dv[v] == d)
    vset = set(variables)
    removed = any(v in vset for v, _ in G.removed_edges)
    n_edges = sum(len(G.check_to_vars[c]) for c in checks)
    # connected by construction: a tree iff edges == nodes - 1
    is_tree = not removed and n_edges == len(variables) + len(checks) - 1
    return Neighborhood(o, d, tuple(variables), tuple(checks), boundary, is_tree)


# ---------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class CodeEnsembleSpec:
    """Node-perspective degree distributions.

    ``poisson_mean`` replaces the variable side by a Poisson profile,
    truncated where its CDF exceeds ``1 - 1e-12``.
    """

    var_degrees: tuple[tuple[int, float], ...] = ()
    check_degrees: tuple[tuple[int, float], ...] = ()
    poisson_mean: float | None = None

    def __post_init__(self):
        if self.poisson_mean is None:
            _check_dist(self.var_degrees, "variable")
        elif self.poisson_mean <= 0:
            raise ValueError("poisson mean must be positive")
        _check_dist(self.check_degrees, "check")
        if any(d < 1 for d, _ in self.check_degrees):
            raise ValueError("check degrees must be >= 1")

    @classmethod
    def regular(cls, dl: int, dr: int) -> "CodeEnsembleSpec":
        return cls(((dl, 1.0),), ((dr, 1.0),))

    @classmethod
    def poisson(cls, mean: float, check_degree: int | None = None) -> "CodeEnsembleSpec":
        """Poisson variable degrees; checks default to degree ``2*mean`` (rate 1/2)."""
        dr = int(round(2 * mean)) if check_degree is None else check_degree
        return cls((), ((dr, 1.0),), float(mean))

    def variable_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        if self.poisson_mean is None:
            degs = np.array([d for d, _ in self.var_degrees], dtype=int)
            probs = np.array([p for _, p in self.var_degrees], dtype=float)
            return degs, probs / probs.sum()
        from scipy.stats import poisson

        dmax = int(poisson.ppf(1 - 1e-12, self.poisson_mean)) + 1
        degs = np.arange(dmax + 1)
        probs = poisson.pmf(degs, self.poisson_mean)
        return degs, probs / probs.sum()

    def check_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        degs = np.array([d for d, _ in self.check_degrees], dtype=int)
        probs = np.array([p for _, p in self.check_degrees], dtype=float)
        return degs, probs / probs.sum()

    def edge_perspective(self) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
        """Edge-perspective ``(degrees, probs)`` for variables and checks."""
        out = []
        for degs, probs in (self.variable_distribution(), self.check_distribution()):
            w = degs * probs
            if w.sum() <= 0:
                raise ValueError("degenerate ensemble: no edges")
            keep = w > 0
            out.append((degs[keep], w[keep] / w.sum()))
        return out[0], out[1]

    def mean_variable_degree(self) -> float:
        d, p = self.variable_distribution()
        return float(d @ p)

    def mean_check_degree(self) -> float:
        d, p = self.check_distribution()
        return float(d @ p)

    def describe(self) -> str:
        if self.poisson_mean is not None:
            return f"poisson:{self.poisson_mean:g}/check:{_fmt_dist(self.check_degrees)}"
        return f"var:{_fmt_dist(self.var_degrees)}/check:{_fmt_dist(self.check_degrees)}"


def _fmt_dist(dist) -> str:
    return ",".join(f"{d}={p:g}" for d, p in dist)


def _check_dist(dist, side: str) -> None:
    if not dist:
        raise ValueError(f"empty {side}-degree distribution")
    if any(p < 0 for _, p in dist) or any(d < 0 for d, _ in dist):
        raise ValueError(f"negative entry in {side}-degree distribution")
    total = sum(p for _, p in dist)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"{side}-degree probabilities sum to {total}, not 1")


def _degree_sequence(rng, degs, probs, count) -> np.ndarray:
    return rng.choice(degs, size=count, p=probs)


def sample_ensemble(spec: CodeEnsembleSpec, n: int, rng, max_tries: int = 10_000) -> TannerGraph:
    """Sample a Tanner graph from the configuration model.

    Variable degrees are drawn i.i.d.; check degrees are then drawn until the
    socket counts on both sides agree (the variable side is redrawn when no
    check sequence fits). Repeated (variable, check) edges are removed in
    pairs, which is the GF(2) reduction of the multigraph's parity checks.
    """
    vdegs, vprobs = spec.variable_distribution()
    cdegs, cprobs = spec.check_distribution()
    if not np.any(vdegs[vprobs > 0] > 0):
        raise ValueError("degenerate ensemble: all variable degrees are 0")
    g = math.gcd(*[int(d) for d in cdegs[cprobs > 0]])
    mean_c = float(cdegs @ cprobs)
    vsupport = vdegs[vprobs > 0]
    if len(vsupport) == 1 and (int(vsupport[0]) * n) % g:
        raise ValueError(f"no integer edge assignment for {spec.describe()} at n={n}")
    for _ in range(max_tries):
        dv = _degree_sequence(rng, vdegs, vprobs, n)
        E = int(dv.sum())
        if E == 0 or E % g:
            continue
        dc = _match_check_degrees(rng, cdegs, cprobs, E, mean_c)
        if dc is None:
            continue
        return _configuration_model(rng, dv, dc)
    raise ValueError(f"could not reconcile edge counts for {spec.describe()} at n={n}")


def _match_check_degrees(rng, cdegs, cprobs, E, mean_c):
    if len(cdegs[cprobs > 0]) == 1:
        d = int(cdegs[cprobs > 0][0])
        return np.full(E // d, d, dtype=int) if E % d == 0 else None
    m = max(1, int(round(E / mean_c)))
    for _ in range(200):
        dc = _degree_sequence(rng, cdegs, cprobs, m)
        if int(dc.sum()) == E:
            return dc
    return None


def _configuration_model(rng, dv, dc) -> TannerGraph:
    vsock = np.repeat(np.arange(len(dv)), dv)
    csock = np.repeat(np.arange(len(dc)), dc)
    perm = rng.permutation(len(csock))
    counts: dict[tuple[int, int], int] = {}
    for v, c in zip(vsock, csock[perm]):
        key = (int(v), int(c))
        counts[key] = counts.get(key, 0) + 1
    c2v: list[list[int]] = [[] for _ in range(len(dc))]
    removed = []
    for (v, c), k in sorted(counts.items()):
        if k % 2:
            c2v[c].append(v)
        if k > 1:
            removed.append((v, c))
    return _from_check_lists(len(dv), c2v, removed)


# ---------------------------------------------------------------- builtin codes

def ring_code(n: int) -> TannerGraph:
    """Cycle code of an ``n``-cycle: check ``c`` joins variables ``c`` and ``c+1``."""
    return from_check_lists(n, [(c, (c + 1) % n) for c in range(n)])


def circulant_cycle_code(m: int, offsets: Sequence[int] = (1, 2)) -> TannerGraph:
    """Cycle code of the circulant graph ``C_m(offsets)``.

    Checks are the ``m`` ring vertices; each variable is a ring edge
    ``{c, c + offset}``, so every variable has degree 2. Variables are numbered
    ``offset_index * m + c``.
    """
    edges = [(c, (c + s) % m) for s in offsets for c in range(m)]
    c2v: list[list[int]] = [[] for _ in range(m)]
    for v, (a, b) in enumerate(edges):
        c2v[a].append(v)
        c2v[b].append(v)
    return from_check_lists(len(edges), c2v)


def path_code(n_checks: int) -> TannerGraph:
    """Chain ``x_0 - c_0 - x_1 - c_1 - ...``: the repetition code on ``n_checks + 1`` bits."""
    return from_check_lists(n_checks + 1, [(c, c + 1) for c in range(n_checks)])


def single_parity_check(n: int) -> TannerGraph:
    return from_check_lists(n, [tuple(range(n))])


def _regular_benchmark(seed: int = 2008) -> TannerGraph:
    from .channel import make_rng

    return sample_ensemble(CodeEnsembleSpec.regular(3, 6), 30, make_rng(seed, "builtin:reg36"))


def _poisson_benchmark(seed: int = 2008) -> TannerGraph:
    from .channel import make_rng

    return sample_ensemble(CodeEnsembleSpec.poisson(2.0), 24, make_rng(seed, "builtin:poisson24"))


BUILTINS = {
    "spc3": lambda: single_parity_check(3),
    "rep3": lambda: path_code(2),
    "path2": lambda: path_code(2),
    "ring10": lambda: ring_code(10),
    "ring30": lambda: circulant_cycle_code(15, (1, 2)),
    "reg36": _regular_benchmark,
    "poisson24": _poisson_benchmark,
}


def builtin_code(name: str) -> TannerGraph:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin code {name!r}; choose from {sorted(BUILTINS)}") from None


# ---------------------------------------------------------------- file formats

def write_alist(G: TannerGraph, path) -> None:
    vdeg, cdeg = G.variable_degrees(), G.check_degrees()
    lines = [f"{G.n} {G.m}", f"{G.dl_max} {G.dr_max}",
             " ".join(map(str, vdeg)), " ".join(map(str, cdeg))]
    for cs in G.var_to_checks:
        row = [c + 1 for c in cs] + [0] * (G.dl_max - len(cs))
        lines.append(" ".join(map(str, row)))
    for vs in G.check_to_vars:
        row = [v + 1 for v in vs] + [0] * (G.dr_max - len(vs))
        lines.append(" ".join(map(str, row)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path) -> TannerGraph:
    tokens = Path(path).read_text().split()
    it = iter(int(t) for t in tokens)
    try:
        n, m = next(it), next(it)
        dl_max, dr_max = next(it), next(it)
        vdeg = [next(it) for _ in range(n)]
        cdeg = [next(it) for _ in range(m)]
        var_lists = []
        for v in range(n):
            row = [next(it) for _ in range(dl_max)]
            var_lists.append([c - 1 for c in row if c > 0])
        check_lists = []
        for c in range(m):
            row = [next(it) for _ in range(dr_max)]
            check_lists.append([v - 1 for v in row if v > 0])
    except StopIteration:
        raise ValueError(f"{path}: truncated alist file") from None
    for v, cs in enumerate(var_lists):
        if len(cs) != vdeg[v]:
            raise ValueError(f"{path}: variable {v} degree mismatch")
    for c, vs in enumerate(check_lists):
        if len(vs) != cdeg[c]:
            raise ValueError(f"{path}: check {c} degree mismatch")
    G = from_check_lists(n, check_lists)
    if [sorted(cs) for cs in var_lists] != [list(cs) for cs in G.var_to_checks]:
        raise ValueError(f"{path}: variable and check sections disagree")
    return G


def write_checklist(G: TannerGraph, path) -> None:
    lines = [f"{G.n} {G.m}"] + [" ".join(map(str, vs)) or "-" for vs in G.check_to_vars]
    Path(path).write_text("\n".join(lines) + "\n")


def read_checklist(path) -> TannerGraph:
    """Read the minimal text format: ``n m`` header then one check per line.

    Indices are 0-based; ``#`` starts a comment and a lone ``-`` is an empty check.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty file")
    n, m = (int(t) for t in lines[0].split())
    body = lines[1:1 + m]
    if len(body) < m:
        raise ValueError(f"{path}: expected {m} check lines, found {len(body)}")
    checks = [[] if ln == "-" else [int(t) for t in ln.split()] for ln in body]
    return from_check_lists(n, checks)


def load_code(source: str) -> TannerGraph:
    """Resolve ``builtin:<name>``, ``*.alist`` or a check-list text file."""
    if source.startswith("builtin:"):
        return builtin_code(source.split(":", 1)[1])
    if source.endswith(".alist"):
        return read_alist(source)
    return read_checklist(source)
