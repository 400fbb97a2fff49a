"""Command-line front end.

Every subcommand needs ``--seed``. Options may also come from an INI file
(``--config``) with one section per subcommand plus an optional
``[common]`` section; command-line flags win. Reports are written to
``--out`` (default: ``$LDPCLAB_OUT`` or ``./ldpclab-out``).

Exit codes: 0 success, 2 configuration error, 3 capacity error,
4 failed ``--assert`` check.
"""
from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bp import de_gexit
from .channel import NoiseSpec, make_rng, sample_llr_batch, sinh_moment, sinh_moment_mc
from .cluster import diagnose_conventions, enumerate_clusters, t1_t2_diagnostics
from .graph import CodeEnsembleSpec, build_graph, load_code, rank_gf2
from .inference import CapacityError, check_derivative_identities, check_duality

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_ASSERT = 0, 2, 3, 4
OUT_ENV = "LDPCLAB_OUT"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- parsing helpers

def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(",", " ").split()]


def parse_ensemble(text: str) -> CodeEnsembleSpec:
    """``poisson:<mean>[,<check degree>]`` or ``regular:<dl>,<dr>``."""
    kind, _, args = text.partition(":")
    try:
        vals = [float(a) for a in args.split(",") if a]
        if kind == "poisson" and len(vals) in (1, 2):
            return CodeEnsembleSpec.poisson(vals[0], int(vals[1]) if len(vals) == 2 else None)
        if kind == "regular" and len(vals) == 2:
            return CodeEnsembleSpec.regular(int(vals[0]), int(vals[1]))
    except ValueError as e:
        raise ConfigError(f"bad ensemble {text!r}: {e}") from None
    raise ConfigError(f"bad ensemble {text!r}; use poisson:<mean> or regular:<dl>,<dr>")


# field name -> (converter, default)
FIELDS = {
    "verify-duality": {"code": (str, "random"), "trials": (int, 100), "eps2": (_floats, [0.1, 0.5, 1.0]),
                       "max_n": (int, 16)},
    "verify-derivatives": {"code": (str, "random"), "trials": (int, 100), "eps2": (_floats, [0.5]),
                           "max_n": (int, 14)},
    "decay": {"code": (str, "builtin:ring30"), "eps2": (_floats, [0.1]), "samples": (int, 10_000),
              "pairs": (str, "all"), "sampler": (str, "importance"), "perfect": (_ints, [])},
    "gexit-compare": {"ensemble": (str, "poisson:2"), "n": (int, 24), "eps2": (_floats, [0.1]),
                      "graphs": (int, 2000), "noise_samples": (int, 500), "iterations": (int, 20),
                      "population": (int, 100_000)},
    "gexit-fd": {"code": (str, "builtin:spc3"), "eps2": (_floats, [0.5]), "samples": (int, 1_000_000),
                 "delta": (float, 0.01)},
    "de-curve": {"ensemble": (str, "poisson:2"), "eps2": (_floats, [0.1, 0.2, 0.3, 0.5, 0.7, 1.0]),
                 "iterations": (int, 20), "population": (int, 100_000)},
    "boundary-check": {"code": (str, "builtin:ring30"), "root": (int, 0), "depths": (_ints, [2, 4, 6]),
                       "eps2": (_floats, [0.05]), "samples": (int, 2000)},
    "cluster-check": {"code": (str, "builtin:path2"), "i": (int, 0), "j": (int, 2), "draws": (int, 100),
                      "eps2": (_floats, [0.5]), "t_samples": (int, 2000)},
    "sinh-moment": {"eps2": (_floats, [0.1, 0.5, 1.0]), "s": (float, 1 / 16), "samples": (int, 100_000)},
}
COMMON = {"seed": (int, None), "workers": (int, 1), "out": (str, None)}


def _read_config(path: str, command: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"{path}: {e}") from None
    values = {}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        allowed = {**COMMON, **FIELDS[command]} if section == command else COMMON
        for key, raw in cp.items(section):
            name = key.replace("-", "_")
            if name not in allowed:
                raise ConfigError(f"{path}: [{section}] unknown key {key!r}")
            conv = allowed[name][0]
            try:
                values[name] = conv(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: [{section}] {key} = {raw!r}: {e}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldpclab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fields in FIELDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
        sp.add_argument("--skip-infeasible", action="store_true")
        sp.add_argument("--assert", dest="assert_", action="store_true")
        for field in fields:
            sp.add_argument("--" + field.replace("_", "-"), dest=field)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; check the seed and resolve paths."""
    fields = {**COMMON, **FIELDS[args.command]}
    cfg = {k: v[1] for k, v in fields.items()}
    if args.config:
        cfg.update(_read_config(args.config, args.command))
    for name, (conv, _) in fields.items():
        raw = getattr(args, name, None)
        if raw is not None:
            try:
                cfg[name] = conv(raw)
            except ValueError as e:
                raise ConfigError(f"--{name.replace('_', '-')} {raw!r}: {e}") from None
    if cfg["seed"] is None:
        raise ConfigError("--seed is required")
    out = cfg["out"] or os.environ.get(OUT_ENV) or "ldpclab-out"
    cfg["out"] = str(Path(out).resolve())
    cfg["command"] = args.command
    cfg["skip_infeasible"] = args.skip_infeasible
    cfg["assert"] = args.assert_
    return cfg


# ---------------------------------------------------------------- output

class Run:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.failures: list[str] = []
        self.t0 = time.perf_counter()

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)

    def check(self, ok: bool, what: str) -> None:
        print(f"{'PASS' if ok else 'FAIL'} {what}")
        if not ok:
            self.failures.append(what)

    def manifest(self) -> ex.RunManifest:
        keep = {k: v for k, v in self.cfg.items() if k not in ("out", "workers")}
        return ex.RunManifest(self.cfg["seed"], self.cfg["workers"], keep)

    def finish(self) -> int:
        m = self.manifest()
        m.wall_clock = round(time.perf_counter() - self.t0, 3)
        self.write("manifest.json", ex.dumps(m.__dict__))
        if self.cfg["assert"] and self.failures:
            return EXIT_ASSERT
        return EXIT_OK


def replay_argv(manifest: dict, out: str | None = None) -> list[str]:
    """Command line that regenerates the reports recorded in ``manifest``."""
    cfg = dict(manifest["config"])
    command = cfg.pop("command")
    argv = [command, "--seed", str(manifest["seed"]), "--workers", str(manifest["workers"])]
    if cfg.pop("skip_infeasible", False):
        argv.append("--skip-infeasible")
    if cfg.pop("assert", False):
        argv.append("--assert")
    cfg.pop("seed", None)
    for name, value in cfg.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(repr(v) for v in value)
            if not value:
                continue
        argv += ["--" + name.replace("_", "-"), str(value)]
    if out is not None:
        argv += ["--out", out]
    return argv


def _code(cfg) -> tuple:
    try:
        return load_code(cfg["code"]), cfg["code"]
    except (OSError, ValueError) as e:
        raise ConfigError(f"code {cfg['code']!r}: {e}") from None


def _random_code(rng, max_n: int):
    n = int(rng.integers(3, max_n + 1))
    m = int(rng.integers(1, max(2, n // 2 + 2)))
    H = (rng.random((m, n)) < rng.uniform(0.2, 0.6)).astype(np.uint8)
    return build_graph(H)


# ---------------------------------------------------------------- subcommands

def cmd_verify_duality(run: Run) -> None:
    cfg = run.cfg
    rng = make_rng(cfg["seed"], "verify-duality")
    rows = []
    for t in range(cfg["trials"]):
        G = _random_code(rng, cfg["max_n"]) if cfg["code"] == "random" else _code(cfg)[0]
        for e2 in cfg["eps2"]:
            L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, e2), 1, rng)
            rows.append((t, G.n, G.m, rank_gf2(G), e2, check_duality(G, L[0])))
    run.write("duality.csv", ex._csv(("trial", "n", "m", "rank", "eps2", "residual"), rows))
    worst = max(r[-1] for r in rows)
    print(f"max duality residual {worst:.3e} over {len(rows)} instances")
    run.check(worst < 1e-10, "duality residual < 1e-10")


def cmd_verify_derivatives(run: Run) -> None:
    cfg = run.cfg
    rng = make_rng(cfg["seed"], "verify-derivatives")
    rows, skipped = [], 0
    while len(rows) < cfg["trials"]:
        G = _random_code(rng, cfg["max_n"]) if cfg["code"] == "random" else _code(cfg)[0]
        if G.n < 2:
            continue
        e2 = cfg["eps2"][len(rows) % len(cfg["eps2"])]
        L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, e2), 1, rng)
        i, j = (int(x) for x in rng.choice(G.n, 2, replace=False))
        chk = check_derivative_identities(G, L[0], i, j)
        if chk.near_pole:
            skipped += 1
            continue
        rows.append((len(rows), G.n, i, j, e2, chk.residual1, chk.residual2))
    run.write("derivatives.csv", ex._csv(("trial", "n", "i", "j", "eps2", "residual1", "residual2"), rows))
    r1 = max(r[5] for r in rows)
    r2 = max(r[6] for r in rows)
    print(f"max residuals {r1:.3e} {r2:.3e} ({skipped} near-pole draws skipped)")
    run.check(max(r1, r2) < 1e-8, "derivative residuals < 1e-8")


def cmd_decay(run: Run) -> None:
    cfg = run.cfg
    G, cid = _code(cfg)
    reports = []
    for e2 in cfg["eps2"]:
        noise = NoiseSpec.uniform(G.n, e2).with_perfect(cfg["perfect"])
        rep = ex.correlation_decay(G, noise, cfg["pairs"], cfg["samples"], cfg["seed"], cfg["workers"],
                                   cfg["sampler"], code_id=cid)
        tag = f"{e2:g}"
        run.write(f"decay_eps2_{tag}.csv", rep.to_csv())
        run.write(f"decay_eps2_{tag}.json", ex.dumps(rep.to_dict()))
        print(f"eps2={tag} status={rep.status} slope={rep.slope:.4g} ci=({rep.slope_ci[0]:.4g}, {rep.slope_ci[1]:.4g})")
        reports.append(rep)
        if rep.status == "ok":
            run.check(rep.slope_ci[1] < 0, f"eps2={tag}: negative slope beyond its interval")
    for a, b in zip(reports, reports[1:]):
        if a.status == b.status == "ok":
            lo, hi = sorted((a, b), key=lambda r: max(r.eps))
            run.check(hi.slope_ci[0] > lo.slope_ci[1], "steeper decay at lower noise, intervals disjoint")


def cmd_gexit_compare(run: Run) -> None:
    cfg = run.cfg
    spec = parse_ensemble(cfg["ensemble"])
    rows = []
    for e2 in cfg["eps2"]:
        rep = ex.gexit_compare(spec, cfg["n"], e2, cfg["graphs"], cfg["noise_samples"], cfg["iterations"],
                               cfg["population"], cfg["seed"], cfg["workers"])
        rows.append(rep)
        comb = math.hypot(rep.map_err, rep.de_err)
        print(f"eps2={e2:g} map={rep.map_gexit:.6g}+-{rep.map_err:.2g} de={rep.de_gexit:.6g}+-{rep.de_err:.2g}"
              f" skipped={rep.skipped}")
        run.check(abs(rep.map_gexit - rep.de_gexit) <= 3 * comb, f"eps2={e2:g}: MAP and DE within 3 sigma")
        run.check(rep.de_gexit < 0, f"eps2={e2:g}: DE value strictly negative")
    run.write("gexit.csv", "".join(r.to_csv() if k == 0 else r.to_csv().split("\n", 1)[1]
                                   for k, r in enumerate(rows)))
    run.write("gexit.json", ex.dumps([r.to_dict() for r in rows]))


def _is_repetition(G) -> bool:
    from .graph import codeword_basis

    B = codeword_basis(G.to_matrix())
    return B.shape[0] == 1 and bool(B.all())


def cmd_gexit_fd(run: Run) -> None:
    cfg = run.cfg
    G, cid = _code(cfg)
    rows = []
    for e2 in cfg["eps2"]:
        r = ex.gexit_fd_check(G, e2, cfg["samples"], cfg["seed"], cfg["delta"], cfg["workers"])
        if _is_repetition(G):
            r.oracle_fd, r.oracle_gexit = ex.repetition_oracle(G.n, e2)
        rows.append((e2, r.fd_value, r.fd_err, r.gexit_value, r.gexit_err, r.residual, r.stderr,
                     r.oracle_fd, r.oracle_gexit))
        print(f"eps2={e2:g} fd={r.fd_value:.6g} gexit={r.gexit_value:.6g} residual={r.residual:.3g}"
              f" ({r.within:.2f} sigma)")
        run.check(r.within < 3, f"eps2={e2:g}: finite difference within 3 sigma")
        if math.isfinite(r.oracle_fd):
            run.check(abs(r.fd_value - r.oracle_fd) < 1e-3 and abs(r.gexit_value - r.oracle_gexit) < 1e-3,
                      f"eps2={e2:g}: quadrature oracle within 1e-3")
    run.write("gexit_fd.csv", ex._csv(("eps2", "fd_value", "fd_err", "gexit_value", "gexit_err", "residual",
                                       "stderr", "oracle_fd", "oracle_gexit"), rows))


def cmd_de_curve(run: Run) -> None:
    cfg = run.cfg
    spec = parse_ensemble(cfg["ensemble"])
    rows = []
    for e2 in cfg["eps2"]:
        v, e = de_gexit(spec, math.sqrt(e2), cfg["iterations"], cfg["population"],
                        make_rng(cfg["seed"], ("de-curve", repr(e2))))
        rows.append((e2, v, e))
        print(f"eps2={e2:g} de_gexit={v:.6g} +- {e:.2g}")
    run.write("de_curve.csv", ex._csv(("eps2", "de_gexit", "de_err"), rows))


def cmd_boundary(run: Run) -> None:
    cfg = run.cfg
    G, _ = _code(cfg)
    for e2 in cfg["eps2"]:
        rep = ex.boundary_checks(G, cfg["root"], cfg["depths"], e2, cfg["samples"], cfg["seed"], cfg["workers"])
        run.write(f"boundary_eps2_{e2:g}.csv", rep.to_csv())
        run.write(f"boundary_eps2_{e2:g}.json", ex.dumps(rep.to_dict()))
        for g in rep.gaps:
            print(f"d={g.d} plus_full={g.plus_full_gap:.3e}+-{g.plus_full_err:.1e} plus_free={g.plus_free_gap:.3e}+-{g.plus_free_err:.1e}")
        run.check(rep.non_increasing(), f"eps2={e2:g}: gaps non-increasing within 3 sigma")
        for g in rep.gaps:
            if g.covers and g.empty_boundary:
                run.check(g.plus_full_gap == 0 and g.plus_free_gap == 0, f"d={g.d}: exact zero on the whole graph")


def cluster_harness(G, i: int, j: int, draws: int, eps2: float, t_samples: int, seed: int) -> dict:
    """Identity residuals under both conventions plus the T2 diagnostic, as one report."""
    rng = make_rng(seed, ("cluster-check", i, j, repr(eps2)))
    L, _ = sample_llr_batch(NoiseSpec.uniform(G.n, eps2), draws, rng)
    runs = []
    for t in range(draws):
        reps = diagnose_conventions(G, L[t], i, j)
        runs.append({conv: r.to_dict() for conv, r in reps.items()})
    worst = {conv: max(r[conv]["residual"] / max(1.0, abs(r[conv]["lhs"])) for r in runs)
             for conv in runs[0]} if runs else {}
    t2 = []
    for cl in enumerate_clusters(G, i, j):
        d = t1_t2_diagnostics(G, cl.checks, i, j, math.sqrt(eps2), samples=t_samples,
                              rng=make_rng(seed, ("t1t2", cl.checks)))
        t2.append({"checks": list(cl.checks), "t1_sq": d.t1_sq, "t1_sq_err": d.t1_sq_err,
                   "t2_sq": d.t2_sq, "t2_sq_err": d.t2_sq_err, "bound_ok": d.t2_bound_ok})
    literal_ok = worst.get("literal", math.inf) < 1e-8
    failing = [c for c, w in worst.items() if not w < 1e-8]
    verdict = ("literal reading holds" if literal_ok else
               f"literal reading fails; conventions failing: {failing}")
    return {"pair": [i, j], "eps2": eps2, "draws": draws, "max_scaled_residual": worst,
            "verdict": verdict, "literal_ok": literal_ok, "t2": t2, "runs": runs}


def cmd_cluster(run: Run) -> None:
    cfg = run.cfg
    G, _ = _code(cfg)
    for e2 in cfg["eps2"]:
        rep = cluster_harness(G, cfg["i"], cfg["j"], cfg["draws"], e2, cfg["t_samples"], cfg["seed"])
        run.write(f"cluster_eps2_{e2:g}.json", ex.dumps(rep))
        rows = [(conv, w) for conv, w in rep["max_scaled_residual"].items()]
        run.write(f"cluster_eps2_{e2:g}.csv", ex._csv(("convention", "max_scaled_residual"), rows))
        print(f"eps2={e2:g}: {rep['verdict']}; " + ", ".join(f"{c}: {w:.3e}" for c, w in rows))
        # a failing literal reading is still a definitive outcome: the dump names it
        run.check(True, f"eps2={e2:g}: cluster identity report written")
        run.check(all(t["bound_ok"] for t in rep["t2"]), f"eps2={e2:g}: T2^2 <= 1 + 3 se on every cluster")


def cmd_sinh(run: Run) -> None:
    cfg = run.cfg
    rows = []
    for e2 in cfg["eps2"]:
        eps = math.sqrt(e2)
        q = sinh_moment(eps, cfg["s"])
        mc, se = sinh_moment_mc(eps, cfg["s"], cfg["samples"], make_rng(cfg["seed"], ("sinh", repr(e2))))
        rows.append((e2, cfg["s"], q, mc, se))
        print(f"eps2={e2:g} quadrature={q:.10g} monte_carlo={mc:.6g}+-{se:.2g}")
        run.check(abs(q - mc) <= 3 * se + 1e-12, f"eps2={e2:g}: quadrature and Monte Carlo agree")
    run.write("sinh_moment.csv", ex._csv(("eps2", "s", "quadrature", "monte_carlo", "mc_err"), rows))


COMMANDS = {
    "verify-duality": cmd_verify_duality,
    "verify-derivatives": cmd_verify_derivatives,
    "decay": cmd_decay,
    "gexit-compare": cmd_gexit_compare,
    "gexit-fd": cmd_gexit_fd,
    "de-curve": cmd_de_curve,
    "boundary-check": cmd_boundary,
    "cluster-check": cmd_cluster,
    "sinh-moment": cmd_sinh,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    cfg = {}
    try:
        cfg = resolve(args)
        run = Run(cfg)
        COMMANDS[cfg["command"]](run)
        return run.finish()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as e:
        if cfg.get("skip_infeasible"):
            print(f"skipped infeasible instance: {e}", file=sys.stderr)
            return run.finish()
        print(f"capacity error: {e}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
