"""Batch front end: config parsing, subcommand dispatch and file output.

Run configs are INI files with one ``[measure.N]`` and ``[cost.N]`` section
per population plus ``[grid]`` and optional ``[run]`` sections, e.g.::

    [measure.1]
    file = first.txt        # or image = density.pgm

    [cost.1]
    kind = power            # or bilinear (matrix = a b; c d)
    p = 2
    lambda = 0.5

    [grid]
    lower = 0 0
    upper = 1 1
    resolution = 50

    [run]
    localize = minkowski    # minkowski | candidate | none
    output = out/run1       # prefix for emitted files

Exit codes: 0 success, 1 input error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .dual import maximize
from .gaussian import GaussianSpec, barycenter_gaussian
from .localization import candidate_support, minkowski_support
from .lp_barycenter import multimarginal_oracle, refine, solve_barycenter
from .measures import CostSpec, DiscreteMeasure, Grid, SolverError, ot_cost, quantize
from .reconstruction import active_set, recover

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2


class ConfigError(ValueError):
    pass


def _floats(section, key, text):
    try:
        return [float(v) for v in text.split()]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {text!r}") from None


def _numbered(cp, prefix):
    names = sorted(
        (s for s in cp.sections() if s.startswith(prefix + ".")),
        key=lambda s: int(s.split(".", 1)[1]),
    )
    for s in names:
        try:
            int(s.split(".", 1)[1])
        except ValueError:
            raise ConfigError(f"[{s}]: section index must be an integer") from None
    return names


class RunConfig:
    """Parsed run description: measures, costs, grid, run options."""

    def __init__(self, path):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        self.base = Path(path).resolve().parent
        self.grid = self._parse_grid(cp)
        self.measures = []
        self.raw_measures = []
        for sec in _numbered(cp, "measure"):
            mu = self._parse_measure(cp, sec)
            self.raw_measures.append(mu)
            self.measures.append(mu.normalize())
        self.costs = []
        self.lambdas = []
        for sec in _numbered(cp, "cost"):
            spec, lam = self._parse_cost(cp, sec)
            self.costs.append(spec)
            self.lambdas.append(lam)
        if len(self.measures) != len(self.costs):
            raise ConfigError("need exactly one [cost.N] section per [measure.N] section")
        run = cp["run"] if cp.has_section("run") else {}
        self.localize = run.get("localize", "none").strip()
        if self.localize not in ("none", "minkowski", "candidate"):
            raise ConfigError(f"[run] localize: unknown mode {self.localize!r}")
        self.refine_factor = int(run.get("refine", "0"))
        out = run.get("output", "").strip()
        self.output = str(self.base / out) if out else ""
        self.epsilon = float(run.get("epsilon", "1e-5"))
        self.budget = int(float(run.get("budget", "1000000")))

    def _parse_grid(self, cp):
        if not cp.has_section("grid"):
            raise ConfigError("[grid]: section is required")
        sec = cp["grid"]
        for key in ("lower", "upper", "resolution"):
            if key not in sec:
                raise ConfigError(f"[grid] {key}: missing")
        lower = _floats("grid", "lower", sec["lower"])
        upper = _floats("grid", "upper", sec["upper"])
        res = [int(v) for v in sec["resolution"].split()]
        if len(res) == 1:
            res = res * len(lower)
        try:
            return Grid(lower, upper, res)
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from None

    def _parse_measure(self, cp, sec):
        entries = cp[sec]
        if "file" in entries:
            return fileio.load_measure(self.base / entries["file"])
        if "image" in entries:
            img = fileio.load_pgm(self.base / entries["image"])
            if img.shape != self.grid.shape:
                raise ConfigError(
                    f"[{sec}] image: shape {img.shape} does not match grid {self.grid.shape}"
                )
            return quantize(img, self.grid)
        raise ConfigError(f"[{sec}]: needs either 'file' or 'image'")

    def _parse_cost(self, cp, sec):
        entries = cp[sec]
        kind = entries.get("kind", "power").strip()
        lam = float(entries.get("lambda", "1"))
        half = entries.get("half", "false").strip().lower() in ("1", "true", "yes")
        try:
            if kind == "power":
                return CostSpec(kind="power", p=float(entries.get("p", "2")), lam=lam, half=half), lam
            if kind == "bilinear":
                if "matrix" not in entries:
                    raise ConfigError(f"[{sec}] matrix: missing for bilinear cost")
                rows = [_floats(sec, "matrix", r) for r in entries["matrix"].split(";")]
                return CostSpec(kind="bilinear", lam=lam, matrix=np.array(rows)), lam
        except ValueError as exc:
            raise ConfigError(f"[{sec}]: {exc}") from None
        raise ConfigError(f"[{sec}] kind: unknown cost kind {kind!r}")

    def zpoints(self, seed: int):
        grid = self.grid
        if self.localize == "minkowski":
            est = minkowski_support([m.points for m in self.measures], self.lambdas, grid)
        elif self.localize == "candidate":
            est = candidate_support(self.costs, [m.points for m in self.measures], grid,
                                    sample_budget=self.budget, seed=seed)
        else:
            return grid.centers(), None
        return est.points, est


def _emit(prefix, grid, nu, value):
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    fileio.save_measure(nu, f"{prefix}.measure.txt")
    if grid.d == 2:
        masses = fileio.measure_to_grid(nu, grid)
        fileio.save_density_csv(f"{prefix}.density.csv", grid, masses)
        fileio.save_pgm(f"{prefix}.pgm", masses)
    with open(f"{prefix}.value.txt", "w") as fh:
        fh.write(f"{value!r}\n")


def _cmd_lp_solve(cfg: RunConfig, args) -> int:
    zpts, _ = cfg.zpoints(args.seed)
    result = solve_barycenter(cfg.measures, cfg.costs, zpts, verify=False)
    if len(cfg.measures) == 1:
        print(f"ot_cost={result.value!r}")
    else:
        print(f"value={result.value!r}")
    if cfg.refine_factor > 1:
        coarse = dataclasses.replace(result, grid=cfg.grid)
        result = refine(cfg.measures, cfg.costs, coarse, cfg.refine_factor)
        print(f"refined_value={result.value!r}")
    if cfg.output:
        grid = cfg.grid if cfg.refine_factor <= 1 else cfg.grid.refine(cfg.refine_factor)
        _emit(cfg.output, grid, result.nu, result.value)
    return EXIT_OK


def _cmd_dual_solve(cfg: RunConfig, args) -> int:
    for spec in cfg.costs:
        if spec.kind != "power" or spec.p != 2:
            raise ConfigError("dual-solve supports quadratic costs only")
    zpts, _ = cfg.zpoints(args.seed)
    log: list = []
    state = maximize(
        cfg.raw_measures,
        cfg.lambdas,
        zpts,
        memory=args.memory,
        max_iters=args.max_iters,
        tol=args.tol,
        log=log,
    )
    active = active_set(state, args.epsilon if args.epsilon is not None else cfg.epsilon)
    _, result, residual = recover(active, cfg.raw_measures, state)
    print(f"phi={state.value!r} status={state.status} iterations={state.iterations}")
    print(f"max_quadratic_term={residual!r}")
    if cfg.output:
        _emit(cfg.output, cfg.grid, result.nu, result.value)
        fileio.save_iteration_log(f"{cfg.output}.iters.csv", log)
    return EXIT_SOLVER if state.status == "iteration_limit" else EXIT_OK


def _cmd_localize(cfg: RunConfig, args) -> int:
    mode = cfg.localize if cfg.localize != "none" else "candidate"
    if mode == "minkowski":
        est = minkowski_support([m.points for m in cfg.measures], cfg.lambdas, cfg.grid)
    else:
        est = candidate_support(cfg.costs, [m.points for m in cfg.measures], cfg.grid,
                                sample_budget=cfg.budget, seed=args.seed)
    for idx in est.indices:
        print(int(idx))
    print(f"# mode={est.mode} count={len(est)}", file=sys.stderr)
    return EXIT_OK


def _cmd_interpolate(cfg: RunConfig, args) -> int:
    if len(cfg.measures) != 2:
        raise ConfigError("interpolate needs exactly two measures")
    zpts, _ = cfg.zpoints(args.seed)
    for t in args.weights:
        if not 0.0 <= t <= 1.0:
            raise ConfigError(f"interpolation weight {t} outside [0, 1]")
        costs = [
            dataclasses.replace(cfg.costs[0], lam=(1.0 - t)),
            dataclasses.replace(cfg.costs[1], lam=t),
        ]
        result = solve_barycenter(cfg.measures, costs, zpts, verify=False)
        print(f"weight={t} value={result.value!r}")
        if cfg.output:
            _emit(f"{cfg.output}.w{t}", cfg.grid, result.nu, result.value)
    return EXIT_OK


def _cmd_oracle_check(cfg: RunConfig, args) -> int:
    zpts, _ = cfg.zpoints(args.seed)
    lp = solve_barycenter(cfg.measures, cfg.costs, zpts, verify=False)
    mm = multimarginal_oracle(cfg.measures, cfg.costs, zpts)
    print(f"lp_value={lp.value!r}")
    print(f"multimarginal_value={mm!r}")
    quadratic = all(s.kind == "power" and s.p == 2 for s in cfg.costs)
    if quadratic:
        half_costs = [dataclasses.replace(s, half=True) for s in cfg.costs]
        lp_half = solve_barycenter(cfg.measures, half_costs, zpts, verify=False)
        state = maximize(cfg.measures, cfg.lambdas, zpts,
                         memory=args.memory, max_iters=args.max_iters, tol=args.tol)
        print(f"dual_value={state.value!r}")
        gap = abs(lp_half.value - state.value) / max(1e-300, abs(lp_half.value))
        print(f"duality_gap_rel={gap:.3e}")
    gap_mm = abs(lp.value - mm) / max(1e-300, abs(lp.value))
    print(f"multimarginal_gap_rel={gap_mm:.3e}")
    return EXIT_OK


def _cmd_gaussian_oracle(args) -> int:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if not cp.read(args.config):
        raise ConfigError(f"cannot read config file {args.config}")
    specs = []
    for sec in _numbered(cp, "gaussian"):
        entries = cp[sec]
        if "mean" not in entries:
            raise ConfigError(f"[{sec}] mean: missing")
        mean = _floats(sec, "mean", entries["mean"])
        if "sigma" in entries:
            cov = float(entries["sigma"]) ** 2 * np.eye(len(mean))
        elif "cov" in entries:
            cov = np.array([_floats(sec, "cov", r) for r in entries["cov"].split(";")])
        else:
            raise ConfigError(f"[{sec}]: needs 'sigma' or 'cov'")
        specs.append(GaussianSpec(mean, cov, float(entries.get("weight", "1"))))
    if not specs:
        raise ConfigError("no [gaussian.N] sections found")
    out = barycenter_gaussian(specs)
    print("mean " + " ".join(repr(float(v)) for v in out.mean))
    for row in out.cov:
        print("cov " + " ".join(repr(float(v)) for v in row))
    return EXIT_OK


def _build_parser():
    ap = argparse.ArgumentParser(prog="otbary", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0, help="seed for any sampled stage")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, **extra):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.set_defaults(func=func)
        return p

    add("lp-solve", _cmd_lp_solve)
    p = add("dual-solve", _cmd_dual_solve)
    p.add_argument("--memory", type=int, default=17)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--localize", choices=["minkowski", "none"], default=None)
    add("localize", _cmd_localize)
    p = add("interpolate", _cmd_interpolate)
    p.add_argument("--weights", type=float, nargs="+", required=True)
    p = add("oracle-check", _cmd_oracle_check)
    p.add_argument("--memory", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-13)
    p = sub.add_parser("gaussian-oracle")
    p.add_argument("config")
    p.set_defaults(func=_cmd_gaussian_oracle, needs_run_config=False)
    return ap


def run(argv) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.func is _cmd_gaussian_oracle:
            return args.func(args)
        cfg = RunConfig(args.config)
        if getattr(args, "localize", None):
            cfg.localize = args.localize
        return args.func(cfg, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
