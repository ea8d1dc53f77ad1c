"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 solver failure (no usable incumbent).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (fit, load_config, load_timeseries_csv, parse_ensemble, reg_from_mapping, run_experiment,
                    solver_from_mapping)
from .datagen import GenConfig, NoiseSpec, draw_stationary, panel_series, simulate, write_series_csv
from .errors import ConfigError, DataError, DbnError, GenerationError
from .graph import read_graph, write_graph
from .metrics import best_delta_sweep, evaluate
from .objective import build_instance
from .oracle import exhaustive_min

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--time-limit", type=float)
    g.add_argument("--gap-tolerance", type=float)
    g.add_argument("--cut-strategy", choices=["FIRST_CYCLE", "SHORTEST_CYCLE", "ALL_CYCLES"])
    g.add_argument("--node-selection", choices=["BEST_BOUND", "DFS_DIVE"])
    g.add_argument("--node-bound", choices=["auto", "column_exact", "continuous"])
    g.add_argument("--node-limit", type=int)
    g.add_argument("--parallel-nodes", type=int)


def _reg_args(p):
    g = p.add_argument_group("regularization")
    g.add_argument("--reg", dest="variant", choices=["L1", "L2_SQUARED", "L2_LITERAL_ABS"])
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--eta", type=float)


_SOLVER_FLAGS = ("time_limit", "gap_tolerance", "cut_strategy", "node_selection", "node_bound", "node_limit",
                 "parallel_nodes")


def _solver_overrides(args) -> dict:
    return {k: str(getattr(args, k)) for k in _SOLVER_FLAGS if getattr(args, k, None) is not None}


def _reg(args):
    if args.variant is None:
        if args.lam is not None or args.eta is not None:
            raise ConfigError("--lambda/--eta need --reg")
        return None
    vals = {"variant": args.variant, "lambda": args.lam or 0.0, "eta": args.eta or 0.0}
    return reg_from_mapping({k: str(v) for k, v in vals.items()})


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dbnmip", description="Exact DBN structure learning by branch-and-bound with lazy cycle cuts.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="draw a ground truth and simulate a CSV panel")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--ensemble", default="ER1-1", help="e.g. ER3-1, SF2-1, ER2-1-1")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", default="gaussian", choices=["gaussian", "uniform", "exponential"])
    g.add_argument("--noise-scale", type=float, default=1.0)
    g.add_argument("--decay", type=float, default=1.5)
    g.add_argument("--out", required=True, help="output directory (series.csv, truth.graph)")

    s = sub.add_parser("solve", help="learn a graph from a CSV panel")
    s.add_argument("csv")
    s.add_argument("--p", type=int, default=1)
    s.add_argument("--grid", help="lambda:eta pairs, e.g. 5:1,7:1; keeps the smallest final gap")
    s.add_argument("--out", help="output directory (graph, report.txt); default prints the report")
    _solver_args(s)
    _reg_args(s)

    b = sub.add_parser("benchmark", help="run an experiment from an INI config")
    b.add_argument("config", nargs="?")
    b.add_argument("--ensemble")
    b.add_argument("--d-list")
    b.add_argument("--n-list")
    b.add_argument("--seeds")
    b.add_argument("--output-dir")
    b.add_argument("--workers", type=int)
    _solver_args(b)
    _reg_args(b)

    c = sub.add_parser("score", help="compare an estimated graph with a truth")
    c.add_argument("est")
    c.add_argument("truth")
    c.add_argument("--csv", help="panel for the fit-difference metric")
    c.add_argument("--delta", type=float, help="fixed threshold; default sweeps the grid")
    c.add_argument("--literal-shd", action="store_true")

    o = sub.add_parser("oracle", help="exhaustive optimum of a small CSV panel (debugging)")
    o.add_argument("csv")
    o.add_argument("--p", type=int, default=1)
    o.add_argument("--max-d", type=int, default=5)
    o.add_argument("--out")
    _reg_args(o)
    return ap


def _cmd_generate(args) -> int:
    model, intra, inter, p = parse_ensemble(args.ensemble)
    try:
        cfg = GenConfig(d=args.d, p=p, intra_model=model, intra_edge_ratio=intra,
                        inter_edge_ratio=inter if p else 1.0, eta=args.decay, seed=args.seed,
                        n_samples=args.n, noise=NoiseSpec(args.noise, args.noise_scale))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg, truth = draw_stationary(cfg)
    panel = simulate(truth, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_series_csv(panel_series(panel), panel.variable_names, out / "series.csv")
    write_graph(truth, out / "truth.graph")
    print(f"wrote {out / 'series.csv'} and {out / 'truth.graph'} (attempt {cfg.attempt})")
    return EXIT_OK


def _parse_grid(text):
    try:
        return [tuple(float(v) for v in pair.split(":")) for pair in text.split(",") if pair.strip()]
    except ValueError:
        raise ConfigError(f"bad --grid {text!r}; expected lambda:eta pairs") from None


def _cmd_solve(args) -> int:
    panel = load_timeseries_csv(args.csv, args.p)
    solver_cfg = solver_from_mapping(_solver_overrides(args))
    grid = _parse_grid(args.grid) if args.grid else None
    if grid and any(len(g) != 2 for g in grid):
        raise ConfigError("each --grid entry needs lambda:eta")
    g, rep = fit(panel, solver_cfg, _reg(args), grid)
    text = rep.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        if g is not None:
            write_graph(g, out / "estimate.graph")
        print(f"status={rep.status} gap={rep.mip_gap:.6g} -> {out}")
    else:
        print(text, end="")
    return EXIT_OK if g is not None else EXIT_SOLVER


def _cmd_benchmark(args) -> int:
    ov = {f"solver.{k}": v for k, v in _solver_overrides(args).items()}
    for flag, key in (("ensemble", "ensemble"), ("d_list", "d_list"), ("n_list", "n_list"), ("seeds", "seeds"),
                      ("output_dir", "output_dir"), ("workers", "workers")):
        if getattr(args, flag) is not None:
            ov[f"experiment.{key}"] = str(getattr(args, flag))
    if args.variant is not None:
        ov["reg.variant"] = args.variant
    if args.lam is not None:
        ov["reg.lambda"] = str(args.lam)
    if args.eta is not None:
        ov["reg.eta"] = str(args.eta)
    cfg = load_config(args.config, ov)

    def progress(row):
        print(f"d={row['d']} n={row['n']} seed={row['seed']} {row['status']} f1={row['f1']} gap={row['mip_gap']}",
              flush=True)

    res = run_experiment(cfg, progress)
    if res.up_to_date:
        print("up to date")
    print(f"{len(res.rows)} rows for config {cfg.config_hash()} in {cfg.output_dir}")
    return EXIT_OK


def _cmd_score(args) -> int:
    est, truth = read_graph(args.est), read_graph(args.truth)
    panel = load_timeseries_csv(args.csv, truth.p) if args.csv else None
    if args.delta is None:
        _, m = best_delta_sweep(est, truth, panel, literal_shd=args.literal_shd)
    else:
        m = evaluate(est, truth, panel, args.delta, args.literal_shd)
    for key in ("shd", "precision", "recall", "f1", "g_score", "sigma_p", "frobenius", "delta_used"):
        print(f"{key}={getattr(m, key)!r}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    panel = load_timeseries_csv(args.csv, args.p)
    from .bench import default_reg

    reg = _reg(args) or default_reg(panel.n)
    res = exhaustive_min(build_instance(panel, reg), args.max_d)
    print(f"objective={res.best_objective!r}")
    print(f"supports_evaluated={res.supports_evaluated}")
    if args.out:
        write_graph(res.best_graph, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    handler = {"generate": _cmd_generate, "solve": _cmd_solve, "benchmark": _cmd_benchmark,
               "score": _cmd_score, "oracle": _cmd_oracle}[args.cmd]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GenerationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DbnError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
