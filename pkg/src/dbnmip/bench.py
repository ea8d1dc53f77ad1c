"""Experiment harness: ensembles of synthetic cells, result files and plots.

A cell is one (d, n, seed) triple of an ensemble. Each cell draws a stationary
ground truth, simulates a panel, solves it under a time cap, and records the
best-threshold metrics as one row of ``rows.csv``. Rows are keyed by a hash of
every setting that affects their content, so rerunning a finished experiment
adds nothing. Wall times go to ``timings.csv`` instead, which keeps the rows
byte-identical between runs.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import GenConfig, NoiseSpec, TimeSeriesPanel, draw_stationary, lag_stack, read_series_csv, simulate
from .errors import ConfigError, DataError, DbnError
from .graph import DbnGraph
from .metrics import DEFAULT_DELTA_GRID, best_delta_sweep
from .objective import AUTO, L1, L2_SQUARED, RegMode, build_instance, scale_regularization
from .solver import CutStrategy, SolveReport, SolverConfig, solve

DEFAULT_SEEDS = tuple(range(10))
SMALL_SAMPLE = 500  # below this L1 is the default regularization
L1_BASE = RegMode(L1, 0.05, 0.05)
L2_BASE = RegMode(L2_SQUARED, 0.2, 0.03)
MAX_ATTEMPTS = 2000
METHOD = "miqp-bnb"

ROW_FIELDS = (
    "config_hash", "ensemble", "method", "d", "n", "seed", "attempt", "status", "error",
    "shd", "precision", "recall", "f1", "g_score", "sigma_p", "frobenius", "delta",
    "objective", "best_bound", "mip_gap", "cuts_added", "nodes", "lam", "eta",
)
METRICS = ("shd", "precision", "recall", "f1", "g_score", "sigma_p", "frobenius", "mip_gap", "cuts_added")
HIGHER_IS_BETTER = {"precision", "recall", "f1", "g_score"}
AGG_FIELDS = ("config_hash", "ensemble", "d", "n", "metric", "count", "mean", "worst")

_ENSEMBLE = re.compile(r"^(ER|SF)(\d+(?:\.\d+)?)((?:-\d+(?:\.\d+)?)*)$")


def parse_ensemble(name: str) -> tuple[str, float, tuple[float, ...], int]:
    """``ER3-1`` is ER intra ratio 3, one lag of ratio 1; ``ER2-1-1`` has two lags."""
    m = _ENSEMBLE.match(name.strip())
    if not m:
        raise ConfigError(f"bad ensemble name {name!r}; expected e.g. ER3-1 or SF2-1-1")
    inter = tuple(float(x) for x in m.group(3).split("-")[1:])
    return m.group(1), float(m.group(2)), inter, len(inter)


def default_reg(n: int) -> RegMode:
    """Starting coefficients: L1 for small samples, squared L2 otherwise, grown like sqrt(n)."""
    return scale_regularization(n, L1_BASE if n < SMALL_SAMPLE else L2_BASE)


@dataclass(frozen=True)
class ExperimentConfig:
    ensemble_name: str
    d_list: tuple[int, ...]
    n_list: tuple[int, ...]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    solver: SolverConfig = field(default_factory=SolverConfig)
    reg: RegMode | None = None  # None: default_reg(n) per cell
    scale_reg: bool = True  # grow a given reg like sqrt(n)
    output_dir: str = "bench_out"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    decay: float = 1.5
    workers: int = 1
    delta_grid: tuple[float, ...] = DEFAULT_DELTA_GRID

    def __post_init__(self):
        parse_ensemble(self.ensemble_name)
        for name in ("d_list", "n_list", "seeds"):
            vals = tuple(int(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def cell_reg(self, n: int) -> RegMode:
        if self.reg is None:
            return default_reg(n)
        return scale_regularization(n, self.reg) if self.scale_reg else self.reg

    def settings(self) -> dict:
        """Everything that shapes a row's content, in a stable JSON-friendly form."""
        solver = dataclasses.asdict(self.solver)
        solver["cut_strategy"] = self.solver.cut_strategy.value
        # 30 and 30.0 are the same setting
        solver = {k: (v if v is None else _SOLVER_KEYS[k](v)) for k, v in solver.items()}
        return {
            "ensemble": self.ensemble_name,
            "solver": solver,
            "reg": None if self.reg is None else dataclasses.asdict(self.reg),
            "scale_reg": self.scale_reg,
            "noise": dataclasses.asdict(self.noise),
            "decay": self.decay,
            "delta_grid": [repr(float(x)) for x in self.delta_grid],
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.settings(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# config files


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        if ".." in part:  # inclusive range, e.g. 0..9
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


_SOLVER_KEYS = {
    "time_limit": float, "gap_tolerance": float, "cut_strategy": str, "integrality_tol": float,
    "node_selection": str, "branching": str, "parallel_nodes": int, "node_bound": str,
    "node_limit": int, "parent_table_max": int, "tol_feas": float, "tol_bound": float,
    "max_iter_factor": int,
}


def solver_from_mapping(values: dict) -> SolverConfig:
    kwargs = {}
    for key, text in values.items():
        if key not in _SOLVER_KEYS:
            raise ConfigError(f"unknown solver key {key!r}")
        try:
            kwargs[key] = _SOLVER_KEYS[key](text)
        except ValueError:
            raise ConfigError(f"solver key {key!r}: cannot parse {text!r}") from None
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def reg_from_mapping(values: dict) -> RegMode | None:
    if not values or values.get("variant", "default").upper() == "DEFAULT":
        return None
    try:
        return RegMode(values["variant"].upper(), float(values.get("lambda", 0)), float(values.get("eta", 0)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"reg section: {exc}") from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI experiment file; ``overrides`` maps ``section.key`` to text and wins."""
    cp = configparser.ConfigParser()
    if path is not None:
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
    for dotted, text in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(text))
    known = {"experiment", "solver", "reg"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    ex = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    if "ensemble" not in ex:
        raise ConfigError("experiment.ensemble is required")
    reg = dict(cp["reg"]) if cp.has_section("reg") else {}
    try:
        noise = NoiseSpec(ex.get("noise", "gaussian"), float(ex.get("noise_scale", 1.0)))
        cfg = ExperimentConfig(
            ensemble_name=ex["ensemble"],
            d_list=_ints(ex.get("d_list", "")),
            n_list=_ints(ex.get("n_list", "")),
            seeds=_ints(ex["seeds"]) if "seeds" in ex else DEFAULT_SEEDS,
            solver=solver_from_mapping(dict(cp["solver"]) if cp.has_section("solver") else {}),
            reg=reg_from_mapping(reg),
            scale_reg=reg.get("scale", "true").lower() in ("1", "true", "yes", "on"),
            output_dir=ex.get("output_dir", "bench_out"),
            noise=noise,
            decay=float(ex.get("decay", 1.5)),
            workers=int(ex.get("workers", 1)),
            delta_grid=_floats(ex["delta_grid"]) if "delta_grid" in ex else DEFAULT_DELTA_GRID,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def config_text(cfg: ExperimentConfig) -> str:
    """The configuration as INI text, the form echoed next to every result."""
    s = cfg.solver
    lines = [
        "[experiment]",
        f"ensemble = {cfg.ensemble_name}",
        f"d_list = {', '.join(map(str, cfg.d_list))}",
        f"n_list = {', '.join(map(str, cfg.n_list))}",
        f"seeds = {', '.join(map(str, cfg.seeds))}",
        f"output_dir = {cfg.output_dir}",
        f"noise = {cfg.noise.kind}",
        f"noise_scale = {cfg.noise.scale!r}",
        f"decay = {cfg.decay!r}",
        f"workers = {cfg.workers}",
        f"delta_grid = {', '.join(repr(float(x)) for x in cfg.delta_grid)}",
        "",
        "[solver]",
    ]
    for key in _SOLVER_KEYS:
        val = getattr(s, key)
        if val is None:
            continue
        lines.append(f"{key} = {val.value if isinstance(val, CutStrategy) else val}")
    lines += ["", "[reg]"]
    if cfg.reg is None:
        lines.append("variant = default")
    else:
        lines += [f"variant = {cfg.reg.variant}", f"lambda = {cfg.reg.lam!r}", f"eta = {cfg.reg.eta!r}"]
    lines.append(f"scale = {str(cfg.scale_reg).lower()}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# data and single fits


def load_timeseries_csv(path, p: int = 1) -> TimeSeriesPanel:
    """Read a CSV panel (header of names, one time slice per line) and lag-stack it."""
    if p < 0:
        raise ConfigError("p must be nonnegative")
    series, names = read_series_csv(path)
    if series.shape[0] < p + 1:
        raise DataError(f"{path}: too few rows: {series.shape[0]} data rows, need at least {p + 1} for p={p}")
    if series.shape[1] < 1:
        raise DataError(f"{path}: no variables in header")
    return lag_stack(series, p, names)


def fit(panel: TimeSeriesPanel, solver_cfg: SolverConfig | None = None, reg: RegMode | None = None,
        grid=None, c=AUTO) -> tuple[DbnGraph, SolveReport]:
    """Solve one panel; with ``grid`` of (lambda, eta) pairs keep the smallest final gap.

    Ties in gap go to the earlier grid entry. The returned report is the one of
    the chosen pair; its settings carry the coefficients used.
    """
    solver_cfg = solver_cfg or SolverConfig()
    reg = reg or default_reg(panel.n)
    combos = [(reg.lam, reg.eta)] if grid is None else [(float(a), float(b)) for a, b in grid]
    if not combos:
        raise ConfigError("empty lambda/eta grid")
    best = None
    for lam, eta in combos:
        inst = build_instance(panel, RegMode(reg.variant, lam, eta), c=c)
        rep = solve(inst, solver_cfg)
        if best is None or rep.mip_gap < best.mip_gap:
            best = rep
    return best.incumbent, best


# ----------------------------------------------------------------------------
# experiments


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def run_cell(cfg: ExperimentConfig, d: int, n: int, seed: int) -> tuple[dict, float]:
    """One cell; failures become a row with the error instead of raising."""
    model, intra, inter, p = parse_ensemble(cfg.ensemble_name)
    reg = cfg.cell_reg(n)
    row = {k: "" for k in ROW_FIELDS}
    row.update(config_hash=cfg.config_hash(), ensemble=cfg.ensemble_name, method=METHOD, d=str(d), n=str(n), seed=str(seed),
               lam=_num(reg.lam), eta=_num(reg.eta))
    wall = math.nan
    try:
        gen = GenConfig(d=d, p=p, intra_model=model, intra_edge_ratio=intra,
                        inter_edge_ratio=inter if p else 1.0, eta=cfg.decay, seed=seed,
                        n_samples=n, noise=cfg.noise)
        gen, truth = draw_stationary(gen, MAX_ATTEMPTS)
        row["attempt"] = str(gen.attempt)
        panel = simulate(truth, gen)
        rep = solve(build_instance(panel, reg), cfg.solver)
        wall = rep.wall_time
        row.update(status=rep.status, objective=_num(rep.incumbent_objective), best_bound=_num(rep.best_bound),
                   mip_gap=_num(rep.mip_gap), cuts_added=str(rep.cuts_added), nodes=str(rep.nodes_explored))
        if rep.incumbent is not None:
            delta, m = best_delta_sweep(rep.incumbent, truth, panel, cfg.delta_grid)
            row.update(shd=_num(m.shd), precision=_num(m.precision), recall=_num(m.recall), f1=_num(m.f1),
                       g_score=_num(m.g_score), sigma_p=_num(m.sigma_p), frobenius=_num(m.frobenius),
                       delta=_num(delta))
    except (DbnError, ValueError, np.linalg.LinAlgError) as exc:
        row["status"] = "ERROR"
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return row, wall


def _cell_job(args):
    return run_cell(*args)


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _append_csv(path: Path, fields, rows) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and worst case of each metric per (hash, ensemble, d, n), over rows that have it."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["config_hash"], r["ensemble"], int(r["d"]), int(r["n"])), []).append(r)
    out = []
    for (h, ens, d, n) in sorted(groups):
        cell = groups[(h, ens, d, n)]
        for metric in METRICS:
            vals = [float(r[metric]) for r in cell if r.get(metric, "") != ""]
            vals = [v for v in vals if not math.isnan(v)]
            if not vals:
                continue
            worst = min(vals) if metric in HIGHER_IS_BETTER else max(vals)
            out.append({"config_hash": h, "ensemble": ens, "d": str(d), "n": str(n), "metric": metric,
                        "count": str(len(vals)), "mean": _num(math.fsum(vals) / len(vals)), "worst": _num(worst)})
    return out


@dataclass
class ExperimentResult:
    rows: list[dict]  # every row of this configuration, old and new
    added: int
    aggregates: list[dict]
    files: list[Path]

    @property
    def up_to_date(self) -> bool:
        return self.added == 0


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run every missing cell, then rewrite aggregates, plot data and plots."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    (out / f"config_{h}.ini").write_text(config_text(cfg))
    rows_path = out / "rows.csv"
    existing = _read_csv(rows_path)
    done = {(r["config_hash"], r["d"], r["n"], r["seed"]) for r in existing}
    todo = [(d, n, s) for d in cfg.d_list for n in cfg.n_list for s in cfg.seeds
            if (h, str(d), str(n), str(s)) not in done]

    jobs = [(cfg, d, n, s) for d, n, s in todo]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_cell_job, jobs)
            new = _write_in_order(out, jobs, results, progress)
    else:
        new = _write_in_order(out, jobs, map(_cell_job, jobs), progress)

    mine = [r for r in _read_csv(rows_path) if r["config_hash"] == h]
    agg = aggregate(mine)
    agg_path = out / f"aggregates_{h}.csv"
    with open(agg_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGG_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(agg)
    files = [rows_path, agg_path] + write_plots(agg, out, cfg.ensemble_name, h)
    return ExperimentResult(mine, new, agg, files)


def _write_in_order(out: Path, jobs, results, progress) -> int:
    # the single writer: rows land in job order whatever the worker timing
    count = 0
    for (cfg, d, n, s), (row, wall) in zip(jobs, results):
        _append_csv(out / "rows.csv", ROW_FIELDS, [row])
        _append_csv(out / "timings.csv", ("config_hash", "d", "n", "seed", "wall_time"),
                    [{"config_hash": row["config_hash"], "d": d, "n": n, "seed": s, "wall_time": _num(wall)}])
        count += 1
        if progress is not None:
            progress(row)
    return count


def write_plots(agg: list[dict], out: Path, ensemble: str, h: str) -> list[Path]:
    """Per metric: an SVG of mean (solid) and worst case (dashed) against d, one line per n, plus its CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    for metric in METRICS:
        pts = [a for a in agg if a["metric"] == metric]
        if not pts:
            continue
        stem = out / f"{ensemble}_{metric}_{h}"
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "d", "mean", "worst", "count"])
            for a in sorted(pts, key=lambda a: (int(a["n"]), int(a["d"]))):
                w.writerow([a["n"], a["d"], a["mean"], a["worst"], a["count"]])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for n in sorted({int(a["n"]) for a in pts}):
            sel = sorted((a for a in pts if int(a["n"]) == n), key=lambda a: int(a["d"]))
            ds = [int(a["d"]) for a in sel]
            line, = ax.plot(ds, [float(a["mean"]) for a in sel], marker="o", label=f"n={n} mean")
            ax.plot(ds, [float(a["worst"]) for a in sel], ls="--", color=line.get_color(), label=f"n={n} worst")
        ax.set_xlabel("d")
        ax.set_ylabel(metric)
        ax.set_title(ensemble)
        ax.legend(fontsize="small")
        fig.tight_layout()
        # a fixed date keeps the SVG stable between runs
        fig.savefig(stem.with_suffix(".svg"), metadata={"Date": None})
        plt.close(fig)
        files += [stem.with_suffix(".csv"), stem.with_suffix(".svg")]
    return files


__all__ = [
    "ExperimentConfig", "ExperimentResult", "parse_ensemble", "default_reg", "load_config", "config_text",
    "solver_from_mapping", "reg_from_mapping", "load_timeseries_csv", "fit", "run_cell", "run_experiment",
    "aggregate", "write_plots",
]
