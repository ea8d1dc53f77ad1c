"""Synthetic ground truth and SVAR simulation.

All randomness flows from ``numpy.random.PCG64`` seeded through a
``SeedSequence``; the graph and the noise use two spawned child streams, so a
seed reproduces the same draws on any platform numpy supports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ExplosiveProcessError, GenerationError
from .graph import DbnGraph, is_acyclic

INTRA_RANGE = (0.5, 2.0)
INTER_RANGE = (0.2, 0.5)
BURN_IN_PER_LAG = 50
STATIONARITY_TOL = 1e-8


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"  # gaussian | uniform | exponential
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "exponential"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        s = self.scale
        if self.kind == "gaussian":
            return rng.normal(0.0, 1.0, shape) * s
        if self.kind == "uniform":
            # unit variance before scaling
            return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), shape) * s
        return (rng.exponential(1.0, shape) - 1.0) * s


@dataclass(frozen=True)
class GenConfig:
    d: int
    p: int = 1
    intra_model: str = "ER"
    intra_edge_ratio: float = 1.0
    inter_edge_ratio: float | tuple[float, ...] = 1.0  # one value, or one per lag
    eta: float = 1.5
    seed: int = 0
    n_samples: int = 1000
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    attempt: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.p < 0:
            raise ValueError("p must be nonnegative")
        if self.eta < 1:
            raise ValueError("decay parameter eta must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.intra_model not in ("ER", "SF"):
            raise ValueError(f"intra_model must be ER or SF, got {self.intra_model!r}")
        if not isinstance(self.inter_edge_ratio, (int, float)):
            ratios = tuple(float(r) for r in self.inter_edge_ratio)
            if len(ratios) != self.p:
                raise ValueError(f"{len(ratios)} inter edge ratios given for p={self.p}")
            object.__setattr__(self, "inter_edge_ratio", ratios)
        if self.intra_edge_ratio <= 0 or min(self.inter_ratios, default=1.0) <= 0:
            raise ValueError("edge ratios must be positive")

    @property
    def inter_ratios(self) -> tuple[float, ...]:
        """Edge ratio of each lag graph."""
        if isinstance(self.inter_edge_ratio, tuple):
            return self.inter_edge_ratio
        return (float(self.inter_edge_ratio),) * self.p

    def streams(self) -> tuple[np.random.Generator, np.random.Generator]:
        entropy = self.seed if self.attempt == 0 else [self.seed, self.attempt]
        graph_seq, noise_seq = np.random.SeedSequence(entropy).spawn(2)
        return np.random.Generator(np.random.PCG64(graph_seq)), np.random.Generator(np.random.PCG64(noise_seq))


@dataclass(frozen=True, eq=False)
class TimeSeriesPanel:
    """Current-slice matrix ``X`` (n x d) and lag stack ``Y`` (n x p*d)."""

    X: np.ndarray
    Y: np.ndarray
    p: int
    variable_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        n, d = X.shape
        if Y.ndim != 2 or Y.shape[0] != n or Y.shape[1] != self.p * d:
            raise ValueError(f"Y must be {n} x {self.p * d}, got {Y.shape}")
        if self.variable_names is not None and len(self.variable_names) != d:
            raise ValueError("variable_names length must equal d")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.variable_names is not None:
            object.__setattr__(self, "variable_names", tuple(self.variable_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def Z(self) -> np.ndarray:
        """Design matrix ``[X | Y]`` of the column regressions."""
        return np.hstack([self.X, self.Y])

    def permute_rows(self, order) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.X[order], self.Y[order], self.p, self.variable_names)

    def relabel(self, perm) -> "TimeSeriesPanel":
        """Reorder variables so that new variable ``k`` is old ``perm[k]``."""
        perm = np.asarray(perm)
        cols = np.concatenate([s * self.d + perm for s in range(self.p)]) if self.p else np.array([], int)
        names = None if self.variable_names is None else tuple(self.variable_names[k] for k in perm)
        return TimeSeriesPanel(self.X[:, perm], self.Y[:, cols], self.p, names)


def lag_stack(series: np.ndarray, p: int, variable_names: Sequence[str] | None = None) -> TimeSeriesPanel:
    """Split a T x d series into aligned current and lagged blocks.

    Row ``t`` of ``X`` is series row ``t + p``; row ``t`` of ``Y`` is series rows
    ``t + p - 1, ..., t`` side by side, most recent lag first.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise ValueError("series must be 2-D")
    T, d = series.shape
    if p < 0:
        raise ValueError("p must be nonnegative")
    if T <= p:
        raise DataError(f"need more than p={p} rows, got {T}")
    X = series[p:]
    Y = np.hstack([series[p - 1 - s: T - 1 - s] for s in range(p)]) if p else np.zeros((T, 0))
    return TimeSeriesPanel(X, Y, p, variable_names)


def _er_pairs(rng, n_candidates: int, expected: float) -> np.ndarray:
    prob = expected / n_candidates
    return rng.random(n_candidates) < prob


def _ba_edges(rng, d: int, m: int) -> list[tuple[int, int]]:
    # vertex t links to m distinct earlier vertices, preferring high degree;
    # edges point from the newcomer to the vertex it attaches to
    degree = np.zeros(d)
    edges = []
    for t in range(1, d):
        k = min(m, t)
        weights = degree[:t] + 1.0
        targets = rng.choice(t, size=k, replace=False, p=weights / weights.sum())
        for u in sorted(int(x) for x in targets):
            edges.append((t, u))
            degree[t] += 1
            degree[u] += 1
    return edges


def _signed_uniform(rng, lo: float, hi: float, size) -> np.ndarray:
    mag = rng.uniform(lo, hi, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return mag * sign


def generate_ground_truth(cfg: GenConfig) -> DbnGraph:
    """Random intra-slice DAG plus decayed ER lag graphs."""
    d, p = cfg.d, cfg.p
    max_intra = d * (d - 1) / 2
    if cfg.intra_edge_ratio * d > max_intra:
        raise GenerationError(
            f"intra edge ratio {cfg.intra_edge_ratio} asks for {cfg.intra_edge_ratio * d:g} edges; "
            f"a DAG on {d} vertices has at most {max_intra:g}"
        )
    if max(cfg.inter_ratios, default=0.0) > d:
        raise GenerationError(f"inter edge ratio {max(cfg.inter_ratios)} exceeds {d} edges per vertex")
    rng, _ = cfg.streams()

    order = rng.permutation(d)
    if cfg.intra_model == "ER":
        iu, ju = np.triu_indices(d, k=1)
        keep = _er_pairs(rng, iu.size, cfg.intra_edge_ratio * d)
        pairs = list(zip(iu[keep], ju[keep]))
    else:
        m = int(round(cfg.intra_edge_ratio))
        if m < 1:
            raise GenerationError("scale-free model needs an attachment count of at least 1")
        # newcomer t -> older u; reversing positions keeps the order topological
        pairs = [(d - 1 - t, d - 1 - u) for t, u in _ba_edges(rng, d, m)]
    W = np.zeros((d, d))
    if pairs:
        vals = _signed_uniform(rng, *INTRA_RANGE, len(pairs))
        for (a, b), v in zip(pairs, vals):
            W[order[a], order[b]] = v

    A = np.zeros((p, d, d))
    for s in range(p):
        alpha = 1.0 / cfg.eta ** s
        keep = _er_pairs(rng, d * d, cfg.inter_ratios[s] * d).reshape(d, d)
        vals = _signed_uniform(rng, INTER_RANGE[0] * alpha, INTER_RANGE[1] * alpha, (d, d))
        A[s] = np.where(keep, vals, 0.0)

    g = DbnGraph(W, A)
    if not is_acyclic(g.intra_support):
        raise GenerationError("generated intra-slice graph is cyclic")
    return g


def companion_radius(g: DbnGraph) -> float:
    """Spectral radius of the reduced-form VAR ``x_t = sum_s x_{t-s} A_s (I - W)^-1``."""
    d, p = g.d, g.p
    if p == 0:
        return 0.0
    M = np.linalg.inv(np.eye(d) - g.W)
    C = np.zeros((p * d, p * d))
    for s in range(p):
        C[s * d:(s + 1) * d, :d] = g.A[s] @ M
        if s + 1 < p:
            C[s * d:(s + 1) * d, (s + 1) * d:(s + 2) * d] = np.eye(d)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def draw_stationary(cfg: GenConfig, max_attempts: int = 500) -> tuple[GenConfig, DbnGraph]:
    """Redraw the ground truth until its process is stationary.

    Dense intra-slice graphs amplify the lag matrices through ``(I - W)^-1``, so
    many draws explode. Attempts are numbered and deterministic; the returned
    config carries the attempt that succeeded and reproduces the same truth.
    """
    for attempt in range(cfg.attempt, cfg.attempt + max_attempts):
        trial = replace(cfg, attempt=attempt)
        g = generate_ground_truth(trial)
        if companion_radius(g) < 1.0 + STATIONARITY_TOL:
            return trial, g
    raise GenerationError(f"no stationary draw in {max_attempts} attempts for seed {cfg.seed}")


def simulate(
    truth: DbnGraph,
    cfg: GenConfig,
    noise: np.ndarray | None = None,
    return_noise: bool = False,
):
    """Simulate ``X_t = X_t W + Y_t A + Z`` and return the lag-stacked panel.

    The trajectory has ``50 p`` burn-in slices, then ``p`` slices that seed the
    first lag stack, then ``n_samples`` slices that become the rows of ``X``.
    The first ``p`` slices of the whole run are raw noise. ``noise`` may be
    given explicitly as a full ``(50p + p + n_samples) x d`` matrix.
    """
    d, p = truth.d, truth.p
    if d != cfg.d or p != cfg.p:
        raise ValueError("graph shape does not match configuration")
    if not is_acyclic(truth.intra_support):
        raise GenerationError("intra-slice support must be acyclic")
    radius = companion_radius(truth)
    if radius >= 1.0 + STATIONARITY_TOL:
        raise ExplosiveProcessError(radius)

    burn = BURN_IN_PER_LAG * p
    T = burn + p + cfg.n_samples
    if noise is None:
        _, rng = cfg.streams()
        Z = cfg.noise.draw(rng, (T, d))
    else:
        Z = np.asarray(noise, dtype=float)
        if Z.shape != (T, d):
            raise ValueError(f"noise must have shape {(T, d)}, got {Z.shape}")

    M = np.linalg.inv(np.eye(d) - truth.W)
    series = np.empty((T, d))
    series[:p] = Z[:p]
    for t in range(p, T):
        drive = Z[t].copy()
        for s in range(p):
            drive += series[t - s - 1] @ truth.A[s]
        series[t] = drive @ M

    names = tuple(f"x{k + 1}" for k in range(d))
    panel = lag_stack(series[burn:], p, names)
    if return_noise:
        return panel, Z[burn + p:]
    return panel


def write_series_csv(series: np.ndarray, names: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.asarray(series):
            w.writerow([repr(float(x)) for x in row])


def panel_series(panel: TimeSeriesPanel) -> np.ndarray:
    """Recover the raw T x d series from a lag-stacked panel."""
    p, d = panel.p, panel.d
    if p == 0:
        return panel.X.copy()
    first = panel.Y[0].reshape(p, d)[::-1]
    return np.vstack([first, panel.X])


def read_series_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    """Parse the CSV panel format; problems are reported with 1-based line numbers."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    names = tuple(h.strip() for h in rows[0])
    d = len(names)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d:
            raise DataError(f"{path}: line {lineno}: expected {d} fields, found {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            bad = next(c for c in row if not _is_float(c))
            raise DataError(f"{path}: line {lineno}: non-numeric value {bad!r}") from None
    return np.array(data, dtype=float).reshape(len(data), d), names


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
