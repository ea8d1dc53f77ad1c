"""The quadratic score, its regularizers, and MIQP instance construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .datagen import TimeSeriesPanel
from .graph import DbnGraph

L1 = "L1"
L2_SQUARED = "L2_SQUARED"
L2_LITERAL_ABS = "L2_LITERAL_ABS"
REG_VARIANTS = (L1, L2_SQUARED, L2_LITERAL_ABS)

AUTO = "AUTO"
AUTO_BIGM_FACTOR = 2.0
AUTO_BIGM_FLOOR = 1.0
AUTO_RIDGE_PER_SAMPLE = 1e-3


@dataclass(frozen=True)
class RegMode:
    """Regularization variant with intra (``lam``) and inter (``eta``) coefficients.

    ``L1`` charges ``lam`` per intra edge and ``eta`` per lag edge.
    ``L2_SQUARED`` charges ``lam`` per intra edge and ``eta * a**2`` per lag
    weight. ``L2_LITERAL_ABS`` charges ``lam`` per intra edge and
    ``eta * |a|`` per lag weight.
    """

    variant: str = L1
    lam: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.variant not in REG_VARIANTS:
            raise ValueError(f"unknown regularization variant {self.variant!r}")
        if self.lam < 0 or self.eta < 0:
            raise ValueError("regularization coefficients must be nonnegative")

    @property
    def inter_is_binary(self) -> bool:
        """Whether lag indicators carry a cost and so must be decided."""
        return self.variant == L1


@dataclass(frozen=True)
class ScoreValue:
    fit: float
    reg: float

    @property
    def total(self) -> float:
        return self.fit + self.reg


def _check_shapes(g: DbnGraph, panel: TimeSeriesPanel) -> None:
    if g.d != panel.d or g.p != panel.p:
        raise ValueError(f"graph is d={g.d}, p={g.p} but panel is d={panel.d}, p={panel.p}")


def fit_term(g: DbnGraph, panel: TimeSeriesPanel) -> float:
    """Squared residual, accumulated entry by entry as a double sum."""
    _check_shapes(g, panel)
    X, Y = panel.X, panel.Y
    pred = X @ g.W
    if g.p:
        pred = pred + Y @ g.A_stacked
    R = X - pred
    # sum over columns of per-column sums of squares
    return float(sum(np.dot(R[:, j], R[:, j]) for j in range(g.d)))


def reg_term(g: DbnGraph, reg: RegMode) -> float:
    intra = reg.lam * np.count_nonzero(g.W)
    if reg.variant == L1:
        inter = reg.eta * np.count_nonzero(g.A)
    elif reg.variant == L2_SQUARED:
        inter = reg.eta * float(np.sum(g.A ** 2))
    else:
        inter = reg.eta * float(np.sum(np.abs(g.A)))
    return float(intra + inter)


def score(g: DbnGraph, panel: TimeSeriesPanel, reg: RegMode) -> ScoreValue:
    return ScoreValue(fit_term(g, panel), reg_term(g, reg))


def scale_regularization(n_samples: int, base: RegMode) -> RegMode:
    """Grow coefficients like ``sqrt(n)`` so the penalty shrinks relative to the fit."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    f = float(np.sqrt(n_samples))
    return RegMode(base.variant, base.lam * f, base.eta * f)


def ridge_bigm(panel: TimeSeriesPanel) -> tuple[float, float]:
    """Data-driven weight bound and the ridge coefficient magnitude it came from.

    Each variable is ridge-regressed on all other current variables and all
    lags; the bound is twice the largest coefficient magnitude, floored at 1.
    The ridge penalty is ``1e-3 n`` times the mean squared entry of ``Z``, which
    is ``1e-3 n`` for unit-variance data and keeps the bound unchanged when the
    data are rescaled.
    """
    Z = panel.Z
    G = Z.T @ Z
    n, d = panel.n, panel.d
    m = G.shape[0]
    energy = float(np.trace(G)) / max(m * n, 1)
    ridge = AUTO_RIDGE_PER_SAMPLE * n * (energy if energy > 0 else 1.0)
    biggest = 0.0
    for j in range(d):
        keep = np.array([k for k in range(m) if k != j])
        if keep.size == 0:
            continue
        Gk = G[np.ix_(keep, keep)] + ridge * np.eye(keep.size)
        coef = np.linalg.solve(Gk, G[keep, j])
        biggest = max(biggest, float(np.max(np.abs(coef))))
    return max(AUTO_BIGM_FACTOR * biggest, AUTO_BIGM_FLOOR), biggest


FREE = -1


def indicator_key_index(key, d: int, p: int) -> tuple[int, int]:
    """Map ``(i, j)`` (intra) or ``(s, i, j)`` (lag ``s + 1``) to a (row, column) of the fixing table."""
    if len(key) == 2:
        i, j = key
        row = i
    elif len(key) == 3:
        s, i, j = key
        if not 0 <= s < p:
            raise ValueError(f"lag index {s} out of range for p={p}")
        row = d + s * d + i
    else:
        raise ValueError(f"bad indicator key {key!r}")
    if not (0 <= i < d and 0 <= j < d):
        raise ValueError(f"indicator {key!r} out of range for d={d}")
    return row, j


def fixing_table(d: int, p: int, fixings: Mapping | np.ndarray | None = None) -> np.ndarray:
    """Normalize fixings into an int8 table of shape ``(d + p*d, d)``.

    Row ``k`` < d is the intra indicator ``k -> j``; row ``d + s*d + i`` is the
    lag-``s+1`` indicator ``i -> j``. Entries are -1 (free), 0 or 1. Intra
    diagonal entries are always 0.
    """
    m = d + p * d
    if isinstance(fixings, np.ndarray):
        F = np.array(fixings, dtype=np.int8)
        if F.shape != (m, d):
            raise ValueError(f"fixing table must be {(m, d)}, got {F.shape}")
        if not np.isin(F, (-1, 0, 1)).all():
            raise ValueError("fixing values must be -1, 0 or 1")
    else:
        F = np.full((m, d), FREE, dtype=np.int8)
        for key, val in (fixings or {}).items():
            if val not in (0, 1, None, FREE, "free"):
                raise ValueError(f"fixing for {key!r} must be 0, 1 or free")
            row, col = indicator_key_index(key, d, p)
            if row == col and row < d:
                if val == 1:
                    raise ValueError(f"self-loop indicator {key!r} cannot be fixed to 1")
                continue
            F[row, col] = FREE if val in (None, FREE, "free") else int(val)
    F[np.arange(d), np.arange(d)] = 0
    return F


@dataclass(frozen=True, eq=False)
class MiqpInstance:
    """Data, regularization, weight bound and fixings of one learning problem."""

    panel: TimeSeriesPanel
    reg: RegMode
    c: float
    fixings: np.ndarray = field(default=None)
    c_source: str = "explicit"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("big-M bound c must be positive")
        F = fixing_table(self.panel.d, self.panel.p, self.fixings)
        F.setflags(write=False)
        object.__setattr__(self, "fixings", F)

    @property
    def d(self) -> int:
        return self.panel.d

    @property
    def p(self) -> int:
        return self.panel.p

    @property
    def m(self) -> int:
        """Regressor count per column: d current variables plus p*d lags."""
        return self.d * (1 + self.p)

    @cached_property
    def gram(self) -> np.ndarray:
        Z = self.panel.Z
        return np.ascontiguousarray(Z.T @ Z)

    @cached_property
    def xty(self) -> np.ndarray:
        """``Z^T X``; column ``j`` is the cross-moment vector of column ``j``."""
        return np.ascontiguousarray(self.panel.Z.T @ self.panel.X)

    @cached_property
    def yy(self) -> np.ndarray:
        X = self.panel.X
        return np.einsum("ij,ij->j", X, X)

    @cached_property
    def penalty(self) -> np.ndarray:
        """Indicator cost per row of the fixing table (zero where lag indicators are free of charge)."""
        pen = np.empty(self.m)
        pen[: self.d] = self.reg.lam
        pen[self.d:] = self.reg.eta if self.reg.inter_is_binary else 0.0
        return pen

    def with_fixings(self, fixings) -> "MiqpInstance":
        return MiqpInstance(self.panel, self.reg, self.c, fixings, self.c_source)

    def graph_from_beta(self, beta: np.ndarray) -> DbnGraph:
        """Assemble a DbnGraph from an (m x d) coefficient table."""
        d = self.d
        W = np.array(beta[:d], dtype=float)
        np.fill_diagonal(W, 0.0)
        return DbnGraph.from_stacked(W, beta[d:])

    def objective(self, g: DbnGraph) -> float:
        return score(g, self.panel, self.reg).total


def build_instance(panel: TimeSeriesPanel, reg: RegMode, c=AUTO, fixings=None) -> MiqpInstance:
    if panel.n < 1:
        raise ValueError("panel has no rows")
    if isinstance(c, str):
        if c.upper() != AUTO:
            raise ValueError(f"c must be a positive number or {AUTO!r}")
        bound, _ = ridge_bigm(panel)
        return MiqpInstance(panel, reg, bound, fixings, c_source="auto")
    return MiqpInstance(panel, reg, float(c), fixings)
