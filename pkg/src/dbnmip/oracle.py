"""Exhaustive reference optimizer for small problems.

Every intra support is enumerated as a tuple of per-column parent sets and
cyclic ones are skipped. Because the score separates over columns, each
column's best value for a given parent set is computed once and cached: the
parents are forced on (their indicator cost is paid) and the lag part is
handled by mode. Under L1 every lag subset is tried, under L2_SQUARED the lag
weights get a closed-form ridge fit, and under L2_LITERAL_ABS every sign
pattern of the lag weights is resolved exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .errors import ConfigError
from .graph import DbnGraph
from .objective import L1, L2_SQUARED, MiqpInstance

DEFAULT_MAX_D = 5
MAX_P = 2


@dataclass
class OracleResult:
    best_graph: DbnGraph
    best_objective: float
    supports_evaluated: int


def _acyclic(parents: tuple[int, ...]) -> bool:
    """Kahn's elimination on parent bitmasks."""
    left = (1 << len(parents)) - 1
    while left:
        for j, pm in enumerate(parents):
            if left >> j & 1 and not pm & left:
                left &= ~(1 << j)
                break
        else:
            return False
    return True


class _ColumnFits:
    def __init__(self, inst: MiqpInstance):
        self.inst = inst
        self.G = inst.gram
        self.R = inst.xty
        self.yy = inst.yy
        self.c = inst.c
        self.Z = inst.panel.Z

    def value(self, j, rows, b) -> float:
        G, r = self.G, self.R[:, j]
        fit = self.yy[j] - 2 * r[rows] @ b + b @ G[np.ix_(rows, rows)] @ b
        return float(max(fit, 0.0))

    def lsq(self, j, rows, ridge_rows=(), eta=0.0):
        """Box-constrained least squares on ``rows``, with optional ridge on some of them."""
        rows = np.asarray(rows, dtype=int)
        if rows.size == 0:
            return np.zeros(0), float(self.yy[j])
        G = self.G[np.ix_(rows, rows)].copy()
        r = self.R[rows, j]
        pos = [k for k, row in enumerate(rows) if row in set(ridge_rows)]
        G[pos, pos] += eta
        b = np.linalg.lstsq(G, r, rcond=None)[0]
        if np.abs(b).max() > self.c:
            A = self.Z[:, rows]
            y = self.inst.panel.X[:, j]
            if pos:
                aug = np.zeros((len(pos), rows.size))
                aug[np.arange(len(pos)), pos] = math.sqrt(eta)
                A = np.vstack([A, aug])
                y = np.concatenate([y, np.zeros(len(pos))])
            b = lsq_linear(A, y, bounds=(-self.c, self.c), method="bvls", tol=1e-14).x
        fit = self.value(j, rows, b)
        return b, fit + eta * float(np.sum(b[pos] ** 2))

    def lasso(self, j, rows, lag_rows, eta):
        """Exact minimizer with an ``eta * |b|`` charge on ``lag_rows``.

        A bounded smooth solve finds the sign pattern, the stationarity system
        on that pattern gives the exact point, and the optimality conditions
        are checked. If the check fails every sign pattern is tried.
        """
        rows, lag_rows = list(rows), list(lag_rows)
        sel, b, val = self._lasso_box(j, rows, lag_rows, eta)
        if np.abs(b).max(initial=0) < self.c * (1 - 1e-9):
            signs = np.sign(np.where(np.abs(b[len(rows):]) > 1e-9, b[len(rows):], 0.0))
            exact = self._pattern(j, rows, lag_rows, signs, eta)
            if exact is not None and self._kkt(j, exact[0], exact[1], rows, lag_rows, eta):
                return exact
            return self._enumerate(j, rows, lag_rows, eta)
        return sel, b, val

    def _pattern(self, j, rows, lag_rows, signs, eta):
        sel = rows + [r for r, s in zip(lag_rows, signs) if s]
        sgn = np.array([0.0] * len(rows) + [float(s) for s in signs if s])
        if not sel:
            return sel, np.zeros(0), float(self.yy[j])
        idx = np.array(sel)
        b = np.linalg.lstsq(self.G[np.ix_(idx, idx)], self.R[idx, j] - 0.5 * eta * sgn, rcond=None)[0]
        lagpart = sgn != 0
        if np.any(np.sign(b[lagpart]) != sgn[lagpart]) or np.abs(b).max() > self.c:
            return None
        return sel, b, self.value(j, idx, b) + eta * float(np.abs(b[lagpart]).sum())

    def _kkt(self, j, sel, b, rows, lag_rows, eta) -> bool:
        full = np.zeros(self.G.shape[0])
        if sel:
            full[sel] = b
        grad = 2 * (self.G @ full - self.R[:, j])
        scale = 1e-7 * max(1.0, float(np.abs(self.R[:, j]).max()))
        for r in lag_rows:
            if full[r] == 0 and abs(grad[r]) > eta + scale:
                return False
        return True

    def _enumerate(self, j, rows, lag_rows, eta):
        best = (None, None, math.inf)
        for signs in itertools.product((0, 1, -1), repeat=len(lag_rows)):
            got = self._pattern(j, rows, lag_rows, signs, eta)
            if got is not None and got[2] < best[2]:
                best = got
        return best

    def _lasso_box(self, j, rows, lag_rows, eta):
        # split lag weights into positive and negative parts; a bounded smooth QP
        sel = rows + lag_rows
        idx = np.array(sel)
        G, r = self.G[np.ix_(idx, idx)], self.R[idx, j]
        nr, nl = len(rows), len(lag_rows)

        def expand(z):
            return np.concatenate([z[:nr], z[nr:nr + nl] - z[nr + nl:]])

        def f(z):
            b = expand(z)
            gb = G @ b
            val = self.yy[j] - 2 * r @ b + b @ gb + eta * z[nr:].sum()
            g = 2 * (gb - r)
            grad = np.concatenate([g[:nr], g[nr:] + eta, -g[nr:] + eta])
            return val, grad

        bounds = [(-self.c, self.c)] * nr + [(0, self.c)] * (2 * nl)
        z = minimize(f, np.zeros(nr + 2 * nl), jac=True, method="L-BFGS-B", bounds=bounds,
                     options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000}).x
        b = expand(z)
        return sel, b, float(f(z)[0])


def exhaustive_min(inst: MiqpInstance, max_d: int = DEFAULT_MAX_D) -> OracleResult:
    """Global minimum of score plus penalty over acyclic supports, by enumeration.

    Weight fits respect the box ``|w| <= c``; when the unconstrained fit
    leaves it, a bounded least-squares solve replaces it. Instance fixings are
    ignored.
    """
    d, p = inst.d, inst.p
    if d > max_d:
        raise ConfigError(f"oracle guard: d={d} exceeds max_d={max_d}")
    if p > MAX_P:
        raise ConfigError(f"oracle guard: p={p} exceeds {MAX_P}")
    reg = inst.reg
    fits = _ColumnFits(inst)
    lag_rows = list(range(d, d + p * d))

    col_best: list[dict] = []
    for j in range(d):
        others = [i for i in range(d) if i != j]
        table = {}
        for mask in range(1 << (d - 1)):
            parents = [others[k] for k in range(d - 1) if mask >> k & 1]
            pm = sum(1 << i for i in parents)
            intra_cost = reg.lam * len(parents)
            if reg.variant == L1:
                best = (math.inf, None, None)
                for r in range(len(lag_rows) + 1):
                    for sub in itertools.combinations(lag_rows, r):
                        rows = parents + list(sub)
                        b, fit = fits.lsq(j, rows)
                        val = fit + reg.eta * len(sub)
                        if val < best[0]:
                            best = (val, rows, b)
            elif reg.variant == L2_SQUARED:
                rows = parents + lag_rows
                b, val = fits.lsq(j, rows, lag_rows, reg.eta)
                best = (val, rows, b)
            else:
                rows, b, val = fits.lasso(j, parents, lag_rows, reg.eta)
                best = (val, rows, b)
            table[pm] = (best[0] + intra_cost, best[1], best[2])
        col_best.append(table)

    masks = [sorted(t) for t in col_best]
    best_val, best_choice, evaluated = math.inf, None, 0
    for choice in itertools.product(*masks):
        if not _acyclic(choice):
            continue
        evaluated += 1
        val = sum(col_best[j][pm][0] for j, pm in enumerate(choice))
        if val < best_val:
            best_val, best_choice = val, choice

    beta = np.zeros((inst.m, d))
    for j, pm in enumerate(best_choice):
        _, rows, b = col_best[j][pm]
        if rows:
            beta[rows, j] = b
    g = inst.graph_from_beta(beta)
    return OracleResult(g, inst.objective(g), evaluated)
