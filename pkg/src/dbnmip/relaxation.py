"""Continuous relaxation of the MIQP at a branch-and-bound node.

With indicators relaxed to [0, 1], a free indicator only appears through
``|w| <= c e`` and its cost ``pen * e``, so at the optimum ``e = |w| / c``. The
node problem then separates into one box-constrained weighted-lasso
regression per column. Each column is solved by coordinate descent on the
Gram matrix, and its lower bound comes from the Fenchel dual evaluated at the
current residual, which is valid for any iterate.

Cycle cuts couple columns. A cut whose fixed edges use up its slack forces
the remaining edges to zero. Other cuts that bind are dualized with
multipliers; any nonnegative multipliers give a valid bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .graph import Cycle
from .objective import FREE, L1, L2_SQUARED, MiqpInstance, fixing_table

OPTIMAL = "OPTIMAL"
ITERATION_LIMIT = "ITERATION_LIMIT"
INFEASIBLE = "INFEASIBLE"

TOL_FEAS = 1e-8
TOL_BOUND = 1e-7
MAX_ITER_FACTOR = 50
RIDGE_FLOOR = 1e-10

BOX, LASSO, SQUARED = 0, 1, 2


@numba.njit(cache=True)
def _conj(kind, rho, c, s):
    a = abs(s)
    if kind == BOX:
        return c * a
    if kind == LASSO:
        return c * max(a - rho, 0.0)
    if rho <= 0.0:
        return c * a
    if a <= 2.0 * rho * c:
        return s * s / (4.0 * rho)
    return c * a - rho * c * c


@numba.njit(cache=True)
def _pen(kind, rho, x):
    if kind == LASSO:
        return rho * abs(x)
    if kind == SQUARED:
        return rho * x * x
    return 0.0


@numba.njit(cache=True, nogil=True)
def _polish(G, b, active, kind, rho, c, beta, g):
    """Active-set step on the current sign pattern; returns True if it moved.

    Coordinates strictly inside the box with a nonzero value are re-solved
    from the stationarity conditions of their smooth pieces, holding the rest
    fixed. The objective is one smooth quadratic on that piece, so moving
    toward the solution only lowers it; the move stops where the first
    coordinate reaches zero or the box, and that coordinate is pinned there.
    """
    m = G.shape[0]
    na = active.shape[0]
    idx = np.empty(na, dtype=np.int64)
    pos = np.empty(na, dtype=np.int64)
    ns = 0
    for a in range(na):
        k = active[a]
        if beta[k] != 0.0 and abs(beta[k]) < c:
            idx[ns] = k
            pos[ns] = a
            ns += 1
    if ns == 0:
        return False
    M = np.empty((ns, ns))
    rhs = np.empty(ns)
    for r in range(ns):
        k = idx[r]
        # (G beta)_k = b_k - g_k, so the off-pattern part of row k is folded in via g_k
        rhs[r] = g[k]
        for s2 in range(ns):
            l = idx[s2]
            M[r, s2] = G[k, l]
            rhs[r] += G[k, l] * beta[l]
        a = pos[r]
        if kind[a] == LASSO:
            rhs[r] -= 0.5 * rho[a] * (1.0 if beta[k] > 0.0 else -1.0)
        elif kind[a] == SQUARED:
            M[r, r] += rho[a]
    # least squares copes with collinear columns where a plain solve would not
    x = np.linalg.lstsq(M, rhs)[0]
    step = 1.0
    hit = -1
    for r in range(ns):
        k = idx[r]
        dx = x[r] - beta[k]
        if dx == 0.0:
            continue
        if x[r] * beta[k] <= 0.0:
            t = -beta[k] / dx
        elif abs(x[r]) >= c:
            t = ((c if x[r] > 0.0 else -c) - beta[k]) / dx
        else:
            continue
        if t < step:
            step = t
            hit = r
    if step <= 0.0:
        return False
    moved = False
    for r in range(ns):
        k = idx[r]
        if r == hit:
            t = 0.0 if x[r] * beta[k] <= 0.0 else (c if x[r] > 0.0 else -c)
        else:
            t = beta[k] + step * (x[r] - beta[k])
            if t > c:
                t = c
            elif t < -c:
                t = -c
        delta = t - beta[k]
        if delta != 0.0:
            moved = True
            beta[k] = t
            for l in range(m):
                g[l] -= G[l, k] * delta
    return moved


# relative gap accepted once the active-set solve certifies optimality
EXACT_SLACK = 1e-7


@numba.njit(cache=True, nogil=True)
def _active_set(G, b, active, kind, rho, c, beta, g, max_iter):
    """Primal active-set solve; returns True when the optimality conditions hold.

    Coordinates are free (nonzero, inside the box), at zero, or at a bound.
    Free ones take a Newton step on their smooth piece, cut short where the
    first one reaches zero or the box; that one changes state. Once a full
    step is possible, the held coordinate that most violates its optimality
    condition is released, and so on. ``beta`` and ``g = b - G beta`` are
    updated in place.
    """
    m = G.shape[0]
    na = active.shape[0]
    st = np.zeros(na, dtype=np.int8)  # 0 at zero, +-1 free with that sign, +-2 at +-c
    for a in range(na):
        v = beta[active[a]]
        if v >= c:
            st[a] = 2
        elif v <= -c:
            st[a] = -2
        elif v > 0.0:
            st[a] = 1
        elif v < 0.0:
            st[a] = -1
    bmax = 0.0
    for k in range(m):
        bmax = max(bmax, abs(b[k]))
    tol = 1e-11 * (bmax + 1.0)
    idx = np.empty(na, dtype=np.int64)
    pos = np.empty(na, dtype=np.int64)
    last = -1
    for it in range(max_iter):
        nf = 0
        for a in range(na):
            if st[a] == 1 or st[a] == -1:
                idx[nf] = active[a]
                pos[nf] = a
                nf += 1
        full = True
        if nf > 0:
            M = np.empty((nf, nf))
            rhs = np.empty(nf)
            for r in range(nf):
                k = idx[r]
                rhs[r] = g[k]
                for q in range(nf):
                    l = idx[q]
                    M[r, q] = G[k, l]
                    rhs[r] += G[k, l] * beta[l]
                a = pos[r]
                if kind[a] == LASSO:
                    rhs[r] -= 0.5 * rho[a] * st[a]
                elif kind[a] == SQUARED:
                    M[r, r] += rho[a]
            x = np.linalg.lstsq(M, rhs)[0]
            step = 1.0
            hit = -1
            for r in range(nf):
                k = idx[r]
                s = st[pos[r]]
                dx = x[r] - beta[k]
                if dx == 0.0:
                    continue
                if s * x[r] < 0.0:
                    t = -beta[k] / dx
                elif abs(x[r]) > c:
                    t = (s * c - beta[k]) / dx
                else:
                    continue
                if t < step:
                    step = t
                    hit = r
            if hit >= 0 and step <= 0.0 and pos[hit] == last:
                return False  # the released coordinate cannot move: degenerate
            for r in range(nf):
                k = idx[r]
                if r == hit:
                    a = pos[r]
                    if st[a] * x[r] < 0.0:
                        t = 0.0
                        st[a] = 0
                    else:
                        t = st[a] * c
                        st[a] = 2 * st[a]
                else:
                    t = beta[k] + step * (x[r] - beta[k])
                delta = t - beta[k]
                if delta != 0.0:
                    beta[k] = t
                    for l in range(m):
                        g[l] -= G[l, k] * delta
            if hit >= 0:
                full = False
        if not full:
            continue
        # optimality conditions of the held coordinates
        worst = tol
        pick = -1
        sign = 0
        for a in range(na):
            k = active[a]
            if st[a] == 0:
                v = 2.0 * abs(g[k])
                if kind[a] == LASSO:
                    v -= rho[a]
                if v > worst:
                    worst, pick, sign = v, a, (1 if g[k] > 0.0 else -1)
            elif st[a] == 2 or st[a] == -2:
                s = st[a] // 2
                slope = 0.0
                if kind[a] == LASSO:
                    slope = rho[a]
                elif kind[a] == SQUARED:
                    slope = 2.0 * rho[a] * c
                # derivative of the objective moving inward from the bound
                v = s * (-2.0 * g[k]) + slope
                if v > worst:
                    worst, pick, sign = v, a, s
        if pick < 0:
            return True
        st[pick] = sign
        last = pick
    return False


@numba.njit(cache=True, nogil=True)
def cd_column(G, b, yy, active, kind, rho, c, beta, tol, max_sweeps):
    """Coordinate descent for one column; ``beta`` is updated in place.

    Minimizes ``||y - Z beta||^2 + sum_k h_k(beta_k)`` over the active
    coordinates with ``|beta_k| <= c``; inactive coordinates must be zero.
    Returns ``(primal, dual, sweeps, converged)`` where ``dual`` is a certified
    lower bound.
    """
    m = G.shape[0]
    g = b.copy()
    for k in range(m):
        if beta[k] != 0.0:
            for l in range(m):
                g[l] -= G[l, k] * beta[k]
    na = active.shape[0]
    exact = _active_set(G, b, active, kind, rho, c, beta, g, 4 * na + 10)
    if exact:
        # fresh gradient, free of the drift of incremental updates
        for l in range(m):
            t = b[l]
            for k in range(m):
                t -= G[l, k] * beta[k]
            g[l] = t
    pattern = np.zeros(na, dtype=np.int8)
    primal = 0.0
    dual = 0.0
    sweeps = 0
    converged = False
    stable = 0
    while True:
        # duality gap, coordinate by coordinate (Fenchel-Young)
        gap = 0.0
        hsum = 0.0
        btb = 0.0
        for a in range(na):
            k = active[a]
            hk = _pen(kind[a], rho[a], beta[k])
            hsum += hk
            gap += hk + _conj(kind[a], rho[a], c, 2.0 * g[k]) - 2.0 * g[k] * beta[k]
        for k in range(m):
            btb += beta[k] * (b[k] + g[k])
        primal = yy - btb + hsum
        if primal < 0.0:
            primal = 0.0
        if gap < 0.0:
            gap = 0.0
        dual = primal - gap
        if gap <= tol * primal + 1e-13 * (yy + 1e-300):
            converged = True
            break
        if exact and sweeps == 0 and gap <= EXACT_SLACK * primal + 1e-13 * (yy + 1e-300):
            # optimality conditions hold; the remaining gap is rounding
            converged = True
            break
        if sweeps >= max_sweeps:
            break
        if stable >= 1:
            stable = 0
            if _polish(G, b, active, kind, rho, c, beta, g):
                continue
        sweeps += 1
        changed = False
        for a in range(na):
            k = active[a]
            q = G[k, k] if G[k, k] > RIDGE_FLOOR else RIDGE_FLOOR
            old = beta[k]
            u = g[k] + G[k, k] * old
            kd = kind[a]
            if kd == LASSO:
                au = abs(u) - 0.5 * rho[a]
                t = 0.0
                if au > 0.0:
                    t = au / q if u > 0.0 else -au / q
            elif kd == SQUARED:
                t = u / (q + rho[a])
            else:
                t = u / q
            if t > c:
                t = c
            elif t < -c:
                t = -c
            delta = t - old
            if delta != 0.0:
                beta[k] = t
                for l in range(m):
                    g[l] -= G[l, k] * delta
            code = 0
            if t >= c:
                code = 2
            elif t <= -c:
                code = -2
            elif t > 0.0:
                code = 1
            elif t < 0.0:
                code = -1
            if code != pattern[a]:
                pattern[a] = code
                changed = True
        stable = 0 if changed else stable + 1
    return primal, dual, sweeps, converged


@dataclass
class ColumnResult:
    beta: np.ndarray  # length m, zeros outside the active set
    primal: float  # includes the fixed-indicator constant
    dual: float
    converged: bool
    sweeps: int


class ColumnRelaxer:
    """Per-column relaxed solves sharing the Gram matrix of one instance."""

    def __init__(self, inst: MiqpInstance, tol: float = TOL_BOUND, max_iter_factor: int = MAX_ITER_FACTOR):
        self.inst = inst
        self.tol = tol
        self.max_iter_factor = max_iter_factor
        self.G = inst.gram
        self.B = np.ascontiguousarray(inst.xty.T)  # row j is Z^T x_j
        self.yy = inst.yy
        self.c = float(inst.c)
        self.pen = inst.penalty
        d, m = inst.d, inst.m
        reg = inst.reg
        # rows whose indicator decides a cost (and is branched on)
        self.binary = np.ones(m, dtype=bool)
        self.base_kind = np.full(m, LASSO, dtype=np.int8)
        self.base_rho = np.zeros(m)
        if not reg.inter_is_binary:
            self.binary[d:] = False
            self.base_kind[d:] = SQUARED if reg.variant == L2_SQUARED else LASSO
            self.base_rho[d:] = reg.eta
        self.solves = 0

    def setup(self, fix_col: np.ndarray, extra: np.ndarray | None = None):
        """Active set, coordinate kinds and weights, and the fixed-indicator constant."""
        active = np.flatnonzero(fix_col != 0)
        kind = self.base_kind[active].copy()
        rho = self.base_rho[active].copy()
        const = 0.0
        for a, k in enumerate(active):
            if not self.binary[k]:
                continue
            if fix_col[k] == 1:
                kind[a] = BOX
                rho[a] = 0.0
                const += self.pen[k]
            else:
                add = 0.0 if extra is None else extra[k]
                rho[a] = (self.pen[k] + add) / self.c
        return active.astype(np.int64), kind, rho, const

    def solve(self, j: int, fix_col: np.ndarray, warm: np.ndarray | None = None,
              extra: np.ndarray | None = None) -> ColumnResult:
        active, kind, rho, const = self.setup(fix_col, extra)
        beta = np.zeros(self.inst.m)
        if warm is not None:
            beta[active] = np.clip(warm[active], -self.c, self.c)
        max_sweeps = self.max_iter_factor * max(len(active), 1)
        primal, dual, sweeps, conv = cd_column(
            self.G, self.B[j], float(self.yy[j]), active, kind, rho, self.c, beta, self.tol, max_sweeps
        )
        self.solves += 1
        return ColumnResult(beta, primal + const, dual + const, bool(conv), int(sweeps))

    def indicator_values(self, fix_col: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Smallest feasible relaxed indicator values for a column."""
        e = np.where(fix_col == 1, 1.0, 0.0)
        free = fix_col == FREE
        e[free & self.binary] = np.minimum(np.abs(beta[free & self.binary]) / self.c, 1.0)
        e[free & ~self.binary] = (beta[free & ~self.binary] != 0).astype(float)
        return e


@dataclass
class RelaxationResult:
    w: np.ndarray  # d x d
    a: np.ndarray  # p x d x d
    e: np.ndarray  # (d + p*d) x d relaxed indicators, same layout as fixing tables
    lower_bound: float
    primal_objective: float
    status: str
    fixings: np.ndarray  # fixings after cut propagation
    beta: np.ndarray  # (d + p*d) x d
    multipliers: dict
    max_cut_violation: float = 0.0
    col_primal: np.ndarray | None = None
    col_dual: np.ndarray | None = None

    @property
    def e_intra(self) -> np.ndarray:
        d = self.w.shape[0]
        return self.e[:d]

    @property
    def e_inter(self) -> np.ndarray:
        d = self.w.shape[0]
        return self.e[d:].reshape(-1, d, d)


def merge_fixings(base: np.ndarray, extra: np.ndarray) -> np.ndarray | None:
    """Combine two fixing tables; ``None`` signals contradictory fixings."""
    clash = (base != FREE) & (extra != FREE) & (base != extra)
    if clash.any():
        return None
    return np.where(base != FREE, base, extra).astype(np.int8)


def propagate_cuts(F: np.ndarray, cuts: Sequence[Cycle]) -> np.ndarray | None:
    """Force free edges to zero in cuts whose fixed edges exhaust the slack.

    Returns the tightened table, or ``None`` when some cut is violated by
    edges already fixed to 1.
    """
    F = F.copy()
    for cyc in cuts:
        ones = 0
        free = []
        for i, j in cyc.edges:
            v = F[i, j]
            if v == 1:
                ones += 1
            elif v == FREE:
                free.append((i, j))
        slack = cyc.k - 1 - ones
        if slack < 0:
            return None
        if slack == 0:
            for i, j in free:
                F[i, j] = 0
    return F


def _cut_excess(cyc: Cycle, F: np.ndarray, beta: np.ndarray, c: float) -> tuple[float, list]:
    ones = 0
    free = []
    for i, j in cyc.edges:
        if F[i, j] == 1:
            ones += 1
        elif F[i, j] == FREE:
            free.append((i, j))
    slack = cyc.k - 1 - ones
    used = sum(abs(beta[i, j]) / c for i, j in free)
    return used - slack, free


def _infeasible(inst: MiqpInstance, F: np.ndarray) -> RelaxationResult:
    d, p = inst.d, inst.p
    z = np.zeros((inst.m, d))
    return RelaxationResult(np.zeros((d, d)), np.zeros((p, d, d)), z.copy(), np.inf, np.inf,
                            INFEASIBLE, F, z, {})


def solve_relaxation(
    inst: MiqpInstance,
    cuts: Sequence[Cycle] = (),
    fixings=None,
    tol: float = TOL_BOUND,
    warm_start=None,
    tol_feas: float = TOL_FEAS,
    max_iter_factor: int = MAX_ITER_FACTOR,
    relaxer: ColumnRelaxer | None = None,
    lagrange_rounds: int = 4,
    parent: RelaxationResult | None = None,
) -> RelaxationResult:
    """Solve the node relaxation under ``fixings`` and the cut pool ``cuts``.

    ``warm_start`` may be a previous :class:`RelaxationResult` or a pair
    ``(W, A)``. The returned ``lower_bound`` is a certified bound on the
    relaxation optimum; ``primal_objective`` is the value at the returned
    point, which satisfies every cut within ``tol_feas``. Columns whose
    fixings match ``parent`` (solved without multipliers) are reused as is.
    """
    d, p, m = inst.d, inst.p, inst.m
    F = merge_fixings(inst.fixings, fixing_table(d, p, fixings))
    if F is None:
        return _infeasible(inst, fixing_table(d, p, fixings))
    F = propagate_cuts(F, cuts)
    if F is None:
        return _infeasible(inst, merge_fixings(inst.fixings, fixing_table(d, p, fixings)))

    rx = relaxer or ColumnRelaxer(inst, tol, max_iter_factor)
    if warm_start is None and parent is not None:
        warm_start = parent
    if isinstance(warm_start, RelaxationResult):
        warm = warm_start.beta
    elif warm_start is not None:
        Wd, Ad = warm_start
        warm = np.vstack([np.asarray(Wd, float), np.asarray(Ad, float).reshape(p * d, d)])
    else:
        warm = np.zeros((m, d))

    beta = np.zeros((m, d))
    col_primal = np.zeros(d)
    col_dual = np.zeros(d)
    converged = True
    reuse = parent is not None and not parent.multipliers and parent.col_dual is not None
    for j in range(d):
        if reuse and np.array_equal(parent.fixings[:, j], F[:, j]):
            beta[:, j] = parent.beta[:, j]
            col_primal[j], col_dual[j] = parent.col_primal[j], parent.col_dual[j]
            continue
        r = rx.solve(j, F[:, j], warm[:, j])
        beta[:, j] = r.beta
        col_primal[j], col_dual[j] = r.primal, r.dual
        converged &= r.converged

    c = rx.c
    binding = [cyc for cyc in cuts if _cut_excess(cyc, F, beta, c)[0] > tol_feas]
    multipliers: dict = {}
    lower = float(col_dual.sum())
    if binding:
        lower, beta, col_primal, conv2, multipliers = _lagrangian(
            rx, F, cuts, binding, beta, col_dual, lagrange_rounds, tol_feas
        )
        converged &= conv2
        beta = _restore_cut_feasibility(beta, F, cuts, c)
        col_primal = np.array([_column_value(rx, j, F[:, j], beta[:, j]) for j in range(d)])

    primal = float(col_primal.sum())
    lower = min(lower, primal)
    worst = max((_cut_excess(cyc, F, beta, c)[0] for cyc in cuts), default=0.0)
    gap_ok = primal - lower <= tol * max(abs(primal), 1.0) + 1e-12
    status = OPTIMAL if converged and gap_ok else ITERATION_LIMIT
    e = np.column_stack([rx.indicator_values(F[:, j], beta[:, j]) for j in range(d)]) if d else beta
    W = beta[:d].copy()
    A = beta[d:].reshape(p, d, d).copy()
    return RelaxationResult(W, A, e, lower, primal, status, F, beta, multipliers, max(worst, 0.0),
                            col_primal, col_dual)


def _column_value(rx: ColumnRelaxer, j: int, fix_col: np.ndarray, beta_col: np.ndarray) -> float:
    """Relaxed objective of one column at a given point (no multipliers)."""
    G, b, yy = rx.G, rx.B[j], float(rx.yy[j])
    resid = yy - 2.0 * b @ beta_col + beta_col @ G @ beta_col
    active, kind, rho, const = rx.setup(fix_col)
    pen = 0.0
    for a, k in enumerate(active):
        x = beta_col[k]
        if kind[a] == LASSO:
            pen += rho[a] * abs(x)
        elif kind[a] == SQUARED:
            pen += rho[a] * x * x
    return float(max(resid, 0.0) + pen + const)


def _lagrangian(rx, F, cuts, binding, beta, col_dual, rounds, tol_feas):
    """Block coordinate ascent on multipliers of the binding cuts."""
    d = F.shape[1]
    c = rx.c
    mu = {cyc.canonical(): 0.0 for cyc in binding}
    slack = {}
    for cyc in binding:
        ones = sum(1 for i, j in cyc.edges if F[i, j] == 1)
        slack[cyc.canonical()] = cyc.k - 1 - ones
    by_key = {cyc.canonical(): cyc for cyc in binding}

    beta = beta.copy()
    duals = col_dual.copy()
    primals = np.zeros(d)
    converged = True

    def extra_for(j):
        ex = np.zeros(F.shape[0])
        for key, val in mu.items():
            if val:
                for (i, jj) in by_key[key].edges:
                    if jj == j and F[i, jj] == FREE:
                        ex[i] += val
        return ex

    def resolve(cols):
        nonlocal converged
        for j in cols:
            r = rx.solve(j, F[:, j], beta[:, j], extra_for(j))
            beta[:, j] = r.beta
            duals[j] = r.dual
            primals[j] = r.primal
            converged &= r.converged

    def lagr_value():
        return float(duals.sum() - sum(mu[k] * slack[k] for k in mu))

    best = lagr_value()
    best_state = (beta.copy(), dict(mu))
    for _ in range(rounds):
        for key, cyc in by_key.items():
            cols = sorted({j for _, j in cyc.edges})

            def excess():
                return sum(abs(beta[i, j]) / c for i, j in cyc.edges if F[i, j] == FREE) - slack[key]

            if excess() <= tol_feas and mu[key] == 0.0:
                continue
            lo, hi = 0.0, max(mu[key], 1.0) * 2.0
            mu[key] = hi
            resolve(cols)
            while excess() > tol_feas and hi < 1e12:
                lo, hi = hi, hi * 4.0
                mu[key] = hi
                resolve(cols)
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                mu[key] = mid
                resolve(cols)
                if excess() > 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-9 * max(hi, 1.0):
                    break
            mu[key] = hi
            resolve(cols)
            val = lagr_value()
            if val > best:
                best = val
                best_state = (beta.copy(), dict(mu))
    beta, mu = best_state
    return best, beta, primals, converged, {k: v for k, v in mu.items() if v}


def _restore_cut_feasibility(beta, F, cuts, c):
    beta = beta.copy()
    for _ in range(len(cuts) + 1):
        changed = False
        for cyc in cuts:
            excess, free = _cut_excess(cyc, F, beta, c)
            if excess > 0 and free:
                used = sum(abs(beta[i, j]) / c for i, j in free)
                scale = max(used - excess, 0.0) / used if used > 0 else 0.0
                for i, j in free:
                    beta[i, j] *= scale
                changed = True
        if not changed:
            break
    return beta
