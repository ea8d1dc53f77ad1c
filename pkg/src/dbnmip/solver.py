"""Branch-and-bound with lazy cycle-exclusion cuts.

The root carries no acyclicity constraints at all. Whenever a node yields an
integral candidate, a DFS looks for cycles in its intra support; cycles found
become cuts ``sum(e over cycle) <= k - 1`` in a global, append-only pool and
the node is solved again. An acyclic candidate is polished by an exact fit on
its support and offered as incumbent.

Two node bounds are available. ``continuous`` is the plain big-M relaxation
from :mod:`dbnmip.relaxation`, branching on the most fractional indicator.
``column_exact`` drops only the cut pool's coupling beyond propagation and
solves every column's sub-MIQP to optimality. With few variables the column
values of all parent sets are tabulated once and the cut pool is priced in
by Lagrange multipliers; otherwise a small column-local branch-and-bound over
the relaxation is run and cached by fixing pattern. That bound is never
weaker than the continuous one, and the global tree then branches only on
edges of violated cuts. ``auto`` (the default) picks ``column_exact`` when the
table fits and ``continuous`` otherwise, since the column-local searches grow
too slow on wide, badly conditioned problems.
"""

from __future__ import annotations

import heapq
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from .errors import ConfigError
from .graph import Cycle, DbnGraph, EdgeSupport, count_simple_cycles, find_cycles
from .objective import FREE, L2_SQUARED, MiqpInstance
from .relaxation import (
    BOX,
    LASSO,
    ColumnRelaxer,
    cd_column,
    MAX_ITER_FACTOR,
    TOL_FEAS,
    solve_relaxation,
)

OPTIMAL = "OPTIMAL"
TIME_LIMIT = "TIME_LIMIT"
NODE_LIMIT = "NODE_LIMIT"
INFEASIBLE_CONFIG = "INFEASIBLE_CONFIG"

BEST_BOUND = "BEST_BOUND"
DFS_DIVE = "DFS_DIVE"
MOST_FRACTIONAL = "MOST_FRACTIONAL"
COLUMN_EXACT = "column_exact"
CONTINUOUS = "continuous"
AUTO = "auto"

GAP_EPS = 1e-10
BIGM_WARN_FRACTION = 1e-6
POLISH_TOL = 1e-12
SUPEREXPONENTIAL = "superexponential"


class CutStrategy(str, Enum):
    FIRST_CYCLE = "FIRST_CYCLE"
    SHORTEST_CYCLE = "SHORTEST_CYCLE"
    ALL_CYCLES = "ALL_CYCLES"


@dataclass(frozen=True)
class SolverConfig:
    time_limit: float = 7200.0
    gap_tolerance: float = 1e-7
    cut_strategy: CutStrategy = CutStrategy.ALL_CYCLES
    integrality_tol: float = 1e-6
    node_selection: str = BEST_BOUND
    branching: str = MOST_FRACTIONAL
    parallel_nodes: int = 1
    node_bound: str = AUTO
    node_limit: int | None = None
    parent_table_max: int = 12
    tol_feas: float = TOL_FEAS
    tol_bound: float = 1e-9
    max_iter_factor: int = MAX_ITER_FACTOR

    def __post_init__(self):
        object.__setattr__(self, "cut_strategy", CutStrategy(self.cut_strategy))
        if not self.time_limit > 0:
            raise ConfigError("time_limit must be positive")
        if not self.gap_tolerance >= 0:
            raise ConfigError("gap_tolerance must be nonnegative")
        if not 0 < self.integrality_tol < 0.5:
            raise ConfigError("integrality_tol must lie in (0, 0.5)")
        if self.node_selection not in (BEST_BOUND, DFS_DIVE):
            raise ConfigError(f"unknown node_selection {self.node_selection!r}")
        if self.branching != MOST_FRACTIONAL:
            raise ConfigError(f"unknown branching rule {self.branching!r}")
        if self.parallel_nodes < 1:
            raise ConfigError("parallel_nodes must be at least 1")
        if self.node_bound not in (AUTO, COLUMN_EXACT, CONTINUOUS):
            raise ConfigError(f"unknown node_bound {self.node_bound!r}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ConfigError("node_limit must be positive")
        if not (self.tol_feas > 0 and self.tol_bound > 0 and self.max_iter_factor >= 1):
            raise ConfigError("relaxation tolerances must be positive")


@dataclass
class BnbNode:
    fixings: np.ndarray
    parent_bound: float
    depth: int
    warm_start: np.ndarray | None = None
    # filled in when the node is evaluated
    bound: float = -math.inf
    evaluation: object = None
    cut_count: int = 0


@dataclass
class SolveReport:
    incumbent: DbnGraph | None
    incumbent_objective: float
    best_bound: float
    mip_gap: float
    cuts_added: int
    total_cycle_constraints_possible: int | str
    nodes_explored: int
    wall_time: float
    status: str
    warnings: list = field(default_factory=list)
    cuts: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    c: float = math.nan
    relaxation_solves: int = 0

    def to_text(self) -> str:
        """Key-value audit document, one ``key = value`` per line."""
        lines = [
            f"status = {self.status}",
            f"incumbent_objective = {self.incumbent_objective!r}",
            f"best_bound = {self.best_bound!r}",
            f"mip_gap = {self.mip_gap!r}",
            f"cuts_added = {self.cuts_added}",
            f"total_cycle_constraints_possible = {self.total_cycle_constraints_possible}",
            f"nodes_explored = {self.nodes_explored}",
            f"relaxation_solves = {self.relaxation_solves}",
            f"wall_time = {self.wall_time:.6f}",
            f"bigM = {self.c!r}",
        ]
        for k, v in self.settings.items():
            lines.append(f"config.{k} = {v}")
        for w in self.warnings:
            lines.append(f"warning = {w}")
        for cyc in self.cuts:
            lines.append(f"cut = {cyc}")
        if self.incumbent is not None:
            g = self.incumbent
            edges = [f"{i + 1}->{j + 1}" for i, j in g.intra_support.edges]
            lines.append(f"intra_edges = {' '.join(edges)}")
            lag = [f"{i + 1}->{j + 1}@{s + 1}" for s, i, j in zip(*np.nonzero(g.A))]
            lines.append(f"inter_edges = {' '.join(lag)}")
        return "\n".join(lines) + "\n"


def mip_gap(incumbent_obj: float, best_bound: float) -> float:
    if math.isinf(incumbent_obj):
        return math.inf
    return max((incumbent_obj - best_bound) / max(abs(incumbent_obj), GAP_EPS), 0.0)


def lazy_cuts_for(candidate: EdgeSupport, strategy: CutStrategy) -> list[Cycle]:
    cycles = find_cycles(candidate)
    strategy = CutStrategy(strategy)
    if not cycles or strategy is CutStrategy.ALL_CYCLES:
        return cycles
    if strategy is CutStrategy.FIRST_CYCLE:
        return cycles[:1]
    return [min(cycles, key=lambda c: c.k)]  # min keeps the first of equal lengths


class CutPool:
    """Global, append-only pool of cycle cuts with a cached incidence matrix."""

    def __init__(self, d: int):
        self.d = d
        self.cycles: list[Cycle] = []
        self._keys: set = set()
        self._rows: list[np.ndarray] = []
        self._M = np.zeros((0, d * d))
        self._rhs = np.zeros(0)

    def __len__(self) -> int:
        return len(self.cycles)

    def __iter__(self):
        return iter(self.cycles)

    def add(self, cycles) -> int:
        new = 0
        for cyc in cycles:
            key = cyc.canonical()
            if key in self._keys:
                continue
            self._keys.add(key)
            self.cycles.append(cyc)
            row = np.zeros(self.d * self.d)
            for i, j in cyc.edges:
                row[i * self.d + j] = 1.0
            self._rows.append(row)
            new += 1
        return new

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Incidence matrix (cuts x d*d) and right-hand sides ``k - 1``."""
        if self._M.shape[0] != len(self.cycles):
            self._M = np.array(self._rows).reshape(len(self._rows), self.d * self.d)
            self._rhs = np.array([c.k - 1 for c in self.cycles], dtype=float)
        return self._M, self._rhs

    def edge_lists(self) -> tuple[np.ndarray, np.ndarray]:
        """Each cut's flat edge indices, padded with -1, and the right-hand sides."""
        if getattr(self, "_E_size", -1) != len(self.cycles):
            width = max((c.k for c in self.cycles), default=1)
            E = np.full((len(self.cycles), width), -1, dtype=np.int64)
            for r, cyc in enumerate(self.cycles):
                for t, (i, j) in enumerate(cyc.edges):
                    E[r, t] = i * self.d + j
            self._E, self._E_size = E, len(self.cycles)
        return self._E, self.arrays()[1]

    def propagate(self, F: np.ndarray) -> np.ndarray | None:
        """Zero the free edges of cuts left without slack; ``None`` if one is violated."""
        if not self.cycles:
            return F
        d = self.d
        M, rhs = self.arrays()
        intra = F[:d].ravel()
        slack = rhs - M @ (intra == 1)
        if np.any(slack < 0):
            return None
        tight = slack == 0
        if not tight.any():
            return F
        kill = M[tight].any(axis=0) & (intra == FREE)
        if not kill.any():
            return F
        F = F.copy()
        F[:d].reshape(-1)[kill] = 0
        return F

    def violated(self, x: np.ndarray) -> np.ndarray:
        """Indices of cuts the 0/1 intra matrix ``x`` breaks."""
        if not self.cycles:
            return np.zeros(0, dtype=np.int64)
        M, rhs = self.arrays()
        return np.flatnonzero(M @ x.ravel() > rhs)


# ----------------------------------------------------------------------------
# node evaluation


@dataclass
class NodeEval:
    F: np.ndarray  # fixings after propagation
    bound: float
    beta: np.ndarray  # m x d point behind the candidate
    cand: np.ndarray  # d x d rounded intra indicators
    branch: tuple | None = None  # fractional indicator (row, col) to branch on
    complete: bool = True
    relax: object = None
    solved: bool = False  # bound met by a feasible point found at this node
    mu: np.ndarray | None = None  # cut multipliers, indexed like the pool


@dataclass
class ColumnSolution:
    lower: float
    value: float
    beta: np.ndarray
    ones: np.ndarray  # indicator values at the solution
    complete: bool


def _pick_fractional(e, beta, mask, tol):
    """Most fractional indicator under ``mask``; ties go to larger |w| then lowest index."""
    idx = np.flatnonzero(mask & (e > tol) & (e < 1 - tol))
    if idx.size == 0:
        return None
    frac = np.minimum(e[idx], 1 - e[idx])
    order = np.lexsort((idx, -np.abs(beta[idx]), -frac))
    return int(idx[order[0]])


@numba.njit(cache=True, nogil=True)
def _column_bnb(G, b, yy, binary, base_kind, base_rho, pen, c, tol, ptol, int_tol, gap_rel,
                max_iter_factor, stF, stW, stB, state, best_beta, best_fix, budget):
    """Depth-first column branch-and-bound; resumable through its state arrays.

    ``state`` holds ``[stack size, best value, closed bound, nodes]``. Runs until
    the stack empties or ``budget`` nodes have been solved and an incumbent
    exists.
    """
    m = G.shape[0]
    sp = int(state[0])
    best_val = state[1]
    closed = state[2]
    nodes = int(state[3])
    used = 0
    kind = np.empty(m, dtype=np.int8)
    rho = np.empty(m)
    while sp > 0 and (used < budget or best_val == np.inf):
        sp -= 1
        fc = stF[sp].copy()
        pb = stB[sp]
        thr = np.inf
        if best_val < np.inf:
            thr = best_val - gap_rel * max(abs(best_val), GAP_EPS)
        if pb >= thr:
            closed = min(closed, pb)
            continue
        na = 0
        const = 0.0
        for k in range(m):
            if fc[k] != 0:
                na += 1
        active = np.empty(na, dtype=np.int64)
        a = 0
        for k in range(m):
            if fc[k] == 0:
                continue
            active[a] = k
            if binary[k]:
                if fc[k] == 1:
                    kind[a] = BOX
                    rho[a] = 0.0
                    const += pen[k]
                else:
                    kind[a] = LASSO
                    rho[a] = pen[k] / c
            else:
                kind[a] = base_kind[k]
                rho[a] = base_rho[k]
            a += 1
        beta = np.zeros(m)
        for a in range(na):
            k = active[a]
            beta[k] = min(max(stW[sp, k], -c), c)
        primal, dual, sw, conv = cd_column(G, b, yy, active, kind[:na], rho[:na], c, beta, tol,
                                           max_iter_factor * max(na, 1))
        nodes += 1
        used += 1
        bnd = max(dual + const, pb)
        if bnd >= thr:
            closed = min(closed, bnd)
            continue
        # most fractional free binary; ties to larger |w|, then lower index
        pick = -1
        pf = 0.0
        pw = 0.0
        for k in range(m):
            if not binary[k] or fc[k] != FREE:
                continue
            e = abs(beta[k]) / c
            if e <= int_tol or e >= 1.0 - int_tol:
                continue
            f = min(e, 1.0 - e)
            if f > pf or (f == pf and abs(beta[k]) > pw):
                pick, pf, pw = k, f, abs(beta[k])
        if pick < 0:
            # integral point settles the subtree; refit on its support
            fx = fc.copy()
            for k in range(m):
                if binary[k] and fc[k] == FREE:
                    fx[k] = 1 if abs(beta[k]) / c >= 1.0 - int_tol else 0
            na2 = 0
            const2 = 0.0
            for k in range(m):
                if fx[k] != 0:
                    active[na2] = k
                    if binary[k]:
                        if fx[k] == 1:
                            kind[na2] = BOX
                            rho[na2] = 0.0
                            const2 += pen[k]
                    else:
                        kind[na2] = base_kind[k]
                        rho[na2] = base_rho[k]
                    na2 += 1
            for k in range(m):
                if fx[k] == 0:
                    beta[k] = 0.0
            p2, d2, sw2, cv2 = cd_column(G, b, yy, active[:na2], kind[:na2], rho[:na2], c, beta, ptol,
                                         max_iter_factor * max(na2, 1))
            closed = min(closed, bnd)
            if p2 + const2 < best_val:
                best_val = p2 + const2
                best_beta[:] = beta
                best_fix[:] = fx
            continue
        e = abs(beta[pick]) / c
        first = 0 if e >= 0.5 else 1  # pushed first, so explored second
        for v in (first, 1 - first):
            stF[sp, :] = fc
            stF[sp, pick] = v
            stW[sp, :] = beta
            stB[sp] = bnd
            sp += 1
    state[0] = sp
    state[1] = best_val
    state[2] = closed
    state[3] = nodes


COLUMN_BUDGET = 256


def solve_column(rx: ColumnRelaxer, j: int, fix_col: np.ndarray, gap_rel: float,
                 int_tol: float, deadline: float, polish_tol: float = POLISH_TOL) -> ColumnSolution:
    """Exact MIQP of one column under ``fix_col``, acyclicity ignored.

    The deadline is checked between node budgets. A first dive always
    completes, so the returned value is finite even when time has run out.
    """
    m = rx.inst.m
    nb = int(np.count_nonzero(rx.binary & (fix_col == FREE)))
    size = 2 * nb + 2
    stF = np.zeros((size, m), dtype=np.int8)
    stW = np.zeros((size, m))
    stB = np.full(size, -np.inf)
    stF[0] = fix_col
    state = np.array([1.0, np.inf, np.inf, 0.0])
    best_beta = np.zeros(m)
    best_fix = np.zeros(m, dtype=np.int8)
    complete = True
    while True:
        _column_bnb(rx.G, rx.B[j], float(rx.yy[j]), rx.binary, rx.base_kind, rx.base_rho, rx.pen,
                    rx.c, rx.tol, polish_tol, int_tol, gap_rel, rx.max_iter_factor,
                    stF, stW, stB, state, best_beta, best_fix, COLUMN_BUDGET)
        sp = int(state[0])
        if sp == 0:
            break
        if time.perf_counter() > deadline:
            state[2] = min(state[2], stB[:sp].min())
            complete = False
            break
    rx.solves += int(state[3])
    best_val, closed = state[1], state[2]
    ones = np.where(rx.binary, best_fix == 1, best_beta != 0)
    return ColumnSolution(min(closed, best_val), best_val, best_beta, ones, complete)


class _ColumnExactEvaluator:
    def __init__(self, inst: MiqpInstance, cfg: SolverConfig, deadline: float):
        self.inst = inst
        self.cfg = cfg
        self.deadline = deadline
        self.rx = ColumnRelaxer(inst, cfg.tol_bound, cfg.max_iter_factor)
        self.cache: dict = {}
        self.gap_rel = 0.1 * cfg.gap_tolerance

    def column(self, j: int, fix_col: np.ndarray) -> ColumnSolution:
        key = (j, fix_col.tobytes())
        hit = self.cache.get(key)
        if hit is None:
            hit = solve_column(self.rx, j, fix_col, self.gap_rel, self.cfg.integrality_tol,
                               self.deadline)
            if hit.complete:
                self.cache[key] = hit
        return hit

    def evaluate(self, F: np.ndarray, search, parent: NodeEval | None) -> NodeEval | None:
        d, m = self.inst.d, self.inst.m
        beta = np.zeros((m, d))
        cand = np.zeros((d, d), dtype=bool)
        bound = 0.0
        complete = True
        for j in range(d):
            s = self.column(j, F[:, j])
            if math.isinf(s.value):
                return None
            bound += s.lower
            beta[:, j] = s.beta
            cand[:, j] = s.ones[:d]
            complete &= s.complete
        return NodeEval(F, bound, beta, cand, None, complete)

    @property
    def solves(self) -> int:
        return self.rx.solves


@numba.njit(cache=True, nogil=True)
def _subgradient(Tm, others, lowbit, E, rhs, mu, state, best_mu, S, x, target_in, thr, stall_max):
    """Projected subgradient steps on the cut multipliers.

    ``E`` lists each cut's edges as flat indices ``i*d + j`` padded with -1.
    ``state`` is ``[best bound, step scale, stall count, iterations left]``.
    Returns 1 when the current priced argmin (left in ``S`` and ``x``)
    satisfies every cut, else 0 once the budget, the pruning threshold or a
    vanishing step ends the ascent.
    """
    d, P = Tm.shape
    K = others.shape[1]
    nc = E.shape[0]
    price = np.empty(d * d)
    pv = np.empty(K)
    add = np.empty(P)
    g = np.empty(nc)
    while state[3] > 0:
        state[3] -= 1
        price[:] = 0.0
        for c in range(nc):
            if mu[c] != 0.0:
                for t in range(E.shape[1]):
                    e = E[c, t]
                    if e < 0:
                        break
                    price[e] += mu[c]
        L = 0.0
        for j in range(d):
            for k in range(K):
                pv[k] = price[others[j, k] * d + j]
            add[0] = 0.0
            best = Tm[j, 0]
            arg = 0
            for s in range(1, P):
                k = lowbit[s]
                add[s] = add[s ^ (1 << k)] + pv[k]
                v = Tm[j, s] + add[s]
                if v < best:
                    best = v
                    arg = s
            S[j] = arg
            L += best
            for k in range(K):
                x[others[j, k], j] = (arg >> k) & 1
        for c in range(nc):
            L -= mu[c] * rhs[c]
        if L > state[0]:
            state[0] = L
            best_mu[:] = mu
            state[2] = 0
        else:
            state[2] += 1
            if state[2] >= stall_max:
                state[1] *= 0.5
                state[2] = 0
        feasible = True
        norm = 0.0
        for c in range(nc):
            t = -rhs[c]
            for u in range(E.shape[1]):
                e = E[c, u]
                if e < 0:
                    break
                if x[e // d, e % d]:
                    t += 1.0
            g[c] = t
            if t > 0.0:
                feasible = False
            if not (mu[c] <= 0.0 and t < 0.0):
                norm += t * t
        target = target_in
        if target == np.inf:
            target = state[0] + 0.05 * abs(state[0]) + 1.0
        if norm > 0.0:
            step = state[1] * max(target - L, 1e-12 * max(abs(L), 1.0)) / norm
            for c in range(nc):
                mu[c] = max(mu[c] + step * g[c], 0.0)
        if feasible:
            return 1
        if state[0] >= thr or state[1] < 1e-4 or norm == 0.0:
            state[3] = 0
            return 0
    return 0


class _OutOfTime(Exception):
    pass


class _TableEvaluator:
    """Column values for every parent set, and a Lagrangian bound over the cut pool.

    For each column and each subset of the other variables, the column MIQP
    with exactly that parent set switched on is solved once up front. A node
    then restricts each column to the parent sets its fixings allow. With a
    multiplier ``mu_c >= 0`` per pool cut, pricing each edge by the sum of its
    cuts' multipliers and subtracting ``sum mu_c (k_c - 1)`` gives a lower
    bound for any ``mu``; a projected subgradient ascent tightens it. Every
    priced argmin is an integral candidate: its cycles feed the cut pool and
    an acyclic one is offered as incumbent.
    """

    ROOT_ITERS = 200
    NODE_ITERS = 30
    STALL = 5

    def __init__(self, inst: MiqpInstance, cfg: SolverConfig, deadline: float):
        self.inst = inst
        self.cfg = cfg
        d, m = inst.d, inst.m
        K = d - 1
        P = 1 << K
        self.P = P
        self.masks = np.arange(P)
        self.bits = ((self.masks[:, None] >> np.arange(K)) & 1).astype(bool)  # P x K
        self.bitsf = self.bits.astype(float)
        # index of the lowest set bit of every mask (entry 0 unused)
        self.lowbit = np.zeros(P, dtype=np.int64)
        if P > 1:
            m_ = self.masks[1:]
            self.lowbit[1:] = np.log2(m_ & -m_).astype(np.int64)
        self.others = np.array([[i for i in range(d) if i != j] for j in range(d)], dtype=np.int64).reshape(d, K)
        self.rx = ColumnRelaxer(inst, cfg.tol_bound, cfg.max_iter_factor)
        self.T = np.full((d, P), np.inf)
        self.beta = np.zeros((d, P, m))
        base = inst.fixings
        gap_rel = 0.1 * cfg.gap_tolerance
        # with squared lag penalties every entry is a ridge fit on a fixed support
        closed_form = inst.reg.variant == L2_SQUARED
        for j in range(d):
            for mask in range(P):
                fc = base[:, j].copy()
                on = self.bits[mask]
                rows = self.others[j]
                fixed = fc[rows]
                if np.any((fixed == 1) & ~on) or np.any((fixed == 0) & on):
                    continue
                fc[rows] = on.astype(np.int8)
                if closed_form:
                    got = self._ridge(j, fc)
                    if got is not None:
                        self.T[j, mask], self.beta[j, mask] = got
                        continue
                sol = solve_column(self.rx, j, fc, gap_rel, cfg.integrality_tol, deadline)
                if not sol.complete:
                    raise _OutOfTime
                self.T[j, mask] = sol.value
                self.beta[j, mask] = sol.beta
            if time.perf_counter() > deadline:
                raise _OutOfTime

    @property
    def solves(self) -> int:
        return self.rx.solves

    def _ridge(self, j, fc):
        """Exact fit when all indicators are fixed; ``None`` if the box binds."""
        rx = self.rx
        idx = np.flatnonzero(fc != 0)
        if idx.size == 0:
            return float(rx.yy[j]), np.zeros(self.inst.m)
        G = rx.G[np.ix_(idx, idx)].copy()
        lag = ~rx.binary[idx]
        G[lag, lag] += rx.base_rho[idx][lag]
        r = rx.B[j, idx]
        b = np.linalg.lstsq(G, r, rcond=None)[0]
        if np.abs(b).max() >= rx.c:
            return None
        # ||y - Zb||^2 + sum rho b^2 at the stationary point is yy - r.b
        value = float(rx.yy[j] - r @ b) + float(rx.pen[idx][rx.binary[idx]].sum())
        beta = np.zeros(self.inst.m)
        beta[idx] = b
        return value, beta

    def _allowed(self, F):
        d = self.inst.d
        col = F[self.others, np.arange(d)[:, None]]  # d x K fixings of each column's candidates
        w = 1 << np.arange(d - 1)
        one = ((col == 1) * w).sum(axis=1)
        zero = ((col == 0) * w).sum(axis=1)
        m = self.masks[None, :]
        ok = ((m & one[:, None]) == one[:, None]) & ((m & zero[:, None]) == 0)
        return np.where(ok, self.T, np.inf)

    def _argmin(self, Tm, price):
        d = self.inst.d
        cols = np.arange(d)[:, None]
        scores = Tm + price[self.others, cols] @ self.bitsf.T
        S = np.argmin(scores, axis=1)
        x = np.zeros((d, d), dtype=bool)
        x[self.others, cols] = self.bits[S]
        return S, float(scores[np.arange(d), S].sum()), x

    def _point(self, S):
        d = self.inst.d
        beta = np.column_stack([self.beta[j, S[j]] for j in range(d)])
        value = float(self.T[np.arange(d), S].sum())
        return beta, value

    def evaluate(self, F: np.ndarray, search, parent: NodeEval | None) -> NodeEval | None:
        d = self.inst.d
        Tm = self._allowed(F)
        if np.isinf(Tm.min(axis=1)).any():
            return None
        S0, L0, x0 = self._argmin(Tm, np.zeros((d, d)))
        beta0, _ = self._point(S0)
        pool = search.cuts
        mu = np.zeros(len(pool))
        if parent is not None and parent.mu is not None:
            mu[: parent.mu.size] = parent.mu
        best_mu = mu.copy()
        iters = self.ROOT_ITERS if parent is None else self.NODE_ITERS
        state = np.array([L0, 1.0, 0.0, float(iters)])
        S = np.zeros(d, dtype=np.int64)
        x = np.zeros((d, d), dtype=np.bool_)
        solved = False
        tol = 0.1 * self.cfg.gap_tolerance
        while state[3] > 0:
            E, rhs = pool.edge_lists()
            if mu.size < len(pool):
                grow = np.zeros(len(pool) - mu.size)
                mu = np.concatenate([mu, grow])
                best_mu = np.concatenate([best_mu, grow])
            if not _subgradient(Tm, self.others, self.lowbit, E, rhs, mu, state, best_mu, S, x,
                                search.inc_obj, search.threshold(), self.STALL):
                break
            # a priced argmin meeting every cut: either it has a new cycle or it is feasible
            cycles = lazy_cuts_for(EdgeSupport.from_matrix(x), self.cfg.cut_strategy)
            if cycles:
                search.add_cuts(cycles)
                continue
            beta, value = self._point(S)
            if value < search.inc_obj:
                search.accept(NodeEval(F, state[0], beta, x.copy()))
            if value - state[0] <= tol * max(abs(value), GAP_EPS):
                solved = True
                break
        return NodeEval(F, float(state[0]), beta0, x0, None, True, solved=solved, mu=best_mu)


class _ContinuousEvaluator:
    def __init__(self, inst: MiqpInstance, cfg: SolverConfig, deadline: float):
        self.inst = inst
        self.cfg = cfg
        self.rx = ColumnRelaxer(inst, cfg.tol_bound, cfg.max_iter_factor)

    def evaluate(self, F: np.ndarray, search, parent: NodeEval | None) -> NodeEval | None:
        inst, cfg = self.inst, self.cfg
        d = inst.d
        r = solve_relaxation(inst, search.cuts.cycles, F, cfg.tol_bound, None, cfg.tol_feas, cfg.max_iter_factor,
                             self.rx, parent=None if parent is None else parent.relax)
        if math.isinf(r.lower_bound):
            return None
        F = r.fixings
        tol = cfg.integrality_tol
        free_bin = (F == FREE) & self.rx.binary[:, None]
        e, beta = r.e, r.beta
        intra = np.zeros_like(free_bin)
        intra[:d] = free_bin[:d]
        k = _pick_fractional(e.ravel(), beta.ravel(), intra.ravel(), tol)
        cand = (F[:d] == 1) | ((F[:d] == FREE) & (e[:d] >= 1 - tol))
        branch = None if k is None else divmod(k, d)
        return NodeEval(F, r.lower_bound, beta, cand, branch, True, r)

    def inter_branch(self, ev: NodeEval):
        d = self.inst.d
        free_bin = (ev.F == FREE) & self.rx.binary[:, None]
        inter = np.zeros_like(free_bin)
        inter[d:] = free_bin[d:]
        k = _pick_fractional(ev.relax.e.ravel(), ev.beta.ravel(), inter.ravel(), self.cfg.integrality_tol)
        return None if k is None else divmod(k, d)

    @property
    def solves(self) -> int:
        return self.rx.solves


# ----------------------------------------------------------------------------
# the tree search


class _Search:
    def __init__(self, inst: MiqpInstance, cfg: SolverConfig):
        self.inst = inst
        self.cfg = cfg
        self.t0 = time.perf_counter()
        self.deadline = self.t0 + cfg.time_limit
        self.ev = None
        table_fits = inst.d - 1 <= cfg.parent_table_max
        if cfg.node_bound in (AUTO, COLUMN_EXACT) and table_fits:
            try:
                self.ev = _TableEvaluator(inst, cfg, self.deadline)
            except _OutOfTime:
                self.ev = None
        if self.ev is not None:
            pass
        elif cfg.node_bound == COLUMN_EXACT:
            self.ev = _ColumnExactEvaluator(inst, cfg, self.deadline)
        else:
            self.ev = _ContinuousEvaluator(inst, cfg, self.deadline)
        self.polisher = ColumnRelaxer(inst, POLISH_TOL, cfg.max_iter_factor)
        self.cuts = CutPool(inst.d)
        self.inc_obj = math.inf
        self.inc_graph: DbnGraph | None = None
        self.pruned_min = math.inf
        self.unresolved = math.inf  # bound of a node cut short by the deadline
        self.nodes = 0
        self.seq = 0
        self.heap: list = []
        self.stack: list = []
        self.trace: list = []
        self.active: BnbNode | None = None  # node being worked on, not in any queue
        self.pool = ThreadPoolExecutor(cfg.parallel_nodes) if cfg.parallel_nodes > 1 else None

    # -- bookkeeping

    def threshold(self) -> float:
        if math.isinf(self.inc_obj):
            return math.inf
        return self.inc_obj - self.cfg.gap_tolerance * max(abs(self.inc_obj), GAP_EPS)

    def open_min(self, current=None) -> float:
        best = math.inf
        if self.heap:
            best = self.heap[0][0]
        if self.stack:
            best = min(best, min(n.bound for n in self.stack))
        if current is not None:
            best = min(best, current.bound)
        return best

    def lower_bound(self, current=None) -> float:
        lb = min(self.open_min(current), self.pruned_min, self.inc_obj)
        if self.active is not None:
            lb = min(lb, self.active.bound if self.active.evaluation is not None
                     else self.active.parent_bound)
        return lb

    def record(self, current=None):
        lb = self.lower_bound(current)
        self.trace.append((time.perf_counter() - self.t0, lb, self.inc_obj))

    def prune(self, bound: float):
        self.pruned_min = min(self.pruned_min, bound)

    def push(self, node: BnbNode):
        if self.cfg.node_selection == BEST_BOUND:
            heapq.heappush(self.heap, (node.bound, self.seq, node))
        else:
            self.stack.append(node)
        self.seq += 1

    def pop(self) -> BnbNode | None:
        if self.cfg.node_selection == BEST_BOUND:
            return heapq.heappop(self.heap)[2] if self.heap else None
        return self.stack.pop() if self.stack else None

    # -- node work

    def evaluate(self, node: BnbNode) -> NodeEval | None:
        F = self.cuts.propagate(node.fixings)
        node.cut_count = len(self.cuts)
        if F is None:
            return None
        parent = node.evaluation if isinstance(node.evaluation, NodeEval) else None
        ev = self.ev.evaluate(F, self, parent)
        self.nodes += 1
        if ev is not None:
            ev.bound = max(ev.bound, node.parent_bound)
            node.bound = ev.bound
        node.evaluation = ev
        return ev

    def add_cuts(self, cycles) -> int:
        return self.cuts.add(cycles)

    def accept(self, ev: NodeEval):
        inst = self.inst
        d = inst.d
        beta = np.zeros_like(ev.beta)
        for j in range(d):
            fx = ev.F[:, j].copy()
            binary = self.polisher.binary
            on = np.zeros(inst.m, dtype=bool)
            on[:d] = ev.cand[:, j]
            on[d:] = ev.beta[d:, j] != 0
            fx[binary] = np.where(on[binary], 1, 0)
            beta[:, j] = self.polisher.solve(j, fx, ev.beta[:, j]).beta
        g = inst.graph_from_beta(beta)
        sup = g.intra_support
        # the polished support sits inside the candidate, which is acyclic;
        # checked explicitly so it survives python -O
        if find_cycles(sup):
            raise RuntimeError("incumbent with a directed cycle")
        obj = inst.objective(g)
        if obj < self.inc_obj:
            self.inc_obj = obj
            self.inc_graph = g
            self.record()
            return True
        return False

    def violated(self, cand: np.ndarray) -> list[Cycle]:
        return [self.cuts.cycles[k] for k in self.cuts.violated(cand)]

    def cut_branch(self, ev: NodeEval, viol: list[Cycle]):
        """Free edge of a violated cut: all are at 1, so larger |w| then lowest index."""
        best = None
        for cyc in viol:
            for i, j in cyc.edges:
                if ev.F[i, j] != FREE:
                    continue
                key = (-abs(ev.beta[i, j]), i, j)
                if best is None or key < best:
                    best = key
        return None if best is None else (best[1], best[2])

    def children(self, node: BnbNode, ev: NodeEval, at, first: int) -> list[BnbNode]:
        """Both children of ``node``; the one fixing ``at`` to ``first`` leads the list."""
        kids = []
        for v in (first, 1 - first):
            F = ev.F.copy()
            F[at] = v
            kids.append(BnbNode(F, ev.bound, node.depth + 1, ev.beta, evaluation=ev))
        if self.pool is not None:
            evs = list(self.pool.map(self.evaluate, kids))
        else:
            evs = [self.evaluate(k) for k in kids]
        thr = self.threshold()
        out = []
        for k, kev in zip(kids, evs):
            if kev is None:
                continue
            if kev.bound >= thr:
                self.prune(kev.bound)
                continue
            out.append(k)
        return out

    def process(self, node: BnbNode) -> list[BnbNode]:
        """Work one node until it is closed or branched; returns open children."""
        ev = node.evaluation
        if not isinstance(ev, NodeEval) or node.cut_count < len(self.cuts):
            ev = self.evaluate(node) if ev is None or self._stale(node, ev) else ev
        while True:
            if ev is None:
                return []
            if ev.bound >= self.threshold():
                self.prune(ev.bound)
                return []
            if ev.solved:
                return []
            if ev.branch is not None:
                e = abs(ev.beta[ev.branch]) / self.inst.c
                return self.children(node, ev, ev.branch, 0)
            viol = self.violated(ev.cand)
            if viol and time.perf_counter() > self.deadline:
                self.unresolved = min(self.unresolved, ev.bound)  # left open
                return []
            if viol:
                at = self.cut_branch(ev, viol)
                if at is None:
                    return []  # every edge of the cut fixed to 1
                return self.children(node, ev, at, 0)
            cycles = lazy_cuts_for(EdgeSupport.from_matrix(ev.cand), self.cfg.cut_strategy)
            if cycles and time.perf_counter() > self.deadline:
                self.add_cuts(cycles)
                self.unresolved = min(self.unresolved, ev.bound)
                return []
            if cycles:
                self.add_cuts(cycles)
                ev = self.evaluate(node)  # same node, re-solved under the larger pool
                continue
            if isinstance(self.ev, _ContinuousEvaluator):
                at = self.ev.inter_branch(ev)
                if at is not None:
                    e = abs(ev.beta[at]) / self.inst.c
                    return self.children(node, ev, at, 1 if e >= 0.5 else 0)
            self.accept(ev)
            if not ev.complete:
                self.unresolved = min(self.unresolved, ev.bound)
            return []

    def _stale(self, node: BnbNode, ev: NodeEval) -> bool:
        if node.cut_count >= len(self.cuts):
            return False
        if isinstance(self.ev, _ContinuousEvaluator):
            return True
        F = self.cuts.propagate(ev.F)
        return F is None or not np.array_equal(F, ev.F)

    # -- main loop

    def run(self) -> SolveReport:
        inst, cfg = self.inst, self.cfg
        status = OPTIMAL
        root = BnbNode(np.array(inst.fixings), -math.inf, 0)
        fixed_on = EdgeSupport.from_matrix(root.fixings[: inst.d] == 1)
        if find_cycles(fixed_on):
            return self.report(INFEASIBLE_CONFIG, ["fixed-on intra edges contain a directed cycle"])
        current = root
        try:
            while True:
                if current is None:
                    current = self.pop()
                    if current is None:
                        break
                    if current.bound >= self.threshold():
                        self.prune(current.bound)
                        current = None
                        continue
                if time.perf_counter() > self.deadline:
                    self.push(current)
                    status = TIME_LIMIT
                    break
                if cfg.node_limit is not None and self.nodes >= cfg.node_limit:
                    self.push(current)
                    status = NODE_LIMIT
                    break
                self.active = current
                kids = self.process(current)
                self.active = None
                if self.unresolved < math.inf:
                    status = TIME_LIMIT
                    for k in kids:
                        self.push(k)
                    break
                current = None
                if kids:
                    if cfg.node_selection == BEST_BOUND and not isinstance(self.ev, _ContinuousEvaluator):
                        # column-exact bounds tell the children apart: plunge into the better one
                        kids.sort(key=lambda n: n.bound)
                    # otherwise follow the dive preference; best bound resumes when it ends
                    current = kids[0]
                    for k in kids[1:]:
                        self.push(k)
                if self.inc_graph is not None:
                    lb = self.lower_bound(current)
                    if mip_gap(self.inc_obj, lb) <= cfg.gap_tolerance:
                        if current is not None:
                            self.push(current)
                        break
        finally:
            if self.pool is not None:
                self.pool.shutdown()
        if self.inc_graph is None and status == OPTIMAL:
            return self.report(INFEASIBLE_CONFIG, ["no acyclic completion of the fixings"])
        return self.report(status, [])

    def report(self, status: str, warns: list) -> SolveReport:
        inst, cfg = self.inst, self.cfg
        lb = min(self.lower_bound(), self.unresolved)
        if status == OPTIMAL and self.inc_graph is not None:
            lb = min(lb, self.inc_obj)
        gap = mip_gap(self.inc_obj, lb)
        if status == OPTIMAL and gap > cfg.gap_tolerance:
            status = TIME_LIMIT
        g = self.inc_graph
        if g is not None:
            limit = inst.c * (1 - BIGM_WARN_FRACTION)
            if np.abs(g.W).max(initial=0) >= limit or np.abs(g.A).max(initial=0) >= limit:
                warns.append(f"big-M binding: a weight reaches the bound c={inst.c:.6g}")
        self.trace.append((time.perf_counter() - self.t0, lb, self.inc_obj))
        d = inst.d
        possible = count_simple_cycles(d) if d <= 30 else SUPEREXPONENTIAL
        settings = {
            "time_limit": cfg.time_limit,
            "gap_tolerance": cfg.gap_tolerance,
            "cut_strategy": cfg.cut_strategy.value,
            "integrality_tol": cfg.integrality_tol,
            "node_selection": cfg.node_selection,
            "branching": cfg.branching,
            "parallel_nodes": cfg.parallel_nodes,
            "node_bound": cfg.node_bound,
            "node_limit": cfg.node_limit,
            "parent_table_max": cfg.parent_table_max,
            "relax.tol_feas": cfg.tol_feas,
            "relax.tol_bound": cfg.tol_bound,
            "relax.max_iter_factor": cfg.max_iter_factor,
            "polish_tol": POLISH_TOL,
            "reg.variant": inst.reg.variant,
            "reg.lambda": inst.reg.lam,
            "reg.eta": inst.reg.eta,
            "bigM.source": inst.c_source,
        }
        return SolveReport(
            incumbent=g,
            incumbent_objective=self.inc_obj,
            best_bound=lb,
            mip_gap=gap,
            cuts_added=len(self.cuts),
            total_cycle_constraints_possible=possible,
            nodes_explored=self.nodes,
            wall_time=time.perf_counter() - self.t0,
            status=status,
            warnings=warns,
            cuts=list(self.cuts.cycles),
            trace=self.trace,
            settings=settings,
            c=inst.c,
            relaxation_solves=self.ev.solves + self.polisher.solves,
        )


def solve(inst: MiqpInstance, cfg: SolverConfig | None = None) -> SolveReport:
    """Globally minimize score plus penalty over acyclic intra supports."""
    return _Search(inst, cfg or SolverConfig()).run()
