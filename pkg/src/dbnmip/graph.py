"""Directed-graph primitives shared by every other module.

Vertices are 0-indexed in code. Anything printed for a person (reports,
cycle listings) goes through :func:`format_edge`, which shifts to 1-based
labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

Edge = tuple[int, int]


def format_edge(edge: Edge) -> str:
    return f"{edge[0] + 1}->{edge[1] + 1}"


@dataclass(frozen=True)
class EdgeSupport:
    """A set of directed edges on ``d`` vertices without self-loops."""

    d: int
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("vertex count must be nonnegative")
        seen = set()
        clean = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on vertex {i + 1}")
            if not (0 <= i < self.d and 0 <= j < self.d):
                raise ValueError(f"edge {format_edge((i, j))} out of range for d={self.d}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge {format_edge((i, j))}")
            seen.add((i, j))
            clean.append((i, j))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "EdgeSupport":
        """Support of the nonzero off-diagonal entries of a square matrix."""
        M = np.asarray(M)
        rows, cols = np.nonzero(M)
        return cls(M.shape[0], tuple((int(i), int(j)) for i, j in zip(rows, cols) if i != j))

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, edge) -> bool:
        return tuple(edge) in set(self.edges)

    def to_matrix(self) -> np.ndarray:
        M = np.zeros((self.d, self.d), dtype=bool)
        for i, j in self.edges:
            M[i, j] = True
        return M

    def issubset(self, other: "EdgeSupport") -> bool:
        return set(self.edges) <= set(other.edges)


@dataclass(frozen=True)
class Cycle:
    """A simple directed cycle stored as its chain of edges."""

    edges: tuple[Edge, ...]

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ValueError("a cycle needs at least two edges")
        for (_, head), (tail, _) in zip(edges, edges[1:] + edges[:1]):
            if head != tail:
                raise ValueError(f"edges do not chain: {[format_edge(e) for e in edges]}")
        verts = [i for i, _ in edges]
        if len(set(verts)) != len(verts):
            raise ValueError("cycle revisits a vertex")

    @property
    def k(self) -> int:
        return len(self.edges)

    @property
    def vertices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.edges)

    def canonical(self) -> tuple[Edge, ...]:
        """Rotation starting at the smallest vertex; used to deduplicate cut pools."""
        verts = self.vertices
        r = verts.index(min(verts))
        return self.edges[r:] + self.edges[:r]

    def __str__(self) -> str:
        return " ".join(format_edge(e) for e in self.edges)


def find_cycles(support: EdgeSupport) -> list[Cycle]:
    """Cycles closed by DFS back edges, one per back edge.

    A single traversal starts at every unvisited vertex in ascending order and
    visits successors in ascending order, so the output is deterministic. Each
    back edge ``u -> v`` closes the cycle running along the DFS stack from
    ``v`` to ``u``. The list is empty exactly when the graph is acyclic.
    """
    d = support.d
    succ: list[list[int]] = [[] for _ in range(d)]
    for i, j in support.edges:
        succ[i].append(j)
    for s in succ:
        s.sort()

    state = [0] * d  # 0 unseen, 1 on stack, 2 finished
    pos = [-1] * d
    cycles: list[Cycle] = []
    for root in range(d):
        if state[root]:
            continue
        path = [root]
        nxt = [0]
        state[root] = 1
        pos[root] = 0
        while path:
            u = path[-1]
            if nxt[-1] < len(succ[u]):
                v = succ[u][nxt[-1]]
                nxt[-1] += 1
                if state[v] == 0:
                    state[v] = 1
                    pos[v] = len(path)
                    path.append(v)
                    nxt.append(0)
                elif state[v] == 1:
                    loop = path[pos[v]:]
                    cycles.append(Cycle(tuple(zip(loop, loop[1:] + [v]))))
            else:
                state[u] = 2
                pos[u] = -1
                path.pop()
                nxt.pop()
    return cycles


def is_acyclic(support: EdgeSupport) -> bool:
    return not find_cycles(support)


def count_simple_cycles(d: int, max_len: int | None = None) -> int:
    """Number of simple directed cycles of length 2..max_len in the complete digraph."""
    from math import comb, factorial

    top = d if max_len is None else min(max_len, d)
    return sum(comb(d, k) * factorial(k - 1) for k in range(2, top + 1))


@dataclass(frozen=True, eq=False)
class DbnGraph:
    """Intra-slice weights ``W`` (d x d) and lag matrices ``A`` (p x d x d).

    ``A[s]`` holds the effect of lag ``s + 1``; entry ``[s, i, j]`` is the edge
    from variable ``i`` at time ``t - s - 1`` to variable ``j`` at time ``t``.
    """

    W: np.ndarray
    A: np.ndarray = field(default=None)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"W must be square, got shape {W.shape}")
        d = W.shape[0]
        if np.any(np.diag(W) != 0):
            raise ValueError("W must have a zero diagonal")
        A = np.zeros((0, d, d)) if self.A is None else np.array(self.A, dtype=float)
        if A.ndim == 2 and A.size == 0:
            A = A.reshape(0, d, d)
        if A.ndim != 3 or A.shape[1:] != (d, d):
            raise ValueError(f"A must have shape (p, {d}, {d}), got {A.shape}")
        W.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "A", A)

    @classmethod
    def empty(cls, d: int, p: int) -> "DbnGraph":
        return cls(np.zeros((d, d)), np.zeros((p, d, d)))

    @classmethod
    def from_stacked(cls, W: np.ndarray, A_stacked: np.ndarray) -> "DbnGraph":
        """Build from the (p*d) x d vertical stack used in the regression form."""
        d = W.shape[0]
        return cls(W, np.asarray(A_stacked).reshape(-1, d, d))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def A_stacked(self) -> np.ndarray:
        return self.A.reshape(self.p * self.d, self.d)

    @property
    def intra_support(self) -> EdgeSupport:
        return EdgeSupport.from_matrix(self.W)

    @property
    def inter_masks(self) -> np.ndarray:
        # lag edges may join a variable to its own past, so these are plain
        # boolean masks rather than EdgeSupports
        return self.A != 0

    def inter_edge_count(self) -> int:
        return int(np.count_nonzero(self.A))

    def intra_edge_count(self) -> int:
        return int(np.count_nonzero(self.W))

    def is_feasible(self) -> bool:
        return is_acyclic(self.intra_support)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DbnGraph):
            return NotImplemented
        return (
            self.W.shape == other.W.shape
            and self.A.shape == other.A.shape
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.A, other.A)
        )

    __hash__ = None

    def relabel(self, perm: Sequence[int]) -> "DbnGraph":
        """New graph in which old vertex ``perm[k]`` becomes vertex ``k``."""
        perm = np.asarray(perm)
        return DbnGraph(self.W[np.ix_(perm, perm)], self.A[:, perm][:, :, perm])


def threshold(g: DbnGraph, delta: float) -> DbnGraph:
    """Zero every weight with magnitude below ``delta``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    W = np.where(np.abs(g.W) < delta, 0.0, g.W)
    A = np.where(np.abs(g.A) < delta, 0.0, g.A)
    return DbnGraph(W, A)


def _format_rows(M: np.ndarray) -> Iterable[str]:
    for row in M:
        yield " ".join(repr(float(x)) for x in row)


def write_graph(g: DbnGraph, path) -> None:
    """Plain-text matrix format: header ``d p``, then W, then A_1..A_p."""
    lines = [f"{g.d} {g.p}"]
    lines.extend(_format_rows(g.W))
    for a in g.A:
        lines.extend(_format_rows(a))
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path) -> DbnGraph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 2:
        raise DataError(f"{path}: header must be 'd p'")
    try:
        d, p = int(rows[0][0]), int(rows[0][1])
    except ValueError:
        raise DataError(f"{path}: header must be two integers 'd p'") from None
    body = rows[1:]
    if len(body) != d * (p + 1):
        raise DataError(f"{path}: expected {d * (p + 1)} matrix rows, found {len(body)}")
    for k, r in enumerate(body, start=2):
        if len(r) != d:
            raise DataError(f"{path}: line {k} has {len(r)} values, expected {d}")
    try:
        M = np.array(body, dtype=float)
        return DbnGraph(M[:d], M[d:].reshape(p, d, d))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
