import itertools

import numpy as np
import pytest

from dbnmip.errors import DataError
from dbnmip.graph import (Cycle, DbnGraph, EdgeSupport, count_simple_cycles, find_cycles, is_acyclic, read_graph,
                          threshold, write_graph)


def sup(d, *edges):
    # 1-based edges as written in examples
    return EdgeSupport(d, tuple((i - 1, j - 1) for i, j in edges))


def brute_simple_cycles(s: EdgeSupport) -> set:
    """Every simple cycle, as a canonical rotation, by trying vertex orders."""
    E = set(s.edges)
    found = set()
    for k in range(2, s.d + 1):
        for verts in itertools.permutations(range(s.d), k):
            if verts[0] != min(verts):
                continue
            if all((verts[t], verts[(t + 1) % k]) in E for t in range(k)):
                found.add(tuple((verts[t], verts[(t + 1) % k]) for t in range(k)))
    return found


def topo_acyclic(s: EdgeSupport) -> bool:
    indeg = [0] * s.d
    for _, j in s.edges:
        indeg[j] += 1
    ready = [v for v in range(s.d) if indeg[v] == 0]
    seen = 0
    while ready:
        u = ready.pop()
        seen += 1
        for i, j in s.edges:
            if i == u:
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
    return seen == s.d


def test_find_cycles_examples():
    assert find_cycles(EdgeSupport(3)) == []
    two = find_cycles(sup(2, (1, 2), (2, 1)))
    assert len(two) == 1 and two[0].k == 2
    assert find_cycles(sup(3, (1, 2), (1, 3), (2, 3))) == []


def test_find_cycles_covers_brute_force():
    s = sup(4, (1, 2), (2, 3), (3, 1), (3, 4), (4, 3))
    cycles = find_cycles(s)
    assert sorted(c.k for c in cycles) == [2, 3]
    truth = brute_simple_cycles(s)
    assert {c.canonical() for c in cycles} == truth
    # every edge lying on some cycle is covered by a reported cycle
    on_cycle = {e for cyc in truth for e in cyc}
    assert on_cycle <= {e for c in cycles for e in c.edges}


def test_self_loop_and_duplicates_rejected():
    with pytest.raises(ValueError):
        sup(2, (1, 1))
    with pytest.raises(ValueError):
        sup(3, (1, 2), (1, 2))
    with pytest.raises(ValueError):
        sup(2, (1, 3))


def test_is_acyclic_examples():
    assert is_acyclic(EdgeSupport(4))
    full = EdgeSupport(5, tuple((i, j) for i in range(5) for j in range(i + 1, 5)))
    assert is_acyclic(full)


def test_cycle_validation():
    with pytest.raises(ValueError):
        Cycle(((0, 1),))
    with pytest.raises(ValueError):
        Cycle(((0, 1), (2, 0)))
    with pytest.raises(ValueError):
        Cycle(((0, 1), (1, 0), (0, 1), (1, 0)))


def test_random_digraphs_agree_with_topological_sort():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        M = rng.random((d, d)) < rng.uniform(0.05, 0.4)
        np.fill_diagonal(M, False)
        s = EdgeSupport.from_matrix(M)
        cycles = find_cycles(s)
        assert is_acyclic(s) == (not cycles) == topo_acyclic(s)
        for c in cycles:
            # replay: closed, simple and made of support edges
            assert all(e in s for e in c.edges)
            assert c.edges[-1][1] == c.edges[0][0]
            assert len(set(c.vertices)) == c.k


def test_count_simple_cycles():
    assert count_simple_cycles(3) == 5  # three 2-cycles and two 3-cycles
    assert count_simple_cycles(10, 3) == 45 + 240
    d = 4
    full = EdgeSupport(d, tuple((i, j) for i in range(d) for j in range(d) if i != j))
    assert count_simple_cycles(d) == len(brute_simple_cycles(full))


def graph_with(W, A=None):
    W = np.asarray(W, float)
    return DbnGraph(W, A if A is not None else np.zeros((0,) + W.shape))


def test_threshold_examples():
    g = graph_with([[0, 0.4], [-1.2, 0]])
    assert threshold(g, 0.0) == g
    t = threshold(g, 0.5)
    assert t.W[1, 0] == -1.2 and t.W[0, 1] == 0
    assert t.intra_support.edges == ((1, 0),)


def test_threshold_properties():
    rng = np.random.default_rng(3)
    W = np.triu(rng.normal(size=(5, 5)), 1)
    A = rng.normal(size=(2, 5, 5))
    g = DbnGraph(W, A)
    prev = g
    for delta in (0.1, 0.3, 0.7, 1.5):
        t = threshold(g, delta)
        assert threshold(t, delta) == t
        assert t.intra_support.issubset(prev.intra_support)
        assert np.all(prev.inter_masks | ~t.inter_masks)
        assert is_acyclic(t.intra_support)
        kept = t.W != 0
        assert np.array_equal(t.W[kept], g.W[kept])
        prev = t
    with pytest.raises(ValueError):
        threshold(g, -1.0)


def test_dbngraph_invariants():
    with pytest.raises(ValueError):
        graph_with([[1.0, 0], [0, 0]])
    with pytest.raises(ValueError):
        DbnGraph(np.zeros((2, 2)), np.zeros((1, 3, 3)))
    g = DbnGraph(np.array([[0, 1.0], [1.0, 0]]))
    assert not g.is_feasible()


def test_graph_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    W = np.triu(rng.normal(size=(4, 4)) * 1e3, 1)
    A = rng.normal(size=(2, 4, 4)) / 7
    g = DbnGraph(W, A)
    path = tmp_path / "g.graph"
    write_graph(g, path)
    assert path.read_text().splitlines()[0] == "4 2"
    h = read_graph(path)
    assert h == g
    # 15 significant digits survive even if a reader reformats
    assert np.allclose(h.A, A, rtol=1e-15, atol=0)


@pytest.mark.parametrize("text", ["", "2\n", "2 1\n0 1\n0 0\n", "2 0\n0 1 2\n0 0\n", "2 0\n0 x\n0 0\n"])
def test_read_graph_errors(tmp_path, text):
    path = tmp_path / "bad.graph"
    path.write_text(text)
    with pytest.raises(DataError):
        read_graph(path)
