import itertools

import numpy as np
import pytest

from dbnmip.datagen import GenConfig, NoiseSpec, TimeSeriesPanel, draw_stationary, simulate
from dbnmip.errors import ConfigError
from dbnmip.graph import DbnGraph, EdgeSupport, is_acyclic
from dbnmip.objective import L1, L2_LITERAL_ABS, L2_SQUARED, RegMode, build_instance, score
from dbnmip.oracle import exhaustive_min


def instance(d=3, p=1, seed=0, reg=RegMode(L1, 1.0, 1.0), n=100):
    cfg, g = draw_stationary(GenConfig(d=d, p=p, intra_edge_ratio=min(1.0, (d - 1) / 2), seed=seed, n_samples=n))
    return build_instance(simulate(g, cfg), reg)


def test_two_variable_zero_noise():
    # the root column is never explained, so the edge must leave the
    # lower-energy variable: |weight| > 1 makes 1->2 the winner
    W = np.array([[0.0, 1.5], [0.0, 0.0]])
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=50)
    X = np.column_stack([x1, 1.5 * x1])
    inst = build_instance(TimeSeriesPanel(X, np.zeros((50, 0)), 0), RegMode(L1, 0.1, 0.0), c=10)
    res = exhaustive_min(inst)
    assert res.best_graph.intra_support.edges == ((0, 1),)
    assert res.supports_evaluated == 3
    assert res.best_objective == pytest.approx(x1 @ x1 + 0.1, rel=1e-12)
    assert np.allclose(res.best_graph.W, W)


def test_three_variables_have_25_dags():
    count = 0
    pairs = [(i, j) for i in range(3) for j in range(3) if i != j]
    for bits in itertools.product((0, 1), repeat=6):
        if is_acyclic(EdgeSupport(3, tuple(e for e, b in zip(pairs, bits) if b))):
            count += 1
    assert count == 25
    assert exhaustive_min(instance(d=3)).supports_evaluated == 25


def test_huge_penalty_gives_empty_graph():
    res = exhaustive_min(instance(d=3, reg=RegMode(L1, 1e9, 1e9)))
    assert not res.best_graph.W.any() and not res.best_graph.A.any()


@pytest.mark.parametrize("reg", [RegMode(L1, 2.0, 1.0), RegMode(L2_SQUARED, 2.0, 1.0),
                                 RegMode(L2_LITERAL_ABS, 2.0, 5.0)])
def test_result_is_consistent(reg):
    inst = instance(d=3, p=2, seed=1, reg=reg)
    res = exhaustive_min(inst)
    assert is_acyclic(res.best_graph.intra_support)
    assert res.best_objective == score(res.best_graph, inst.panel, reg).total
    assert np.abs(res.best_graph.W).max() <= inst.c and np.abs(res.best_graph.A).max() <= inst.c


def test_beats_random_acyclic_graphs():
    inst = instance(d=3, seed=4, reg=RegMode(L2_SQUARED, 1.0, 0.5))
    res = exhaustive_min(inst)
    rng = np.random.default_rng(0)
    for _ in range(200):
        W = np.triu(rng.normal(size=(3, 3)), 1)
        g = DbnGraph(W, rng.normal(size=(1, 3, 3)) * 0.3)
        assert res.best_objective <= inst.objective(g) + 1e-9


def test_invariant_under_relabeling():
    inst = instance(d=4, seed=2, reg=RegMode(L1, 1.5, 1.0))
    base = exhaustive_min(inst)
    perm = [2, 0, 3, 1]
    moved = build_instance(inst.panel.relabel(perm), inst.reg, c=inst.c)
    res = exhaustive_min(moved)
    assert res.best_objective == pytest.approx(base.best_objective, rel=1e-9)
    back = np.argsort(perm)
    assert inst.objective(res.best_graph.relabel(back)) == pytest.approx(base.best_objective, rel=1e-9)


def test_box_is_respected():
    cfg = GenConfig(d=2, p=0, n_samples=200, noise=NoiseSpec("gaussian", 0.1))
    panel = simulate(DbnGraph(np.array([[0.0, 3.0], [0.0, 0.0]])), cfg)
    res = exhaustive_min(build_instance(panel, RegMode(L1, 0.0, 0.0), c=1.0))
    assert np.abs(res.best_graph.W).max() <= 1.0 + 1e-12


def test_guards():
    with pytest.raises(ConfigError):
        exhaustive_min(instance(d=3), max_d=2)
    with pytest.raises(ConfigError):
        exhaustive_min(instance(d=2, p=3))
