import numpy as np
import pytest

from dbnmip.datagen import GenConfig, TimeSeriesPanel, draw_stationary, simulate
from dbnmip.graph import DbnGraph
from dbnmip.objective import (FREE, L1, L2_LITERAL_ABS, L2_SQUARED, RegMode, build_instance, fit_term,
                              scale_regularization, score)
from dbnmip.solver import SolverConfig, solve


@pytest.fixture(scope="module")
def sample():
    cfg, g = draw_stationary(GenConfig(d=4, p=2, intra_edge_ratio=1, seed=8, n_samples=120))
    return g, simulate(g, cfg)


def test_empty_model_total_is_data_energy(sample):
    _, panel = sample
    s = score(DbnGraph.empty(4, 2), panel, RegMode(L1, 0, 0))
    assert s.total == pytest.approx(np.sum(panel.X ** 2), rel=1e-14)


def test_noiseless_fit_vanishes():
    cfg, g = draw_stationary(GenConfig(d=5, p=1, intra_edge_ratio=1, seed=2, n_samples=40))
    T = 50 + 1 + 40
    Z = np.zeros((T, 5))
    Z[:51] = np.random.default_rng(0).normal(size=(51, 5))  # drive only until sampling starts
    panel = simulate(g, cfg, noise=Z)
    assert fit_term(g, panel) <= 1e-10 * np.sum(panel.X ** 2)


def test_l1_penalty_arithmetic():
    W = np.zeros((4, 4))
    W[0, 1], W[1, 2], W[0, 3] = 1.0, -0.7, 2.0
    A = np.zeros((1, 4, 4))
    A[0, 0, 0], A[0, 1, 3], A[0, 2, 2], A[0, 3, 1] = 0.3, -0.2, 0.1, 0.4
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4))
    panel = TimeSeriesPanel(X, rng.normal(size=(10, 4)), 1)
    assert score(DbnGraph(W, A), panel, RegMode(L1, 0.1, 0.2)).reg == pytest.approx(1.1)
    sq = score(DbnGraph(W, A), panel, RegMode(L2_SQUARED, 0.1, 0.2)).reg
    assert sq == pytest.approx(0.3 + 0.2 * (0.09 + 0.04 + 0.01 + 0.16))
    ab = score(DbnGraph(W, A), panel, RegMode(L2_LITERAL_ABS, 0.1, 0.2)).reg
    assert ab == pytest.approx(0.3 + 0.2 * 1.0)


def test_dimension_mismatch(sample):
    _, panel = sample
    with pytest.raises(ValueError):
        score(DbnGraph.empty(3, 2), panel, RegMode())
    with pytest.raises(ValueError):
        RegMode(L1, -1.0, 0.0)
    with pytest.raises(ValueError):
        RegMode("L3", 0.0, 0.0)


def test_instance_indicator_layout(sample):
    cfg, g = draw_stationary(GenConfig(d=3, p=1, seed=0, n_samples=50))
    inst = build_instance(simulate(g, cfg), RegMode(), c=10)
    assert inst.c == 10.0 and inst.c_source == "explicit"
    F = inst.fixings
    assert F.shape == (6, 3)  # 9 intra plus 9 inter indicators
    assert np.all(np.diag(F[:3]) == 0)
    assert np.sum(F == FREE) == 6 + 9


def test_auto_bigm_matches_ridge():
    cfg, g = draw_stationary(GenConfig(d=3, p=1, seed=3, n_samples=200))
    panel = simulate(g, cfg)
    Z = panel.Z
    ridge = 1e-3 * panel.n * np.mean(Z ** 2)
    biggest = 0.0
    for j in range(3):
        keep = [k for k in range(Z.shape[1]) if k != j]
        Zk = Z[:, keep]
        coef = np.linalg.solve(Zk.T @ Zk + ridge * np.eye(len(keep)), Zk.T @ panel.X[:, j])
        biggest = max(biggest, np.abs(coef).max())
    inst = build_instance(panel, RegMode())
    assert inst.c_source == "auto"
    assert inst.c == pytest.approx(2 * biggest, rel=1e-12)
    # frozen from the independent computation above
    assert inst.c == pytest.approx(2.5559001389380858, rel=1e-12)


def test_auto_bigm_scale_invariant():
    cfg, g = draw_stationary(GenConfig(d=3, p=1, seed=3, n_samples=200))
    panel = simulate(g, cfg)
    small = TimeSeriesPanel(panel.X * 0.01, panel.Y * 0.01, 1)
    assert build_instance(small, RegMode()).c == pytest.approx(build_instance(panel, RegMode()).c, rel=1e-9)


def test_auto_bigm_floor():
    X = np.random.default_rng(1).normal(size=(500, 3))  # independent columns
    inst = build_instance(TimeSeriesPanel(X, np.zeros((500, 0)), 0), RegMode())
    assert inst.c == 1.0


def test_scale_regularization_examples():
    base = RegMode(L1, 0.05, 0.07)
    assert scale_regularization(1, base) == base
    assert scale_regularization(100, base).lam == pytest.approx(0.5)
    with pytest.raises(ValueError):
        scale_regularization(0, base)


def test_penalty_share_falls_with_n():
    base = RegMode(L1, 0.05, 0.05)
    ratios = []
    for n in (100, 400, 1600):
        cfg, g = draw_stationary(GenConfig(d=4, p=1, intra_edge_ratio=1, seed=0, n_samples=n))
        panel = simulate(g, cfg)
        reg = scale_regularization(n, base)
        rep = solve(build_instance(panel, reg), SolverConfig(time_limit=60))
        s = score(rep.incumbent, panel, reg)
        ratios.append(s.reg / s.fit)
    assert ratios[0] > ratios[1] > ratios[2]


def test_row_permutation_invariance(sample):
    g, panel = sample
    order = np.random.default_rng(0).permutation(panel.n)
    for reg in (RegMode(L1, 0.3, 0.1), RegMode(L2_SQUARED, 0.3, 0.1)):
        assert score(g, panel.permute_rows(order), reg).total == pytest.approx(score(g, panel, reg).total,
                                                                                rel=1e-12)


def test_l1_depends_on_support_only(sample):
    g, panel = sample
    i, j = np.argwhere(g.W != 0)[0]
    W2 = g.W.copy()
    W2[i, j] *= 3.0
    g2 = DbnGraph(W2, g.A)
    assert score(g2, panel, RegMode(L1, 1.0, 1.0)).reg == score(g, panel, RegMode(L1, 1.0, 1.0)).reg
    s, a, b = np.argwhere(g.A != 0)[0]
    A2 = g.A.copy()
    A2[s, a, b] += 0.25
    g3 = DbnGraph(g.W, A2)
    reg = RegMode(L2_SQUARED, 1.0, 0.5)
    delta = score(g3, panel, reg).reg - score(g, panel, reg).reg
    assert delta == pytest.approx(0.5 * (A2[s, a, b] ** 2 - g.A[s, a, b] ** 2), rel=1e-12)


def test_fit_is_convex_on_a_support(sample):
    _, panel = sample
    rng = np.random.default_rng(4)
    mask = np.triu(np.ones((4, 4)), 1)
    for _ in range(50):
        g1 = DbnGraph(rng.normal(size=(4, 4)) * mask, rng.normal(size=(2, 4, 4)))
        g2 = DbnGraph(rng.normal(size=(4, 4)) * mask, rng.normal(size=(2, 4, 4)))
        mid = DbnGraph((g1.W + g2.W) / 2, (g1.A + g2.A) / 2)
        assert fit_term(mid, panel) <= (fit_term(g1, panel) + fit_term(g2, panel)) / 2 + 1e-9


def test_double_sum_matches_matrix_norm(sample):
    _, panel = sample
    rng = np.random.default_rng(5)
    for _ in range(20):
        W = np.triu(rng.normal(size=(4, 4)), 1)
        A = rng.normal(size=(2, 4, 4))
        R = panel.X - panel.X @ W - panel.Y @ A.reshape(8, 4)
        assert fit_term(DbnGraph(W, A), panel) == pytest.approx(np.linalg.norm(R, "fro") ** 2, rel=1e-10)
