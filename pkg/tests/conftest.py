"""Shared fixtures, the incumbent recorder and the acceptance summary."""

from __future__ import annotations

import numpy as np
import pytest

from dbnmip import solver as solver_mod
from dbnmip.graph import is_acyclic

CRITERIA = (
    ("oracle_equivalence", "Oracle equivalence (global optimality)"),
    ("acyclicity", "Acyclicity of every accepted incumbent"),
    ("noiseless_recovery", "Noiseless recovery, d=6 ER1-1"),
    ("gaussian_recovery", "Gaussian-noise recovery, d=10 ER3-1"),
    ("cut_parsimony", "Cut parsimony, d=10 ER3-1"),
    ("bound_gap", "Bound and gap discipline"),
    ("metric_suite", "Metric unit suite"),
    ("simulation_fidelity", "Simulation fidelity"),
    ("determinism", "Determinism of benchmark rows"),
)

# every graph the search accepted as incumbent, across the whole session
ACCEPTED: list = []
# every report any search returned, across the whole session
REPORTS: list = []
_outcomes: dict[str, list[bool]] = {}
_details: dict[str, list[str]] = {}


def _install_recorder():
    original = solver_mod._Search.accept
    if getattr(original, "_recording", False):
        return

    def accept(self, ev):
        improved = original(self, ev)
        if improved:
            g = self.inc_graph
            ACCEPTED.append(is_acyclic(g.intra_support))
        return improved

    accept._recording = True
    solver_mod._Search.accept = accept

    original_report = solver_mod._Search.report

    def report(self, status, warns):
        rep = original_report(self, status, warns)
        REPORTS.append(rep)
        return rep

    solver_mod._Search.report = report


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test backs an acceptance criterion")
    config.addinivalue_line("markers", "audit: session-wide check that must run after every solve")
    _install_recorder()


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return mark.args[0] if mark else None


def pytest_collection_modifyitems(config, items):
    # acceptance tests go last so the audits see every other solve,
    # and the audits themselves run at the very end
    items.sort(key=lambda it: (it.module.__name__.endswith("test_acceptance"),
                               it.get_closest_marker("audit") is not None))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    name = _criterion(item)
    if name and (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        _outcomes.setdefault(name, []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, label in CRITERIA:
        runs = _outcomes.get(name)
        if runs is None:
            continue
        verdict = "PASS" if all(runs) else "FAIL"
        tr.write_line(f"{verdict}  {label}  ({sum(runs)}/{len(runs)} checks)")
        for line in _details.get(name, []):
            tr.write_line(f"      {line}")


@pytest.fixture
def detail(request):
    """Append a line shown under the test's criterion in the summary."""
    name = _criterion(request.node) or request.node.name
    return lambda text: _details.setdefault(name, []).append(text)


@pytest.fixture
def accepted_incumbents():
    return ACCEPTED


@pytest.fixture
def solve_reports():
    return REPORTS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
