import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phasefrac import MaterialParams, build_structured_mesh

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the terminal summary, then return the flag."""

    def report(name: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        print(_ACCEPTANCE_LINES[-1])
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def mat():
    return MaterialParams(lam=121.15, mu=80.77, g_c=2.7e-3, l=0.0075)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def perturbed_mesh(nx, ny, rng, amp=0.2, rect=(0.0, 0.0, 1.0, 1.0)):
    """Structured mesh with interior vertices jittered by ``amp`` cell widths."""
    base = build_structured_mesh(nx, ny, rect)
    h = min((rect[2] - rect[0]) / nx, (rect[3] - rect[1]) / ny)
    interior = base.boundary_markers == 0
    shift = interior[:, None] * rng.uniform(-amp * h, amp * h, base.vertices.shape)
    return base.with_vertices(base.vertices + shift)
