import numpy as np
import pytest

from aact.data import build_grammar, make_anticipation_set


@pytest.fixture(scope="session")
def tiny_grammar():
    return build_grammar(2, 4, 8, seed=3, noise_sigma=0.3)


@pytest.fixture(scope="session")
def tiny_set(tiny_grammar):
    """d=8, A=4, M=6, N=4, k=2: the gradient-check geometry."""
    return make_anticipation_set(tiny_grammar, 6, 6, 4, 2, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
