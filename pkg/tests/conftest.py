import numpy as np
import pytest

from spinnoise import dynamics, model


@pytest.fixture(scope="session")
def ref():
    return model.ModelParams.reference()


@pytest.fixture(scope="session")
def ref_parts(ref):
    return model.assemble_liouvillian(ref)


@pytest.fixture(scope="session")
def ref_eig(ref_parts):
    return dynamics.eigendecompose(ref_parts)


@pytest.fixture(scope="session")
def ref_sigma(ref_parts):
    return dynamics.steady_state(ref_parts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian_state(rng, excited=0.0):
    """Random density matrix with a prescribed excited-state population."""
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    if excited == 0.0:
        rho[3, :] = 0.0
        rho[:, 3] = 0.0
        rho /= np.trace(rho).real
    return rho


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""

    def emit(criterion: int, title: str, passed: bool, detail: str):
        line = f"criterion {criterion:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
