import numpy as np
import pytest

from dcbackstep.barrier import BarrierSpec, tanh_barrier
from dcbackstep.config import load_preset
from dcbackstep.controller import ControllerState, Gains
from dcbackstep.engine import run
from dcbackstep.plant import DguParams, ZipLoad

L_T = (1.3e-3, 1.2e-3, 1.6e-3, 1.4e-3)
RATIOS = (0.4, 0.3, 0.2, 0.1)
ZIP = ZipLoad(1.0, 5.0, 120.0)


@pytest.fixture(scope="session")
def dgus():
    return [DguParams(24.0, 0.1, l, 0.01) for l in L_T]


@pytest.fixture(scope="session")
def band():
    return BarrierSpec(11.8, 12.2)


@pytest.fixture(scope="session")
def barrier(band):
    return tanh_barrier(band)


@pytest.fixture(scope="session")
def gains():
    return Gains.uniform(RATIOS)


@pytest.fixture
def truth_estimates(dgus):
    return ControllerState.from_truth(dgus, ZIP)


@pytest.fixture(scope="session")
def paper_result():
    """The bundled four-converter scenario, run once per session (~15 s)."""
    return run(load_preset("paper-fig3"))


def random_estimates(rng, n=4):
    return ControllerState(
        theta=rng.uniform(0, 200, 3),
        theta_c=rng.uniform(0, 5000, 3),
        c_inv=rng.uniform(5, 50),
        l_inv=rng.uniform(300, 1200, n),
        lam=rng.uniform(20, 120, n),
        mu=rng.uniform(5e3, 3e4, n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
