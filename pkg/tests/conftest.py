import numpy as np
import pytest

from lspe_kit.kernel import Field, Rng
from lspe_kit.model import MeasurementSystem, NoiseModel, SignalPrior


def scalar_system(field=Field.COMPLEX, a=1.0, sigma_x_sq=1.0):
    return MeasurementSystem(np.array([[a]]), SignalPrior(1, sigma_x_sq, field), NoiseModel.noiseless(1))


def gaussian_system(n, m, field=Field.COMPLEX, seed=0, noise=None, rho=0.0):
    from lspe_kit.model import Ensemble, build_system
    kind = "iid_gaussian" if rho == 0 else f"row_correlated:{rho}"
    ens = Ensemble.parse(kind, m, n, field)
    return build_system(ens, SignalPrior(n, 1.0, field), noise or NoiseModel.noiseless(m), Rng(seed))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
