import numpy as np
import pytest

from convbt.market_data import rebase
from convbt.synth import SynthSpec, generate_panel

ACCEPTANCE_LINES: list[str] = []


def synth_panel(seed=1, assets=5, days=300, drift=0.0002, vol=0.01, loading=0.3, target_index=0, regimes=None):
    regimes = regimes or [dict(length=days - 1, drift=drift, vol=vol)]
    spec = SynthSpec.from_dict(
        dict(seed=seed, assets=assets, days=days, loading=loading, target_index=target_index, regimes=regimes)
    )
    return generate_panel(spec)


@pytest.fixture
def panel5():
    return synth_panel(seed=11, assets=5, days=300)


@pytest.fixture
def rpanel5(panel5):
    return rebase(panel5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
