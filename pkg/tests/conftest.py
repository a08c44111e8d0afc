import numpy as np
import pytest

from swarmteleop.config import AppConfig
from swarmteleop.engine import calibrate_with_pilot, default_course, train_on_session
from swarmteleop.pilots import PilotStrategy

ACCEPTANCE_RESULTS = []


def record_acceptance(name: str, ok: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def config():
    return AppConfig()


@pytest.fixture(scope="session")
def course():
    return default_course()


@pytest.fixture(scope="session")
def rh_session(config):
    strategy = PilotStrategy.from_kind("rh-position", noise_level=0.01, seed=0)
    return calibrate_with_pilot(strategy, config)


@pytest.fixture(scope="session")
def rh_model(config, rh_session):
    model, report = train_on_session(rh_session, config)
    return model


@pytest.fixture(scope="session")
def tilt_session(config):
    strategy = PilotStrategy.from_kind("palm-tilt-velocity", noise_level=0.01, seed=0)
    return calibrate_with_pilot(strategy, config)


@pytest.fixture(scope="session")
def tilt_model(config, tilt_session):
    model, report = train_on_session(tilt_session, config)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
