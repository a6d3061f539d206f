import pytest

from endosim import parse_model, parse_scenario
from endosim.bundled import crash_scenario_text, trauma_model_text


@pytest.fixture(scope="session")
def bench_model():
    return parse_model(trauma_model_text())


@pytest.fixture(scope="session")
def crash_scenario():
    return parse_scenario(crash_scenario_text())


@pytest.fixture(scope="session")
def bench_dir(tmp_path_factory):
    """Directory with copies of the bundled files for CLI runs."""
    d = tmp_path_factory.mktemp("bench")
    (d / "trauma.model").write_text(trauma_model_text())
    (d / "crash.scenario").write_text(crash_scenario_text())
    return d
