"""Bundled example model and scenario.

A blunt-trauma triage sketch: a collision sets injury attributes, head
injury drives pupil dilation, and bleeding and head injury drag the
vital-sign trend down. The scenario observes unstable vitals and normal
pupils and asks for the posterior over injury severity and bleeding.
"""

from importlib import resources

__all__ = ["trauma_model_text", "crash_scenario_text", "trauma_model_path", "crash_scenario_path"]


def _text(name: str) -> str:
    return resources.files(__package__).joinpath("data", name).read_text()


def trauma_model_text() -> str:
    return _text("trauma.model")


def crash_scenario_text() -> str:
    return _text("crash.scenario")


def trauma_model_path():
    """Path to the bundled model file (usable while the package is installed)."""
    return resources.files(__package__).joinpath("data", "trauma.model")


def crash_scenario_path():
    return resources.files(__package__).joinpath("data", "crash.scenario")
