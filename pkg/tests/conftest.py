import json

import pytest

from canard.harness import bundled_examples, config_from_dict
from canard.model import QuadraticCoefficients, SimulationWindow

CANONICAL = (
    "fast_predator_a", "fast_predator_b", "fast_predator_c",
    "fast_prey_a", "fast_prey_b", "fast_prey_c",
)


def example_dict(name):
    return json.loads(bundled_examples()[name].read_text())


def example_config(name):
    return config_from_dict(example_dict(name))


@pytest.fixture
def p1():
    return (QuadraticCoefficients(1.0, 1.0, -1.0, -1.0, -1.0, 1.0),
            SimulationWindow(t0=0.0, T=1.0, x0=0.5, y0=0.5))


@pytest.fixture
def p2():
    return (QuadraticCoefficients(1.0, -1.0, -1.0, 1.0, -1.0, -2.0),
            SimulationWindow(t0=0.0, T=5.0, x0=0.2, y0=0.5))
