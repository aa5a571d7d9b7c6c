import math

import numpy as np
import pytest

from nustab.modal_core import FractionalDiag, Pointwise, SystemSpec, Weak, build_modal_system
from nustab.operator_assembly import assemble

GOLDEN_XI0 = (math.sqrt(5.0) - 1.0) / 2.0

# (name, system kind, damping) for every system used by the reproduction recipes.
GOLDEN_SYSTEMS = [
    ("wave-one-minus-xi", "wave1d", Weak("one_minus_xi")),
    ("wave-xi2", "wave1d", Weak("xi2_one_minus_xi")),
    ("beam-one-minus-xi", "beam1d", Weak("one_minus_xi")),
    ("fractional-0.25", "wave1d", FractionalDiag(0.25)),
    ("fractional-0.5", "wave1d", FractionalDiag(0.5)),
    ("pointwise-golden", "wave1d", Pointwise(GOLDEN_XI0)),
]


def make_system(kind, damping, N):
    ms = build_modal_system(SystemSpec(kind, damping, N).validate())
    return ms, assemble(ms)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240521))


@pytest.fixture(params=GOLDEN_SYSTEMS, ids=[g[0] for g in GOLDEN_SYSTEMS])
def golden_system(request):
    _, kind, damping = request.param
    return make_system(kind, damping, 40)


@pytest.fixture(scope="session")
def wave_weak_60():
    return make_system("wave1d", Weak("one_minus_xi"), 60)


# One "criterion k: PASS/FAIL ..." line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
