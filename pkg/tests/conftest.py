from __future__ import annotations

from pathlib import Path

import pytest

from mfyield.cli import RunConfig, bundled
from mfyield.fileio import read_population
from mfyield.frames import population_from_partitions
from mfyield.simulate import SynthSpec, generate_population

FIXTURES = Path(__file__).parent / "fixtures"
DESK = bundled("desk")

# three overlapping frames with unequal psu sizes (see tests/oracles/weights_3frame.py)
THREE_FRAME_PARTS = {
    1: [("L1", ("u1", "u2", "u3", "u4")), ("L2", ("u5", "u6", "u7")), ("L3", ("u8", "u9", "u10"))],
    2: [("S1", ("u1", "u5", "u8", "u9")), ("S2", ("u2", "u6")), ("S3", ("u3", "u4"))],
    3: [("T1", ("u1", "u2", "u5", "u10", "u7")), ("T2", ("u6", "u9"))],
}
THREE_FRAME_SHARED = ["u1", "u2", "u5", "u6", "u9", "u10"]
THREE_FRAME_YIELDS = {
    "u1": 3120.0, "u2": 2875.0, "u3": 3410.0, "u4": 2990.0, "u5": 3655.0,
    "u6": 2710.0, "u7": 3305.0, "u8": 3050.0, "u9": 3280.0, "u10": 2940.0,
}


def desk_instance(name: str):
    """Population and design of a bundled desk instance."""
    cfg = RunConfig.load(str(DESK / name / "oracle.ini"))
    return read_population(DESK / name), cfg.design()


@pytest.fixture
def three_frame():
    return population_from_partitions(THREE_FRAME_YIELDS, THREE_FRAME_PARTS)


@pytest.fixture(scope="session")
def synth_world():
    return generate_population(SynthSpec())


_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
