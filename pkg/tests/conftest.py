import numpy as np
import pytest
import torch

from pbf_thermal.material import CapacityLaw, ConductivityLaw, MaterialParams

torch.set_num_threads(1)


def constant_material(k=20.0, cp=500.0, rho=8000.0) -> MaterialParams:
    return MaterialParams(rho, ConductivityLaw(k, 0.0, 0.0, 0.0, 0.0), CapacityLaw(cp, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0))


@pytest.fixture
def const_mat():
    return constant_material()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
