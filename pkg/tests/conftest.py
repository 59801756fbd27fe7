"""Shared fixtures: bundled cases, solved states, and the acceptance summary."""

from __future__ import annotations

import importlib.resources

import numpy as np
import pytest

from geoflow.network import NetworkModel, load_case
from geoflow.powerflow import StateVector, newton_solve, scheduled_injection

CASE_NAMES = ("case2", "case9", "case14", "case39")


def case_path(name: str) -> str:
    ref = importlib.resources.files("geoflow") / "data" / f"{name}.txt"
    return str(ref)


@pytest.fixture(scope="session")
def models() -> dict[str, NetworkModel]:
    return {name: load_case(case_path(name)) for name in CASE_NAMES}


@pytest.fixture(scope="session")
def solved(models) -> dict[str, StateVector]:
    return {
        name: newton_solve(m, scheduled_injection(m))
        for name, m in models.items()
    }


@pytest.fixture(scope="session")
def two_bus(models) -> NetworkModel:
    return models["case2"]


@pytest.fixture(scope="session")
def case9(models) -> NetworkModel:
    return models["case9"]


@pytest.fixture(scope="session")
def case14(models) -> NetworkModel:
    return models["case14"]


@pytest.fixture(scope="session")
def case39(models) -> NetworkModel:
    return models["case39"]


# one line per acceptance criterion, printed after the test run
_ACCEPTANCE_LINES: list[tuple[int, str]] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append((number, f"criterion {number:2d} [{verdict}] {detail}"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
