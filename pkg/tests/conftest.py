from typing import Optional

import pytest

from llm_ham.backends import AgentBackendConfig, BackendKind

_CRITERIA: list[tuple[str, str]] = []


def record_criterion(label: str, passed: Optional[bool]) -> None:
    """``passed=None`` marks a criterion that could not run here."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    _CRITERIA.append((label, status))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in _CRITERIA:
        terminalreporter.write_line(f"{status}  {label}")


@pytest.fixture
def oracle_config():
    return AgentBackendConfig(backend_kind=BackendKind.ORACLE)
