"""Shared pytest plumbing: acceptance outcomes are collected and summarized."""

import pytest

ACCEPTANCE = []


class _Recorder:
    def __call__(self, criterion, passed, detail):
        ACCEPTANCE.append((criterion, bool(passed), detail))
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        print(line)
        return passed


@pytest.fixture
def record():
    """``record(criterion, passed, detail)`` logs one acceptance line."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
