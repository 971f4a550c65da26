from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
    """Remember one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:2d}: {title}" + (f" ({detail})" if detail else ""))
    print(ACCEPTANCE[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
