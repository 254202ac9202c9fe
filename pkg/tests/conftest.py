import time

import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line per acceptance criterion and echo it."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


@pytest.fixture(scope="session")
def default_ablation():
    """The four shortcut/power cells trained once on the default desk-scale config."""
    from addersr.theorems import ablation_contrast
    from addersr.training import TrainConfig

    t0 = time.perf_counter()
    table = ablation_contrast(TrainConfig())
    return table, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
