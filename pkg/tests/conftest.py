import itertools
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def enumerate_round(n: int, a: int, b: int) -> dict[tuple[int, int], Fraction]:
    """Exact next-state law by listing all n^n pull vectors (tiny n only)."""
    states = [1] * a + [2] * b + [0] * (n - a - b)
    out = Counter()
    for pulls in itertools.product(range(n), repeat=n):
        na = nb = 0
        for own, j in zip(states, pulls):
            seen = states[j]
            if own == 0:
                new = seen
            elif seen in (0, own):
                new = own
            else:
                new = 0
            na += new == 1
            nb += new == 2
        out[(na, nb)] += 1
    total = n**n
    return {k: Fraction(v, total) for k, v in out.items()}


@pytest.fixture(scope="session")
def brute_force():
    return enumerate_round


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(key: str, ok: bool, detail: str) -> bool:
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
