from datetime import date, datetime

import pytest

from stepforecast.ingest import RawRecord, SynthConfig, generate_synthetic_corpus


def ts(text: str) -> datetime:
    """'2015-03-10 08:15' or a full ISO timestamp."""
    return datetime.fromisoformat(text.replace(" ", "T"))


def rec(user, start, end, steps, source=None) -> RawRecord:
    return RawRecord(user, ts(start), ts(end), steps, source)


def day(text: str) -> date:
    return date.fromisoformat(text)


@pytest.fixture(scope="session")
def anomaly_corpus():
    """50 users x 60 days with every injected idiosyncrasy switched on."""
    return generate_synthetic_corpus(SynthConfig(
        n_users=50, n_days=60, seed=20150301, duplicate_rate=0.05, outlier_day_rate=0.03,
        nowear_day_rate=0.05, coarse_record_rate=0.05))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(SynthConfig(
        n_users=8, n_days=30, seed=3, duplicate_rate=0.02, outlier_day_rate=0.02,
        nowear_day_rate=0.03, coarse_record_rate=0.03))


# -- acceptance reporting ---------------------------------------------------------
# test_acceptance records one line per criterion; the lines are printed in the
# terminal summary so they show up without -s.

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Call with (passed, detail); records a PASS/FAIL line, then asserts."""
    def record(passed: bool, detail: str = ""):
        name = request.node.name.removeprefix("test_")
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
