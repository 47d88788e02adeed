import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from refspeech.corpus import FeatureTable, SampleRecord

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_table(X, names=None, labels=None, genders=None, task="sustained_vowel",
               dataset="d1", speakers=None):
    """Feature table from a matrix; NaN entries become missing values."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = names or [f"f{k}" for k in range(X.shape[1])]
    n = X.shape[0]
    labels = labels or ["control"] * n
    genders = genders or ["F"] * n
    speakers = speakers or [f"s{i:04d}" for i in range(n)]
    rows = [SampleRecord(f"x{i:04d}", speakers[i], dataset, task, genders[i], 50, labels[i],
                         {f: float(v) for f, v in zip(names, X[i]) if not np.isnan(v)})
            for i in range(n)]
    return FeatureTable(names, rows)


@pytest.fixture
def table_factory():
    return make_table


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, followed by its printed detail."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in name:
                continue
            num = int(name.split("test_criterion_")[1].split("_")[0])
            status = "PASS" if outcome == "passed" else "FAIL"
            if lines.get(num, ("PASS",))[0] == "PASS":
                lines[num] = (status, name.split("::")[1], rep.capstdout.strip())
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            status, test, detail = lines[num]
            terminalreporter.write_line(f"criterion {num}: {status}  ({test})")
            for line in detail.splitlines():
                terminalreporter.write_line(f"    {line}")
