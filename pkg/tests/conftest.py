from __future__ import annotations

import pytest

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


@pytest.fixture
def detail(request):
    """Tests append human-readable measurements here; shown in the summary."""
    notes: list[str] = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        notes = "; ".join(getattr(item, "_criterion_notes", []))
        _CRITERIA[num] = ("PASS" if rep.passed else "FAIL", title, notes)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title, notes = _CRITERIA[num]
        line = f"criterion {num}: {status}  {title}"
        if notes:
            line += f"  [{notes}]"
        terminalreporter.write_line(line)
