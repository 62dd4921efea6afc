import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Recorder for an acceptance test: ``criterion(ok, detail)`` logs a PASS/FAIL line and asserts ``ok``."""
    cid = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str) -> None:
        _LINES[cid] = f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail

    yield record
    _LINES.setdefault(cid, f"criterion {cid:2d}: FAIL  raised before a result was recorded")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for cid in sorted(_LINES):
            terminalreporter.write_line(_LINES[cid])
