import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


class Verdict:
    """Records one acceptance criterion's outcome for the end-of-run summary."""

    def __init__(self, number: int):
        self.number = number
        self.recorded = False

    def __call__(self, ok: bool, detail: str) -> None:
        self.recorded = True
        prev = _VERDICTS.get(self.number)
        # a criterion split across several tests passes only if all parts pass
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        _VERDICTS[self.number] = (bool(ok), detail)
        assert ok, detail


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    v = Verdict(marker.args[0])
    yield v
    if not v.recorded:
        prev = _VERDICTS.get(v.number, (False, ""))[1]
        _VERDICTS[v.number] = (False, f"{prev}; {request.node.name} raised before its verdict".lstrip("; "))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
