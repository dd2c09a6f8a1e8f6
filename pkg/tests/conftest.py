import pytest

from utpswarm.config import PeerClass, ScenarioConfig

KIB = 1024


def small_config(name="small", leechers=4, disposition=31, file_size=1024 * KIB,
                 chunk_size=256 * KIB, **kw):
    classes = kw.pop("classes", None) or [PeerClass("L", leechers, disposition)]
    return ScenarioConfig(name=name, leechers=classes, file_size=file_size,
                          chunk_size=chunk_size, **kw)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
