import pytest

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


class AcceptanceLog:
    def record(self, criterion: str, ok: bool, detail: str = "") -> bool:
        prev = _ACCEPTANCE.get(criterion)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}" if detail else prev[1]
        _ACCEPTANCE[criterion] = (ok, detail)
        print(f"{criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
