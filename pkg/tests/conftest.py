import pytest

_ACCEPTANCE = []


class AcceptanceReport:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, sink):
        self.sink = sink

    def __call__(self, number, title, ok, detail, seconds, budget):
        in_time = seconds < budget
        verdict = "PASS" if ok and in_time else "FAIL"
        line = (f"criterion {number} {verdict}: {title} | {detail} | "
                f"{seconds:.1f}s (budget {budget:.0f}s{'' if in_time else ', EXCEEDED'})")
        self.sink.append(line)
        print(line)
        return ok and in_time


@pytest.fixture
def report():
    return AcceptanceReport(_ACCEPTANCE)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
