"""Collects one verdict line per acceptance criterion for the run summary."""

LINES: list[str] = []


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line
