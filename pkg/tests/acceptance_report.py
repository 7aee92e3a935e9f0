"""Collects one human-readable line per acceptance check for the run summary."""

LINES: list[str] = []


def record(number: int, passed: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    LINES.append(line)
    return line
