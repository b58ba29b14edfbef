"""Collects one verdict line per acceptance check for the terminal summary."""

RESULTS: list[tuple[str, bool, str, float]] = []


def record(label: str, passed: bool, detail: str, seconds: float):
    RESULTS.append((label, passed, detail, seconds))
    print(line(label, passed, detail, seconds))


def line(label, passed, detail, seconds):
    return f"{'PASS' if passed else 'FAIL'}  {label}  ({seconds:.1f} s)  {detail}"

