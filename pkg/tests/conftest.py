import csv
from pathlib import Path

import pytest


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def two_table_dir(tmp_path):
    """Minimal deepmatcher-style directory: one offer per table, one train match."""
    write_csv(tmp_path / "tableA.csv", ["id", "title"], [[0, "abt x"]])
    write_csv(tmp_path / "tableB.csv", ["id", "title"], [[0, "buy x"]])
    write_csv(tmp_path / "train.csv", ["ltable_id", "rtable_id", "label"], [[0, 0, 1]])
    write_csv(tmp_path / "valid.csv", ["ltable_id", "rtable_id", "label"], [])
    write_csv(tmp_path / "test.csv", ["ltable_id", "rtable_id", "label"], [])
    return tmp_path


# acceptance report ------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok, detail: str) -> None:
    """Record one pass/fail/skip line; printed in the terminal summary."""
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES.append(f"criterion {number}: {status}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
