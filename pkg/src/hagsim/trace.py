"""Append-only packet trace (tcpdump/ifstat analogue) and its CSV form."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterator, NamedTuple

CSV_COLUMNS = ("time_us", "link", "event", "kind", "size_bytes", "flow", "subflow", "conn_seq")

SEND = "send"
DELIVER = "deliver"
DROP = "drop"


class TraceRecord(NamedTuple):
    time: int
    link: str
    event: str
    kind: str
    size: int
    flow: int
    subflow: int
    conn_seq: int


class Trace:
    def __init__(self, enabled: bool = True):
        self.records: list[tuple] = []
        self.enabled = enabled

    def log(self, time, link, event, kind, size, flow, subflow, conn_seq) -> None:
        if self.enabled:
            self.records.append((time, link, event, kind, size, flow, subflow, conn_seq))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        for rec in self.records:
            yield TraceRecord(*rec)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        buf.writelines("%d,%s,%s,%s,%d,%d,%d,%d\n" % rec for rec in self.records)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"unexpected trace header {header}")
            for row in reader:
                trace.records.append(
                    (int(row[0]), row[1], row[2], row[3], int(row[4]), int(row[5]), int(row[6]), int(row[7]))
                )
        return trace
