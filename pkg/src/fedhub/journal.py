"""Crash-safe append-only JSON-lines journal.

All node persistence (fact log, activity log, audit log, plans, sources, run
reports) goes through this one write path: serialize, append one line, flush,
fsync. On replay, an unparseable *final* line is the signature of a torn
write from a crash and is truncated away; anything else unparseable is
corruption and refuses to load, naming the first bad line.
"""

from __future__ import annotations

import json
import os


class CorruptJournal(ValueError):
    def __init__(self, path: str, lineno: int, line: str):
        preview = line if len(line) <= 120 else line[:117] + "..."
        super().__init__(f"{path}: corrupt record at line {lineno}: {preview}")
        self.path = path
        self.lineno = lineno
        self.line = line


def dumps_canonical(obj) -> str:
    """Deterministic JSON encoding used for records and content hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class Journal:
    """One append-only JSON-lines file. Not itself thread-safe; callers lock."""

    def __init__(self, path: str):
        self.path = path
        self._fh = None

    def replay(self, validate=None) -> list:
        """Load all records. ``validate(record, lineno)`` may raise to reject one.

        A torn final line is silently truncated; any other bad line raises
        CorruptJournal.
        """
        records = []
        if not os.path.exists(self.path):
            return records
        with open(self.path, "rb") as fh:
            data = fh.read()
        lines = data.split(b"\n")
        trailing = lines.pop() if lines else b""  # bytes after the last newline
        for lineno, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise CorruptJournal(self.path, lineno, raw.decode("utf-8", "replace")) from None
            if validate is not None:
                validate(rec, lineno)
            records.append(rec)
        if trailing:
            # bytes past the last newline: a torn append whose fsync never
            # returned, so it was never acknowledged; drop it
            with open(self.path, "r+b") as fh:
                fh.truncate(len(data) - len(trailing))
        return records

    def append(self, record: dict) -> None:
        if self._fh is None:
            os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
            self._fh = open(self.path, "ab")
        line = dumps_canonical(record).encode("utf-8") + b"\n"
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
