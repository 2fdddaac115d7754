"""Append-only run log, streamed to disk as newline-delimited JSON.

Record kinds: meta, selected, proposed, expanded, pruned, simulated,
weights_updated, refined. Records carry tokens_in/tokens_out whenever the
event consumed a proposer or executor request.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping


class RunLog:
    def __init__(self, records: Iterable[Mapping] | None = None):
        self.records: list[dict] = [dict(r) for r in records] if records else []

    def append(self, event: str, **fields) -> dict:
        record = {"event": event, **fields}
        self.records.append(record)
        return record

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def by_event(self, event: str) -> list[dict]:
        return [r for r in self.records if r["event"] == event]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson())

    @staticmethod
    def load(path: str | Path) -> "RunLog":
        records = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed log line: {exc}") from None
        return RunLog(records)
