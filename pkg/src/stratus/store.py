"""Append-only run history store: one JSON record per line, fsync on append."""

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .workflow import RunRecord


class StoreError(Exception):
    pass


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    workflow_id: str
    submission_ms: int
    final_state: str
    makespan_ms: int


def _makespan(record: RunRecord) -> int:
    started = [i for i in record.instances if i.start_ms is not None]
    ended = [i for i in started if i.end_ms is not None]
    if not started or not ended:
        return 0
    return max(i.end_ms for i in ended) - min(i.start_ms for i in started)


class RunStore:
    """Crash-safe run history at a single file path.  Appends are flushed
    and fsynced before returning; reads scan the whole file."""

    def __init__(self, path: "str | Path"):
        self.path = Path(path)

    def append(self, record: RunRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        line = json.dumps(record.to_record(), sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def load_all(self) -> list[RunRecord]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(RunRecord.from_record(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise StoreError(f"{self.path}:{lineno}: bad record: {exc}") from None
        return records

    def list_previous_executions(self, workflow_id: str) -> list[RunSummary]:
        """Summaries of persisted runs of one workflow, newest submission
        first; ties keep the later-appended record first."""
        matches = [
            (position, record)
            for position, record in enumerate(self.load_all())
            if record.workflow_id == workflow_id
        ]
        matches.sort(key=lambda pair: (-pair[1].submission_ms, -pair[0]))
        return [
            RunSummary(
                run_id=record.run_id,
                workflow_id=record.workflow_id,
                submission_ms=record.submission_ms,
                final_state=record.final_state.value,
                makespan_ms=_makespan(record),
            )
            for _, record in matches
        ]
