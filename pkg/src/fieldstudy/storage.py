"""Append-only event store partitioned by (installation, UTC day).

Layout under the store root:

    {installation_id}/{YYYY-MM-DD}.ndjson   one canonical record per line
    dedup.journal                           one line per accepted batch

A batch is ingested at most once, keyed on (installation_id, batch_seq);
record ids are a second dedup net so a record can never land twice even if
the process dies between a partition append and the journal append (the
journal is written last, so a retried batch re-checks record ids).
Reloading scans partitions and replays the journal.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from fieldstudy.errors import StudyError
from fieldstudy.records import (
    EventBatch,
    Record,
    canonical_json,
    kind_label,
    parse_record,
    record_to_wire,
    validate_batch,
)

DEDUP_JOURNAL = "dedup.journal"

STORED = "STORED"
DUPLICATE = "DUPLICATE"


def utc_day(t_ms: int) -> str:
    """UTC calendar date of an epoch-ms timestamp, ISO formatted."""
    return datetime.fromtimestamp(t_ms / 1000.0, tz=timezone.utc).date().isoformat()


def day_start_ms(day: str) -> int:
    dt = datetime.strptime(day, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


class EventStore:
    """Durable record store with idempotent batch ingestion."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._batch_keys: set[tuple[str, int]] = set()
        self._record_ids: set[str] = set()
        self._counts_by_kind: Counter[str] = Counter()
        self._counts_by_partition: Counter[tuple[str, str]] = Counter()
        self._last_arrival_ms: dict[str, int] = {}
        self._load()
        self._journal = open(self.root / DEDUP_JOURNAL, "a", encoding="utf-8")

    def _load(self) -> None:
        for installation_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            installation_id = installation_dir.name
            for part in sorted(installation_dir.glob("*.ndjson")):
                day = part.stem
                with open(part, encoding="utf-8") as handle:
                    for line in handle:
                        line = line.strip()
                        if not line:
                            continue
                        data = json.loads(line)
                        self._record_ids.add(data["record_id"])
                        label = data.get("kind") or data["record_type"].upper()
                        self._counts_by_kind[label] += 1
                        self._counts_by_partition[(installation_id, day)] += 1
        journal = self.root / DEDUP_JOURNAL
        if journal.exists():
            with open(journal, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self._batch_keys.add((entry["installation_id"], entry["batch_seq"]))
                    previous = self._last_arrival_ms.get(entry["installation_id"], -1)
                    self._last_arrival_ms[entry["installation_id"]] = max(
                        previous, entry["arrival_ms"])

    def close(self) -> None:
        self._journal.close()

    # -- writes -----------------------------------------------------------------

    def ingest(self, batch: EventBatch, arrival_ms: int) -> dict[str, Any]:
        """Store a batch atomically; duplicates ack positively without effect."""
        with self._lock:
            key = (batch.installation_id, batch.batch_seq)
            if key in self._batch_keys:
                return {"status": DUPLICATE, "batch_seq": batch.batch_seq}

            violations = validate_batch(batch)
            if violations:
                raise StudyError("invalid_record", "; ".join(violations[:5]))

            by_partition: dict[str, list[tuple[Record, bytes]]] = {}
            for record in batch.records:
                if record.record_id in self._record_ids:
                    continue  # already stored through an earlier overlapping batch
                line = canonical_json(record_to_wire(record))
                by_partition.setdefault(utc_day(record.t_ms), []).append((record, line))

            for day, rows in sorted(by_partition.items()):
                partition_dir = self.root / batch.installation_id
                partition_dir.mkdir(exist_ok=True)
                with open(partition_dir / f"{day}.ndjson", "ab") as handle:
                    for record, line in rows:
                        handle.write(line + b"\n")
                for record, _ in rows:
                    self._record_ids.add(record.record_id)
                    self._counts_by_kind[kind_label(record)] += 1
                    self._counts_by_partition[(batch.installation_id, day)] += 1

            self._batch_keys.add(key)
            previous = self._last_arrival_ms.get(batch.installation_id, -1)
            self._last_arrival_ms[batch.installation_id] = max(previous, arrival_ms)
            self._journal.write(canonical_json({
                "installation_id": batch.installation_id,
                "batch_seq": batch.batch_seq,
                "arrival_ms": arrival_ms,
                "records": len(batch.records),
            }).decode("utf-8") + "\n")
            self._journal.flush()
            return {"status": STORED, "batch_seq": batch.batch_seq}

    def has_batch(self, installation_id: str, batch_seq: int) -> bool:
        return (installation_id, batch_seq) in self._batch_keys

    # -- reads ------------------------------------------------------------------

    def read_range(self, installation_id: str, from_ms: int, to_ms: int,
                   kinds: set[str] | None = None) -> list[Record]:
        """Records of one installation with from_ms <= t_ms < to_ms, ordered by
        (t_ms, record_id); optionally filtered to the given kind labels."""
        if from_ms > to_ms:
            raise StudyError("inverted_range", f"from_ms {from_ms} > to_ms {to_ms}")
        out = [
            record
            for record in self.iter_records(installation_id)
            if from_ms <= record.t_ms < to_ms
            and (kinds is None or kind_label(record) in kinds)
        ]
        out.sort(key=lambda r: (r.t_ms, r.record_id))
        return out

    def iter_records(self, installation_id: str | None = None) -> Iterator[Record]:
        """Stream stored records (all installations unless one is given),
        partition by partition in name order, lines in arrival order."""
        if installation_id is not None:
            dirs = [self.root / installation_id]
        else:
            dirs = sorted(p for p in self.root.iterdir() if p.is_dir())
        for installation_dir in dirs:
            if not installation_dir.is_dir():
                continue
            for part in sorted(installation_dir.glob("*.ndjson")):
                with open(part, encoding="utf-8") as handle:
                    for line in handle:
                        line = line.strip()
                        if line:
                            yield parse_record(line)

    def installations_with_data(self) -> list[str]:
        return sorted({inst for inst, _ in self._counts_by_partition})

    def stats(self) -> dict[str, Any]:
        """Exact live counters plus on-disk partition sizes."""
        bytes_by_partition = {}
        for (installation_id, day) in sorted(self._counts_by_partition):
            path = self.root / installation_id / f"{day}.ndjson"
            bytes_by_partition[f"{installation_id}/{day}"] = (
                path.stat().st_size if path.exists() else 0
            )
        return {
            "total_records": sum(self._counts_by_kind.values()),
            "records_by_kind": dict(sorted(self._counts_by_kind.items())),
            "records_by_partition": {
                f"{inst}/{day}": count
                for (inst, day), count in sorted(self._counts_by_partition.items())
            },
            "bytes_by_partition": bytes_by_partition,
            "batches": len(self._batch_keys),
            "last_arrival_ms": dict(sorted(self._last_arrival_ms.items())),
        }
