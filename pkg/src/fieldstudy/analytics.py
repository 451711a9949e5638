"""Monitoring analytics computed from the event store: daily query and
active-participant series, query/context correlation rows, participant
liveness, and collection-gap detection.

Pure reads; every result is fully determined by store contents and the
supplied parameters, never by wall-clock time. Day boundaries are UTC
midnight.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from typing import Any

from fieldstudy.config import StudyConfig, effective_collectors
from fieldstudy.errors import StudyError
from fieldstudy.records import (
    BookmarkRecord,
    QueryRecord,
    RecordKind,
    SensorRecord,
    record_to_wire,
)
from fieldstudy.storage import EventStore, utc_day

# Join rule defaults: a GPS fix joins a query if it is the most recent fix at
# or before the query and no staler than twice the location sampling rate;
# app usage events join within +/- one hour.
DEFAULT_CONTEXT_WINDOW_MS = 3_600_000
STALENESS_RATE_FACTOR = 2


class LivenessStatus(str, Enum):
    ACTIVE = "ACTIVE"
    STALLED = "STALLED"
    LOST = "LOST"


@dataclass(frozen=True)
class LivenessReport:
    installation_id: str
    last_record_ms: int | None
    status: LivenessStatus
    reason: str

    def to_wire(self) -> dict[str, Any]:
        return {
            "installation_id": self.installation_id,
            "last_record_ms": self.last_record_ms,
            "status": self.status.value,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class CorrelationRow:
    """One dashboard row: a query joined with its contemporaneous context."""

    query: QueryRecord
    location: tuple[SensorRecord, int] | None  # (GPS record, staleness_ms)
    starred: tuple[BookmarkRecord, ...]
    app_usage: tuple[SensorRecord, ...]
    task_id: str | None

    def to_wire(self) -> dict[str, Any]:
        return {
            "query": record_to_wire(self.query),
            "location": None if self.location is None else {
                "record": record_to_wire(self.location[0]),
                "staleness_ms": self.location[1],
            },
            "starred": [record_to_wire(b) for b in self.starred],
            "app_usage": [record_to_wire(r) for r in self.app_usage],
            "task_id": self.task_id,
        }


def _date_span(from_date: str, to_date: str) -> list[str]:
    start = date.fromisoformat(from_date)
    end = date.fromisoformat(to_date)
    if start > end:
        raise StudyError("inverted_range", f"{from_date} is after {to_date}")
    days = []
    cursor = start
    while cursor <= end:
        days.append(cursor.isoformat())
        cursor += timedelta(days=1)
    return days


def daily_query_counts(store: EventStore, from_date: str, to_date: str) -> dict[str, int]:
    """Queries per UTC day, inclusive date range, zero-filled."""
    counts = {day: 0 for day in _date_span(from_date, to_date)}
    for record in store.iter_records():
        if isinstance(record, QueryRecord):
            day = utc_day(record.t_ms)
            if day in counts:
                counts[day] += 1
    return counts


def daily_active_participants(store: EventStore, from_date: str, to_date: str) -> dict[str, int]:
    """Distinct installations with at least one record per UTC day."""
    days = _date_span(from_date, to_date)
    active: dict[str, set[str]] = {day: set() for day in days}
    for record in store.iter_records():
        day = utc_day(record.t_ms)
        if day in active:
            active[day].add(record.installation_id)
    return {day: len(active[day]) for day in days}


def correlate_queries(store: EventStore, installation_id: str | None,
                      from_ms: int, to_ms: int,
                      context_window_ms: int = DEFAULT_CONTEXT_WINDOW_MS,
                      location_rate_ms: int = 180_000) -> list[CorrelationRow]:
    """One row per query in [from_ms, to_ms), each joined with the last GPS fix
    at or before it (staleness-capped), its bookmarks, and nearby app usage."""
    if from_ms > to_ms:
        raise StudyError("inverted_range", f"from_ms {from_ms} > to_ms {to_ms}")
    if context_window_ms <= 0:
        raise StudyError("invalid_window", "context_window_ms must be positive")

    installations = ([installation_id] if installation_id is not None
                     else store.installations_with_data())
    max_staleness = STALENESS_RATE_FACTOR * location_rate_ms
    rows: list[CorrelationRow] = []
    for inst in installations:
        queries: list[QueryRecord] = []
        fixes: list[SensorRecord] = []
        usage: list[SensorRecord] = []
        bookmarks_by_query: dict[str, list[BookmarkRecord]] = {}
        for record in store.iter_records(inst):
            if isinstance(record, QueryRecord):
                if from_ms <= record.t_ms < to_ms:
                    queries.append(record)
            elif isinstance(record, BookmarkRecord):
                bookmarks_by_query.setdefault(record.source_query_record, []).append(record)
            elif isinstance(record, SensorRecord):
                if record.kind == RecordKind.GPS:
                    fixes.append(record)
                elif record.kind == RecordKind.APP_USAGE_EVENT:
                    usage.append(record)
        fixes.sort(key=lambda r: (r.t_ms, r.record_id))
        usage.sort(key=lambda r: (r.t_ms, r.record_id))
        fix_times = [f.t_ms for f in fixes]
        usage_times = [u.t_ms for u in usage]

        for q in queries:
            location = None
            i = bisect_right(fix_times, q.t_ms) - 1
            if i >= 0:
                staleness = q.t_ms - fixes[i].t_ms
                if staleness <= max_staleness:
                    location = (fixes[i], staleness)
            lo = bisect_right(usage_times, q.t_ms - context_window_ms - 1)
            hi = bisect_right(usage_times, q.t_ms + context_window_ms)
            starred = sorted(bookmarks_by_query.get(q.record_id, ()),
                             key=lambda b: (b.t_ms, b.record_id))
            rows.append(CorrelationRow(
                query=q,
                location=location,
                starred=tuple(starred),
                app_usage=tuple(usage[lo:hi]),
                task_id=q.task_id,
            ))
    rows.sort(key=lambda row: (row.query.t_ms, row.query.record_id))
    return rows


def liveness(store: EventStore, registered: list[str], now: int,
             stalled_after_ms: int, lost_after_ms: int) -> list[LivenessReport]:
    """Classify every registered installation by how long it has been silent."""
    if not 0 < stalled_after_ms < lost_after_ms:
        raise StudyError("invalid_thresholds",
                         "need 0 < stalled_after_ms < lost_after_ms")
    last_seen: dict[str, int] = {}
    for record in store.iter_records():
        previous = last_seen.get(record.installation_id, -1)
        if record.t_ms > previous:
            last_seen[record.installation_id] = record.t_ms
    reports = []
    for installation_id in sorted(registered):
        last = last_seen.get(installation_id)
        if last is None:
            reports.append(LivenessReport(installation_id, None,
                                          LivenessStatus.LOST, "never reported"))
            continue
        age = now - last
        if age < stalled_after_ms:
            status = LivenessStatus.ACTIVE
        elif age < lost_after_ms:
            status = LivenessStatus.STALLED
        else:
            status = LivenessStatus.LOST
        reports.append(LivenessReport(installation_id, last, status,
                                      f"last record {age} ms ago"))
    return reports


def collection_gaps(store: EventStore, installation_id: str, kind: RecordKind,
                    from_ms: int, to_ms: int, cfg: StudyConfig) -> list[tuple[int, int]]:
    """Maximal intervals where consecutive records of ``kind`` sit more than
    twice the configured rate apart; a gap opens one rate after the last
    record seen and closes at the next one. Silence before the first or
    after the last record in range is not reported."""
    rates = effective_collectors(cfg)
    if kind not in rates:
        raise StudyError("disabled_kind", f"{kind.value} is not an enabled collector")
    rate = rates[kind]
    times = [r.t_ms for r in store.read_range(installation_id, from_ms, to_ms,
                                              kinds={kind.value})]
    gaps = []
    for t1, t2 in zip(times, times[1:]):
        if t2 - t1 > 2 * rate:
            gaps.append((t1 + rate, t2))
    return gaps
