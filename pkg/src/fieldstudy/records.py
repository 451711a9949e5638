"""Domain records shared by every component: the sensor/phone-data taxonomy,
participant activity records, upload batches, and their validation and
canonical wire encoding.

Records are immutable values. The canonical encoding is a JSON object with
sorted keys (one record per line in stores), carrying a ``record_type``
discriminator so the union round-trips.
"""

from __future__ import annotations

import json
import re
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union


class RecordKind(str, Enum):
    """Sensor and phone-data kinds sampled by the background collectors."""

    GPS = "GPS"
    ACCELEROMETER = "ACCELEROMETER"
    GYROSCOPE = "GYROSCOPE"
    AMBIENT_LIGHT = "AMBIENT_LIGHT"
    WIFI = "WIFI"
    CELLULAR = "CELLULAR"
    BATTERY = "BATTERY"
    SCREEN_EVENT = "SCREEN_EVENT"
    APP_USAGE_STATS = "APP_USAGE_STATS"
    APP_USAGE_EVENT = "APP_USAGE_EVENT"


class InteractionAction(str, Enum):
    TAP = "TAP"
    SCROLL = "SCROLL"


class AppUsageEventType(str, Enum):
    LAUNCH = "LAUNCH"
    INTERACT = "INTERACT"
    CLOSE = "CLOSE"
    INSTALL = "INSTALL"
    UNINSTALL = "UNINSTALL"


class QuestionnairePhase(str, Enum):
    ONBOARDING_SURVEY = "ONBOARDING_SURVEY"
    PRE_TASK = "PRE_TASK"
    POST_TASK = "POST_TASK"


# Installation ids are opaque, URL-safe, 8-64 chars, stable per virtual device.
_INSTALLATION_ID_RE = re.compile(r"^[A-Za-z0-9_-]{8,64}$")


def is_valid_installation_id(value: str) -> bool:
    return isinstance(value, str) and bool(_INSTALLATION_ID_RE.match(value))


def new_record_id(rng=None) -> str:
    """Fresh v4-style record id; drawn from ``rng`` when determinism matters."""
    if rng is None:
        return str(uuid.uuid4())
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


@dataclass(frozen=True, slots=True)
class SensorRecord:
    """One timestamped snapshot from a background collector."""

    record_id: str
    installation_id: str
    kind: RecordKind
    t_ms: int
    payload: dict[str, Any]


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """An in-app interaction (tap or scroll) on a named screen."""

    record_id: str
    installation_id: str
    t_ms: int
    action: InteractionAction
    screen: str
    detail: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class QueryRecord:
    """A search query issued by the participant, optionally inside a task."""

    record_id: str
    installation_id: str
    t_ms: int
    query_text: str
    result_count: int
    task_id: str | None = None


@dataclass(frozen=True, slots=True)
class BookmarkRecord:
    """A starred result; links back to the query it came from."""

    record_id: str
    installation_id: str
    t_ms: int
    url: str
    source_query_record: str
    task_id: str | None = None


@dataclass(frozen=True, slots=True)
class QuestionnaireRecord:
    """Onboarding-survey or pre-/post-task questionnaire completion state."""

    record_id: str
    installation_id: str
    t_ms: int
    phase: QuestionnairePhase
    url: str
    completed: bool
    task_id: str | None = None


Record = Union[
    SensorRecord, InteractionRecord, QueryRecord, BookmarkRecord, QuestionnaireRecord
]


@dataclass(frozen=True, slots=True)
class EventBatch:
    """The unit of upload: an installation's buffered records plus a monotone
    per-installation sequence number that servers use as the idempotency key."""

    installation_id: str
    batch_seq: int
    created_ms: int
    records: tuple[Record, ...]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_gps(p: dict, out: list[str]) -> None:
    if _is_num(p.get("lat")) and not -90.0 <= p["lat"] <= 90.0:
        out.append("GPS lat out of [-90,90]")
    if _is_num(p.get("lon")) and not -180.0 <= p["lon"] <= 180.0:
        out.append("GPS lon out of [-180,180]")
    if _is_num(p.get("accuracy_m")) and p["accuracy_m"] < 0:
        out.append("GPS accuracy_m negative")


def _check_battery(p: dict, out: list[str]) -> None:
    if _is_num(p.get("percent")) and not 0 <= p["percent"] <= 100:
        out.append("percent out of [0,100]")


def _check_cellular(p: dict, out: list[str]) -> None:
    lvl = p.get("signal_level")
    if isinstance(lvl, int) and not isinstance(lvl, bool) and not 0 <= lvl <= 4:
        out.append("signal_level out of [0,4]")


def _check_screen(p: dict, out: list[str]) -> None:
    if p.get("state") not in ("on", "off"):
        out.append("screen state must be 'on' or 'off'")


def _check_usage_stats(p: dict, out: list[str]) -> None:
    usage = p.get("usage_ms")
    if not isinstance(usage, dict):
        out.append("usage_ms must be a map app -> foreground-ms")
        return
    for app, ms in usage.items():
        if not isinstance(app, str) or not isinstance(ms, int) or isinstance(ms, bool) or ms < 0:
            out.append(f"usage_ms entry {app!r} must map to a non-negative integer")


def _check_usage_event(p: dict, out: list[str]) -> None:
    if not isinstance(p.get("app"), str) or not p.get("app"):
        out.append("app must be a non-empty string")
    if p.get("event") not in {e.value for e in AppUsageEventType}:
        out.append(f"unknown app usage event {p.get('event')!r}")


# (required keys, expected scalar types, extra range check) per kind.
# Payload keys must match exactly; unknown or missing keys are violations.
_PAYLOAD_SCHEMAS: dict[RecordKind, tuple[dict[str, Any], Any]] = {
    RecordKind.GPS: ({"lat": _is_num, "lon": _is_num, "accuracy_m": _is_num}, _check_gps),
    RecordKind.ACCELEROMETER: ({"x": _is_num, "y": _is_num, "z": _is_num}, None),
    RecordKind.GYROSCOPE: ({"x": _is_num, "y": _is_num, "z": _is_num}, None),
    RecordKind.AMBIENT_LIGHT: ({"lux": _is_num}, None),
    RecordKind.WIFI: (
        {"ssid_hash": lambda v: isinstance(v, str), "connected": lambda v: isinstance(v, bool)},
        None,
    ),
    RecordKind.CELLULAR: (
        {
            "network_type": lambda v: isinstance(v, str),
            "signal_level": lambda v: isinstance(v, int) and not isinstance(v, bool),
        },
        _check_cellular,
    ),
    RecordKind.BATTERY: ({"percent": _is_num}, _check_battery),
    RecordKind.SCREEN_EVENT: ({"state": lambda v: isinstance(v, str)}, _check_screen),
    RecordKind.APP_USAGE_STATS: ({"usage_ms": lambda v: isinstance(v, dict)}, _check_usage_stats),
    RecordKind.APP_USAGE_EVENT: (
        {"app": lambda v: isinstance(v, str), "event": lambda v: isinstance(v, str)},
        _check_usage_event,
    ),
}


def _validate_common(record: Record, out: list[str]) -> None:
    try:
        uuid.UUID(record.record_id)
    except (ValueError, AttributeError, TypeError):
        out.append(f"record_id {record.record_id!r} is not a UUID")
    if not is_valid_installation_id(record.installation_id):
        out.append(f"installation_id {record.installation_id!r} is not well-formed")
    if not isinstance(record.t_ms, int) or isinstance(record.t_ms, bool) or record.t_ms < 0:
        out.append("t_ms must be a non-negative integer")


def validate_record(record: Record) -> list[str]:
    """Return every schema/invariant violation of ``record``; empty means ok."""
    out: list[str] = []
    _validate_common(record, out)

    if isinstance(record, SensorRecord):
        schema = _PAYLOAD_SCHEMAS.get(record.kind)
        if schema is None:
            out.append(f"unknown record kind {record.kind!r}")
            return out
        expected, extra_check = schema
        if not isinstance(record.payload, dict):
            out.append("payload must be a map")
            return out
        missing = expected.keys() - record.payload.keys()
        unknown = record.payload.keys() - expected.keys()
        for key in sorted(missing):
            out.append(f"{record.kind.value} payload missing key {key!r}")
        for key in sorted(unknown):
            out.append(f"{record.kind.value} payload has unknown key {key!r}")
        for key, check in expected.items():
            if key in record.payload and not check(record.payload[key]):
                out.append(f"{record.kind.value} payload key {key!r} has wrong type")
        if extra_check is not None and not missing:
            extra_check(record.payload, out)
    elif isinstance(record, InteractionRecord):
        if record.action not in (InteractionAction.TAP, InteractionAction.SCROLL):
            out.append(f"unknown interaction action {record.action!r}")
        if not isinstance(record.screen, str) or not record.screen:
            out.append("screen must be a non-empty string")
        if not isinstance(record.detail, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in record.detail.items()
        ):
            out.append("detail must be a string-to-string map")
    elif isinstance(record, QueryRecord):
        if not isinstance(record.query_text, str) or not record.query_text:
            out.append("query_text must be non-empty")
        if not isinstance(record.result_count, int) or isinstance(record.result_count, bool) \
                or record.result_count < 0:
            out.append("result_count must be a non-negative integer")
    elif isinstance(record, BookmarkRecord):
        if not _looks_like_url(record.url):
            out.append(f"url {record.url!r} is not a URL")
        if not isinstance(record.source_query_record, str) or not record.source_query_record:
            out.append("source_query_record must reference a query record")
    elif isinstance(record, QuestionnaireRecord):
        if not isinstance(record.phase, QuestionnairePhase):
            out.append(f"unknown questionnaire phase {record.phase!r}")
        if not _looks_like_url(record.url):
            out.append(f"url {record.url!r} is not a URL")
        if not isinstance(record.completed, bool):
            out.append("completed must be a boolean")
    else:
        out.append(f"unknown record type {type(record).__name__}")
    return out


def _looks_like_url(value: Any) -> bool:
    return isinstance(value, str) and "://" in value and not value.startswith("://")


def validate_batch(batch: EventBatch) -> list[str]:
    """Batch-level violations: sequence, non-emptiness, per-record checks."""
    out: list[str] = []
    if not is_valid_installation_id(batch.installation_id):
        out.append(f"installation_id {batch.installation_id!r} is not well-formed")
    if not isinstance(batch.batch_seq, int) or isinstance(batch.batch_seq, bool) \
            or batch.batch_seq < 0:
        out.append("batch_seq must be a non-negative integer")
    if not batch.records:
        out.append("batch must contain at least one record")
    for i, record in enumerate(batch.records):
        if record.installation_id != batch.installation_id:
            out.append(f"record {i} carries installation_id {record.installation_id!r}, "
                       f"batch is {batch.installation_id!r}")
        for violation in validate_record(record):
            out.append(f"record {i}: {violation}")
    return out


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

_RECORD_TYPES: dict[str, type] = {
    "sensor": SensorRecord,
    "interaction": InteractionRecord,
    "query": QueryRecord,
    "bookmark": BookmarkRecord,
    "questionnaire": QuestionnaireRecord,
}
_TYPE_NAMES = {cls: name for name, cls in _RECORD_TYPES.items()}

# Stored/filterable kind labels: the ten sensor kinds plus one label per
# participant-activity record type.
ACTIVITY_LABELS = ("INTERACTION", "QUERY", "BOOKMARK", "QUESTIONNAIRE")
ALL_KIND_LABELS = tuple(k.value for k in RecordKind) + ACTIVITY_LABELS


def kind_label(record: Record) -> str:
    """Label used for filtering and per-kind statistics."""
    if isinstance(record, SensorRecord):
        return record.kind.value
    return _TYPE_NAMES[type(record)].upper()


def record_to_wire(record: Record) -> dict[str, Any]:
    """Plain-JSON form of a record, with its ``record_type`` discriminator."""
    if isinstance(record, SensorRecord):
        body: dict[str, Any] = {
            "record_id": record.record_id,
            "installation_id": record.installation_id,
            "kind": record.kind.value,
            "t_ms": record.t_ms,
            "payload": record.payload,
        }
    elif isinstance(record, InteractionRecord):
        body = {
            "record_id": record.record_id,
            "installation_id": record.installation_id,
            "t_ms": record.t_ms,
            "action": record.action.value,
            "screen": record.screen,
            "detail": record.detail,
        }
    elif isinstance(record, QueryRecord):
        body = {
            "record_id": record.record_id,
            "installation_id": record.installation_id,
            "t_ms": record.t_ms,
            "query_text": record.query_text,
            "result_count": record.result_count,
            "task_id": record.task_id,
        }
    elif isinstance(record, BookmarkRecord):
        body = {
            "record_id": record.record_id,
            "installation_id": record.installation_id,
            "t_ms": record.t_ms,
            "url": record.url,
            "source_query_record": record.source_query_record,
            "task_id": record.task_id,
        }
    elif isinstance(record, QuestionnaireRecord):
        body = {
            "record_id": record.record_id,
            "installation_id": record.installation_id,
            "t_ms": record.t_ms,
            "phase": record.phase.value,
            "url": record.url,
            "completed": record.completed,
            "task_id": record.task_id,
        }
    else:
        raise ValueError(f"unknown record type {type(record).__name__}")
    body["record_type"] = _TYPE_NAMES[type(record)]
    return body


def record_from_wire(data: dict[str, Any]) -> Record:
    """Inverse of :func:`record_to_wire`. Raises ``ValueError`` on bad shape."""
    try:
        record_type = data["record_type"]
    except (KeyError, TypeError):
        raise ValueError("record is missing its record_type discriminator")
    cls = _RECORD_TYPES.get(record_type)
    if cls is None:
        raise ValueError(f"unknown record_type {record_type!r}")
    body = {k: v for k, v in data.items() if k != "record_type"}
    try:
        if cls is SensorRecord:
            body["kind"] = RecordKind(body["kind"])
        elif cls is InteractionRecord:
            body["action"] = InteractionAction(body["action"])
            body["detail"] = dict(body.get("detail", {}))
        elif cls is QuestionnaireRecord:
            body["phase"] = QuestionnairePhase(body["phase"])
        return cls(**body)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed {record_type} record: {exc}") from exc


def canonical_serialize(record: Record) -> bytes:
    """Deterministic key-ordered encoding; equal records serialize identically.

    Rejects invalid records so nothing malformed reaches a store or the wire.
    """
    violations = validate_record(record)
    if violations:
        raise ValueError("invalid record: " + "; ".join(violations))
    return canonical_json(record_to_wire(record))


def parse_record(data: bytes | str) -> Record:
    """Parse one canonically encoded record; inverse of canonical_serialize."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return record_from_wire(json.loads(data))


def canonical_json(obj: Any) -> bytes:
    """Sorted-key, compact JSON; shared by stores, journals, and summaries."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def batch_to_wire(batch: EventBatch) -> dict[str, Any]:
    return {
        "installation_id": batch.installation_id,
        "batch_seq": batch.batch_seq,
        "created_ms": batch.created_ms,
        "records": [record_to_wire(r) for r in batch.records],
    }


def batch_from_wire(data: dict[str, Any]) -> EventBatch:
    try:
        return EventBatch(
            installation_id=data["installation_id"],
            batch_seq=data["batch_seq"],
            created_ms=data["created_ms"],
            records=tuple(record_from_wire(r) for r in data["records"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed batch: {exc}") from exc
