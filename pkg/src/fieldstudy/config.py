"""Study configuration: collector toggles, sample rates, upload policy, and
survey links, read from a single flat ``key = value`` file.

Rates are plain integer milliseconds; arithmetic expressions are not parsed.
Defaults (applied for unspecified keys): every collector toggled on,
``usage_interval_ms = 86400000`` (24 h), ``location_rate_ms = 180000`` (3 min),
``sample_rate_ms = 120000`` (2 min), ``upload_interval_ms = 600000`` (10 min),
no WiFi-only kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from fieldstudy.records import RecordKind

DEFAULT_USAGE_INTERVAL_MS = 1000 * 60 * 60 * 24
DEFAULT_LOCATION_RATE_MS = 1000 * 60 * 3
DEFAULT_SAMPLE_RATE_MS = 1000 * 60 * 2
DEFAULT_UPLOAD_INTERVAL_MS = 1000 * 60 * 10

_TOGGLE_KEYS = {f"record_{kind.name.lower()}": kind for kind in RecordKind}

_RATE_KEYS = ("usage_interval_ms", "location_rate_ms", "sample_rate_ms", "upload_interval_ms")

_KNOWN_KEYS = (
    {"study_id", "wifi_only_kinds", "onboarding_survey_url", "pre_task_url", "post_task_url"}
    | set(_RATE_KEYS)
    | set(_TOGGLE_KEYS)
)


class ConfigError(ValueError):
    """Raised for unparsable or invalid configuration documents."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class StudyConfig:
    """Immutable study-wide configuration distributed to every device."""

    study_id: str = "study"
    record_toggles: dict[RecordKind, bool] = field(
        default_factory=lambda: {kind: True for kind in RecordKind}
    )
    usage_interval_ms: int = DEFAULT_USAGE_INTERVAL_MS
    location_rate_ms: int = DEFAULT_LOCATION_RATE_MS
    sample_rate_ms: int = DEFAULT_SAMPLE_RATE_MS
    upload_interval_ms: int = DEFAULT_UPLOAD_INTERVAL_MS
    wifi_only_kinds: frozenset[RecordKind] = frozenset()
    onboarding_survey_url: str = "https://example.org/surveys/onboarding"
    default_pre_task_url: str | None = None
    default_post_task_url: str = "https://example.org/surveys/post-task"


def validate_config(cfg: StudyConfig) -> list[str]:
    """Return every invariant violation of ``cfg``; empty means ok."""
    out: list[str] = []
    for key in _RATE_KEYS:
        value = getattr(cfg, key)
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            out.append(f"non-positive rate: {key} = {value!r}")
    if set(cfg.record_toggles) != set(RecordKind):
        out.append("record_toggles must cover every record kind exactly once")
    if isinstance(cfg.usage_interval_ms, int) and isinstance(cfg.sample_rate_ms, int) \
            and cfg.usage_interval_ms < cfg.sample_rate_ms:
        out.append("usage_interval_ms must be >= sample_rate_ms")
    for kind in sorted(cfg.wifi_only_kinds, key=lambda k: k.value):
        if not cfg.record_toggles.get(kind, False):
            out.append(f"wifi_only_kinds contains toggled-off kind {kind.value}")
    if not cfg.study_id:
        out.append("study_id must be non-empty")
    return out


def effective_collectors(cfg: StudyConfig) -> dict[RecordKind, int]:
    """The toggled-on kinds, each mapped to its sampling rate in ms."""
    rates: dict[RecordKind, int] = {}
    for kind, enabled in cfg.record_toggles.items():
        if not enabled:
            continue
        if kind == RecordKind.GPS:
            rates[kind] = cfg.location_rate_ms
        elif kind == RecordKind.APP_USAGE_STATS:
            rates[kind] = cfg.usage_interval_ms
        else:
            rates[kind] = cfg.sample_rate_ms
    return rates


# ---------------------------------------------------------------------------
# Parsing and emission
# ---------------------------------------------------------------------------

def _parse_bool(raw: str, lineno: int) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ConfigError(f"expected true or false, got {raw!r}", lineno)


def _parse_rate(raw: str, key: str, lineno: int) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer millisecond count, got {raw!r}", lineno)
    if value <= 0:
        raise ConfigError(f"non-positive rate: {key} = {value}", lineno)
    return value


def _parse_kinds(raw: str, lineno: int) -> frozenset[RecordKind]:
    kinds = set()
    for part in filter(None, (p.strip() for p in raw.split(","))):
        try:
            kinds.add(RecordKind(part))
        except ValueError:
            raise ConfigError(f"unknown record kind {part!r}", lineno)
    return frozenset(kinds)


def parse_config(text: str) -> StudyConfig:
    """Parse a configuration document into a validated :class:`StudyConfig`.

    Raises :class:`ConfigError` (with the offending line number) on syntax
    errors, unknown keys, bad values, or invariant violations.
    """
    cfg = StudyConfig()
    toggles = dict(cfg.record_toggles)
    updates: dict[str, Any] = {}

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, raw_value = (part.strip() for part in line.partition("="))
        value = raw_value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in _TOGGLE_KEYS:
            toggles[_TOGGLE_KEYS[key]] = _parse_bool(value, lineno)
        elif key in _RATE_KEYS:
            updates[key] = _parse_rate(value, key, lineno)
        elif key == "wifi_only_kinds":
            updates[key] = _parse_kinds(value, lineno)
        elif key == "pre_task_url":
            updates["default_pre_task_url"] = value or None
        elif key == "post_task_url":
            updates["default_post_task_url"] = value
        elif key == "onboarding_survey_url":
            updates["onboarding_survey_url"] = value
        else:
            updates["study_id"] = value

    cfg = replace(cfg, record_toggles=toggles, **updates)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("; ".join(violations))
    return cfg


def emit_config(cfg: StudyConfig) -> str:
    """Emit ``cfg`` as a document that parses back to an equal config."""
    lines = [f"study_id = {cfg.study_id}", "", "# Collectors"]
    for kind in RecordKind:
        lines.append(f"record_{kind.name.lower()} = {str(cfg.record_toggles[kind]).lower()}")
    lines += [
        "",
        "# Sample rates (ms)",
        f"usage_interval_ms = {cfg.usage_interval_ms}",
        f"location_rate_ms = {cfg.location_rate_ms}",
        f"sample_rate_ms = {cfg.sample_rate_ms}",
        "",
        "# Upload policy",
        f"upload_interval_ms = {cfg.upload_interval_ms}",
        "wifi_only_kinds = " + ",".join(sorted(k.value for k in cfg.wifi_only_kinds)),
        "",
        "# Surveys",
        f"onboarding_survey_url = {cfg.onboarding_survey_url}",
        f"pre_task_url = {cfg.default_pre_task_url or ''}",
        f"post_task_url = {cfg.default_post_task_url}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path) -> StudyConfig:
    """Read and parse a configuration file."""
    with open(path, encoding="utf-8") as handle:
        return parse_config(handle.read())


def config_to_wire(cfg: StudyConfig) -> dict[str, Any]:
    """JSON form served to devices over the config endpoint."""
    return {
        "study_id": cfg.study_id,
        "record_toggles": {kind.value: on for kind, on in sorted(
            cfg.record_toggles.items(), key=lambda item: item[0].value)},
        "usage_interval_ms": cfg.usage_interval_ms,
        "location_rate_ms": cfg.location_rate_ms,
        "sample_rate_ms": cfg.sample_rate_ms,
        "upload_interval_ms": cfg.upload_interval_ms,
        "wifi_only_kinds": sorted(kind.value for kind in cfg.wifi_only_kinds),
        "onboarding_survey_url": cfg.onboarding_survey_url,
        "pre_task_url": cfg.default_pre_task_url,
        "post_task_url": cfg.default_post_task_url,
    }


def config_from_wire(data: dict[str, Any]) -> StudyConfig:
    return StudyConfig(
        study_id=data["study_id"],
        record_toggles={RecordKind(k): bool(v) for k, v in data["record_toggles"].items()},
        usage_interval_ms=data["usage_interval_ms"],
        location_rate_ms=data["location_rate_ms"],
        sample_rate_ms=data["sample_rate_ms"],
        upload_interval_ms=data["upload_interval_ms"],
        wifi_only_kinds=frozenset(RecordKind(k) for k in data["wifi_only_kinds"]),
        onboarding_survey_url=data["onboarding_survey_url"],
        default_pre_task_url=data.get("pre_task_url"),
        default_post_task_url=data["post_task_url"],
    )
