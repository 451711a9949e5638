"""Application core of the study server: registration, idempotent batch
ingestion, task/config sync for devices, admin task management, and the
monitoring metrics — everything the HTTP layer and the in-process transport
expose.

Clock policy: every operation takes the caller's ``now`` in epoch ms. In
simulation that is the scenario's logical time; the HTTP layer substitutes
wall clock when a request does not carry one. The contract is identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from fieldstudy import analytics
from fieldstudy.config import StudyConfig, config_to_wire
from fieldstudy.errors import StudyError
from fieldstudy.records import RecordKind, batch_from_wire, validate_record
from fieldstudy.scheduling import (
    OnboardingEvent,
    TaskScheduler,
    questionnaire_from_wire,
    task_from_wire,
    task_to_wire,
)
from fieldstudy.storage import EventStore

EVENTS_SUBDIR = "events"
TASK_JOURNAL = "tasks.journal"


class StudyService:
    """One study: an event store, a task store, and the shared configuration."""

    def __init__(self, cfg: StudyConfig, store_dir: str | Path):
        self.config = cfg
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.events = EventStore(self.store_dir / EVENTS_SUBDIR)
        self.scheduler = TaskScheduler(self.store_dir / TASK_JOURNAL)

    def close(self) -> None:
        self.events.close()
        self.scheduler.close()

    def _require_study(self, study_id: str) -> None:
        if study_id != self.config.study_id:
            raise StudyError("unknown_study", f"no study {study_id!r} here")

    # -- device-facing ---------------------------------------------------------

    def register_installation(self, installation_id: str, study_id: str,
                              now: int) -> dict[str, Any]:
        """Idempotent registration; re-registering returns the original receipt."""
        self._require_study(study_id)
        self.scheduler.register_installation(installation_id, now)
        return {
            "installation_id": installation_id,
            "study_id": study_id,
            "registered_ms": self.scheduler.installations[installation_id],
        }

    def get_config(self, study_id: str) -> dict[str, Any]:
        self._require_study(study_id)
        return config_to_wire(self.config)

    def sync_tasks(self, installation_id: str, now: int) -> dict[str, Any]:
        """Poll endpoint for devices: runs the notification and expiry sweeps,
        then returns the installation's active assignments and onboarding stage."""
        self.scheduler.due_notifications(now)
        self.scheduler.expire_tasks(now)
        rows = self.scheduler.tasks_for(installation_id, now)
        return {
            "onboarding": self.scheduler.onboarding_state(installation_id).value,
            "tasks": [
                {"task": task_to_wire(task), "assignment": assignment.to_wire()}
                for task, assignment in rows
            ],
        }

    def report_onboarding(self, installation_id: str, event: str,
                          now: int) -> dict[str, Any]:
        try:
            parsed = OnboardingEvent(event)
        except ValueError:
            raise StudyError("invalid_event", f"unknown onboarding event {event!r}")
        stage = self.scheduler.report_onboarding(installation_id, parsed, now)
        return {"onboarding": stage.value}

    def transition_task(self, installation_id: str, task_id: str, verb: str,
                        now: int, questionnaire: dict[str, Any] | None = None
                        ) -> dict[str, Any]:
        if verb == "START":
            assignment = self.scheduler.start_task(installation_id, task_id, now)
        elif verb == "COMPLETE":
            if questionnaire is None:
                raise StudyError("questionnaire_required",
                                 "COMPLETE requires the post-task questionnaire record")
            record = questionnaire_from_wire(questionnaire)
            violations = validate_record(record)
            if violations:
                raise StudyError("invalid_record", "; ".join(violations))
            assignment = self.scheduler.complete_task(installation_id, task_id, now, record)
        else:
            raise StudyError("invalid_verb", f"verb must be START or COMPLETE, got {verb!r}")
        return assignment.to_wire()

    def ingest_batch(self, batch_wire: dict[str, Any], arrival_ms: int) -> dict[str, Any]:
        """Validate, dedup, and append one uploaded batch. DUPLICATE is success."""
        try:
            batch = batch_from_wire(batch_wire)
        except ValueError as exc:
            raise StudyError("malformed_batch", str(exc)) from exc
        if batch.installation_id not in self.scheduler.installations:
            raise StudyError("unknown_installation",
                             f"installation {batch.installation_id!r} is not registered")
        return self.events.ingest(batch, arrival_ms)

    # -- dashboard / admin -------------------------------------------------------

    def store_stats(self) -> dict[str, Any]:
        stats = self.events.stats()
        stats["installations"] = len(self.scheduler.installations)
        return stats

    def metrics_daily(self, from_date: str, to_date: str) -> list[dict[str, Any]]:
        queries = analytics.daily_query_counts(self.events, from_date, to_date)
        active = analytics.daily_active_participants(self.events, from_date, to_date)
        return [
            {"date": day, "queries": queries[day], "active_participants": active[day]}
            for day in queries
        ]

    def metrics_liveness(self, now: int, stalled_after_ms: int,
                         lost_after_ms: int) -> list[dict[str, Any]]:
        reports = analytics.liveness(
            self.events, sorted(self.scheduler.installations), now,
            stalled_after_ms, lost_after_ms)
        return [report.to_wire() for report in reports]

    def correlations(self, installation_id: str | None, from_ms: int, to_ms: int,
                     context_window_ms: int = analytics.DEFAULT_CONTEXT_WINDOW_MS
                     ) -> list[dict[str, Any]]:
        rows = analytics.correlate_queries(
            self.events, installation_id, from_ms, to_ms,
            context_window_ms=context_window_ms,
            location_rate_ms=self.config.location_rate_ms)
        return [row.to_wire() for row in rows]

    def collection_gaps(self, installation_id: str, kind: str,
                        from_ms: int, to_ms: int) -> list[dict[str, int]]:
        try:
            parsed = RecordKind(kind)
        except ValueError:
            raise StudyError("unknown_kind", f"unknown record kind {kind!r}")
        gaps = analytics.collection_gaps(self.events, installation_id, parsed,
                                         from_ms, to_ms, self.config)
        return [{"gap_start_ms": start, "gap_end_ms": end} for start, end in gaps]

    def admin_add_task(self, task_wire: dict[str, Any], now: int) -> dict[str, Any]:
        task = task_from_wire(task_wire)
        task_id = self.scheduler.add_task(task, now)
        return {"task_id": task_id}

    def admin_reschedule(self, task_id: str, installation_id: str,
                         window_start_ms: int, window_end_ms: int,
                         now: int) -> dict[str, Any]:
        fresh = self.scheduler.reschedule_task(
            installation_id, task_id, (window_start_ms, window_end_ms), now)
        return fresh.to_wire()

    def admin_task_board(self) -> dict[str, Any]:
        """Every task with every assignment attempt, for the dashboard board."""
        return {
            "tasks": [task_to_wire(task)
                      for _, task in sorted(self.scheduler.tasks.items())],
            "assignments": [
                attempt.to_wire()
                for key in sorted(self.scheduler.assignments)
                for attempt in self.scheduler.assignments[key]
            ],
        }
