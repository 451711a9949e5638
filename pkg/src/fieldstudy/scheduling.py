"""Task store and per-installation assignment lifecycle.

Assignments move along a fixed graph:

    SCHEDULED -> NOTIFIED -> STARTED -> COMPLETED
    SCHEDULED | NOTIFIED -> EXPIRED
    SCHEDULED | NOTIFIED | EXPIRED -> RESCHEDULED

Rescheduling closes the old attempt as RESCHEDULED and opens a fresh
SCHEDULED attempt with a new window; all prior attempts (and their
transition logs) are kept. Task windows are half-open ``[start, end)``.
STARTED assignments never expire: a participant's in-flight effort is
not discarded at window end.

Every mutation is journaled as one JSON line; replaying the journal
reconstructs the store exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from fieldstudy.errors import StudyError
from fieldstudy.records import (
    QuestionnairePhase,
    QuestionnaireRecord,
    canonical_json,
    is_valid_installation_id,
    record_from_wire,
    record_to_wire,
)


class TaskState(str, Enum):
    SCHEDULED = "SCHEDULED"
    NOTIFIED = "NOTIFIED"
    STARTED = "STARTED"
    COMPLETED = "COMPLETED"
    EXPIRED = "EXPIRED"
    RESCHEDULED = "RESCHEDULED"


ALLOWED_TRANSITIONS: dict[TaskState, frozenset[TaskState]] = {
    TaskState.SCHEDULED: frozenset(
        {TaskState.NOTIFIED, TaskState.EXPIRED, TaskState.RESCHEDULED}
    ),
    TaskState.NOTIFIED: frozenset(
        {TaskState.STARTED, TaskState.EXPIRED, TaskState.RESCHEDULED}
    ),
    TaskState.STARTED: frozenset({TaskState.COMPLETED}),
    TaskState.COMPLETED: frozenset(),
    TaskState.EXPIRED: frozenset({TaskState.RESCHEDULED}),
    TaskState.RESCHEDULED: frozenset(),
}

# States an attempt can still act from; everything else is settled.
ACTIVE_STATES = frozenset({TaskState.SCHEDULED, TaskState.NOTIFIED, TaskState.STARTED})


class OnboardingStage(str, Enum):
    TUTORIAL = "TUTORIAL"
    DEMO_TASK = "DEMO_TASK"
    SURVEY = "SURVEY"
    READY = "READY"


class OnboardingEvent(str, Enum):
    TUTORIAL_DONE = "TUTORIAL_DONE"
    DEMO_TASK_DONE = "DEMO_TASK_DONE"
    SURVEY_DONE = "SURVEY_DONE"


# Each stage advances only on its own exit event; anything else is ignored,
# so out-of-order reports can never skip a stage.
_STAGE_EXIT: dict[OnboardingStage, tuple[OnboardingEvent, OnboardingStage]] = {
    OnboardingStage.TUTORIAL: (OnboardingEvent.TUTORIAL_DONE, OnboardingStage.DEMO_TASK),
    OnboardingStage.DEMO_TASK: (OnboardingEvent.DEMO_TASK_DONE, OnboardingStage.SURVEY),
    OnboardingStage.SURVEY: (OnboardingEvent.SURVEY_DONE, OnboardingStage.READY),
}


@dataclass
class Task:
    """A scheduled study unit with a time window and an assignment set."""

    task_id: str
    title: str
    description: str
    window_start_ms: int
    window_end_ms: int
    assigned_to: frozenset[str]
    post_questionnaire_url: str
    pre_questionnaire_url: str | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self) -> list[str]:
        out: list[str] = []
        if not self.task_id:
            out.append("task_id must be non-empty")
        if self.window_start_ms >= self.window_end_ms:
            out.append("window_start must be before window_end")
        if not self.post_questionnaire_url:
            out.append("post_questionnaire_url is required")
        for installation_id in sorted(self.assigned_to):
            if not is_valid_installation_id(installation_id):
                out.append(f"assignee {installation_id!r} is not a well-formed installation id")
        return out


@dataclass
class TaskAssignment:
    """One attempt at a task by one installation, with its transition history."""

    task_id: str
    installation_id: str
    attempt: int
    state: TaskState
    window_start_ms: int
    window_end_ms: int
    transition_log: list[tuple[TaskState, int]] = field(default_factory=list)

    @property
    def is_active(self) -> bool:
        return self.state in ACTIVE_STATES

    def to_wire(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "installation_id": self.installation_id,
            "attempt": self.attempt,
            "state": self.state.value,
            "window_start_ms": self.window_start_ms,
            "window_end_ms": self.window_end_ms,
            "transitions": [[state.value, t] for state, t in self.transition_log],
        }


def task_to_wire(task: Task) -> dict[str, Any]:
    return {
        "task_id": task.task_id,
        "title": task.title,
        "description": task.description,
        "window_start_ms": task.window_start_ms,
        "window_end_ms": task.window_end_ms,
        "assigned_to": sorted(task.assigned_to),
        "pre_questionnaire_url": task.pre_questionnaire_url,
        "post_questionnaire_url": task.post_questionnaire_url,
        "metadata": dict(task.metadata),
    }


def task_from_wire(data: dict[str, Any]) -> Task:
    try:
        return Task(
            task_id=data["task_id"],
            title=data["title"],
            description=data.get("description", ""),
            window_start_ms=data["window_start_ms"],
            window_end_ms=data["window_end_ms"],
            assigned_to=frozenset(data["assigned_to"]),
            post_questionnaire_url=data["post_questionnaire_url"],
            pre_questionnaire_url=data.get("pre_questionnaire_url"),
            metadata=dict(data.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise StudyError("invalid_task", f"malformed task: {exc}") from exc


class TaskScheduler:
    """Single-writer task store: tasks, assignment attempts, onboarding stages,
    and the registered-installation set, all journaled to one file."""

    def __init__(self, journal_path: str | Path | None = None):
        self.tasks: dict[str, Task] = {}
        # Attempts in order; only the last one may be active.
        self.assignments: dict[tuple[str, str], list[TaskAssignment]] = {}
        self.installations: dict[str, int] = {}
        self.onboarding: dict[str, OnboardingStage] = {}
        self._journal_path = Path(journal_path) if journal_path is not None else None
        self._journal = None
        if self._journal_path is not None:
            if self._journal_path.exists():
                self._replay(self._journal_path)
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._journal = open(self._journal_path, "a", encoding="utf-8")

    # -- journal ------------------------------------------------------------

    def _log(self, event: dict[str, Any]) -> None:
        if self._journal is not None:
            self._journal.write(canonical_json(event).decode("utf-8") + "\n")
            self._journal.flush()

    def _replay(self, path: Path) -> None:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, ev: dict[str, Any]) -> None:
        kind = ev["ev"]
        if kind == "register":
            self.installations[ev["installation_id"]] = ev["t_ms"]
            self.onboarding[ev["installation_id"]] = OnboardingStage.TUTORIAL
        elif kind == "add_task":
            task = task_from_wire(ev["task"])
            self.tasks[task.task_id] = task
            for installation_id in sorted(task.assigned_to):
                self._open_attempt(task.task_id, installation_id,
                                   task.window_start_ms, task.window_end_ms, ev["t_ms"])
        elif kind == "transition":
            attempt = self.assignments[(ev["task_id"], ev["installation_id"])][-1]
            self._move(attempt, TaskState(ev["state"]), ev["t_ms"])
            if "task_metadata" in ev:
                self.tasks[ev["task_id"]].metadata.update(ev["task_metadata"])
        elif kind == "reschedule":
            attempts = self.assignments[(ev["task_id"], ev["installation_id"])]
            self._move(attempts[-1], TaskState.RESCHEDULED, ev["t_ms"])
            self._open_attempt(ev["task_id"], ev["installation_id"],
                               ev["window_start_ms"], ev["window_end_ms"], ev["t_ms"])
        elif kind == "onboarding":
            self.onboarding[ev["installation_id"]] = OnboardingStage(ev["stage"])
        else:
            raise StudyError("corrupt_journal", f"unknown journal event {kind!r}")

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    # -- internal state moves -------------------------------------------------

    def _open_attempt(self, task_id: str, installation_id: str,
                      window_start_ms: int, window_end_ms: int, t_ms: int) -> TaskAssignment:
        attempts = self.assignments.setdefault((task_id, installation_id), [])
        attempt = TaskAssignment(
            task_id=task_id,
            installation_id=installation_id,
            attempt=len(attempts),
            state=TaskState.SCHEDULED,
            window_start_ms=window_start_ms,
            window_end_ms=window_end_ms,
            transition_log=[(TaskState.SCHEDULED, t_ms)],
        )
        attempts.append(attempt)
        return attempt

    def _move(self, assignment: TaskAssignment, to_state: TaskState, now: int) -> None:
        if to_state not in ALLOWED_TRANSITIONS[assignment.state]:
            raise StudyError(
                "wrong_state",
                f"cannot move {assignment.task_id}/{assignment.installation_id} "
                f"from {assignment.state.value} to {to_state.value}",
            )
        # Log timestamps stay strictly increasing even when two operations
        # land on the same millisecond.
        log_t = max(now, assignment.transition_log[-1][1] + 1)
        assignment.state = to_state
        assignment.transition_log.append((to_state, log_t))

    def _current(self, installation_id: str, task_id: str) -> TaskAssignment:
        self._require_installation(installation_id)
        attempts = self.assignments.get((task_id, installation_id))
        if not attempts:
            raise StudyError("unknown_assignment",
                             f"no assignment of task {task_id!r} to {installation_id!r}")
        return attempts[-1]

    def _require_installation(self, installation_id: str) -> None:
        if installation_id not in self.installations:
            raise StudyError("unknown_installation",
                             f"installation {installation_id!r} is not registered")

    # -- public operations ----------------------------------------------------

    def register_installation(self, installation_id: str, now: int) -> bool:
        """Register a device; idempotent. Returns True on first registration."""
        if not is_valid_installation_id(installation_id):
            raise StudyError("malformed_installation_id",
                             f"installation id {installation_id!r} must be 8-64 URL-safe chars")
        if installation_id in self.installations:
            return False
        self.installations[installation_id] = now
        self.onboarding[installation_id] = OnboardingStage.TUTORIAL
        self._log({"ev": "register", "installation_id": installation_id, "t_ms": now})
        return True

    def add_task(self, task: Task, now: int) -> str:
        """Persist ``task`` and open one SCHEDULED assignment per assignee."""
        violations = task.validate()
        if violations:
            raise StudyError("invalid_task", "; ".join(violations))
        if task.task_id in self.tasks:
            raise StudyError("duplicate_task", f"task {task.task_id!r} already exists")
        if task.window_end_ms <= now:
            raise StudyError("window_past", f"task {task.task_id!r} window already past")
        for installation_id in sorted(task.assigned_to):
            self._require_installation(installation_id)
        self.tasks[task.task_id] = task
        for installation_id in sorted(task.assigned_to):
            self._open_attempt(task.task_id, installation_id,
                               task.window_start_ms, task.window_end_ms, now)
        self._log({"ev": "add_task", "task": task_to_wire(task), "t_ms": now})
        return task.task_id

    def due_notifications(self, now: int) -> list[tuple[str, str]]:
        """Move every SCHEDULED assignment whose window contains ``now`` to
        NOTIFIED; returns (installation_id, task_id) pairs, notification order."""
        due = [
            attempts[-1]
            for attempts in self.assignments.values()
            if attempts[-1].state == TaskState.SCHEDULED
            and attempts[-1].window_start_ms <= now < attempts[-1].window_end_ms
        ]
        due.sort(key=lambda a: (a.window_start_ms, a.task_id, a.installation_id))
        out = []
        for assignment in due:
            self._move(assignment, TaskState.NOTIFIED, now)
            self._log({"ev": "transition", "task_id": assignment.task_id,
                       "installation_id": assignment.installation_id,
                       "state": "NOTIFIED", "t_ms": now})
            out.append((assignment.installation_id, assignment.task_id))
        return out

    def start_task(self, installation_id: str, task_id: str, now: int) -> TaskAssignment:
        assignment = self._current(installation_id, task_id)
        if assignment.state != TaskState.NOTIFIED:
            raise StudyError("wrong_state",
                             f"task {task_id!r} is {assignment.state.value}, not NOTIFIED")
        if not assignment.window_start_ms <= now < assignment.window_end_ms:
            raise StudyError("outside_window",
                             f"now={now} is outside [{assignment.window_start_ms},"
                             f"{assignment.window_end_ms})")
        self._move(assignment, TaskState.STARTED, now)
        metadata = {f"participant_start_ms/{installation_id}": str(now)}
        self.tasks[task_id].metadata.update(metadata)
        self._log({"ev": "transition", "task_id": task_id,
                   "installation_id": installation_id, "state": "STARTED",
                   "t_ms": now, "task_metadata": metadata})
        return assignment

    def complete_task(self, installation_id: str, task_id: str, now: int,
                      post_questionnaire: QuestionnaireRecord) -> TaskAssignment:
        assignment = self._current(installation_id, task_id)
        if assignment.state != TaskState.STARTED:
            raise StudyError("wrong_state",
                             f"task {task_id!r} is {assignment.state.value}, not STARTED")
        if post_questionnaire.phase != QuestionnairePhase.POST_TASK:
            raise StudyError("questionnaire_required",
                             "completion requires a POST_TASK questionnaire record")
        if not post_questionnaire.completed:
            raise StudyError("questionnaire_required",
                             "post-task questionnaire is not completed")
        if post_questionnaire.installation_id != installation_id:
            raise StudyError("questionnaire_required",
                             "questionnaire belongs to a different installation")
        if post_questionnaire.task_id is not None and post_questionnaire.task_id != task_id:
            raise StudyError("questionnaire_required",
                             "questionnaire references a different task")
        self._move(assignment, TaskState.COMPLETED, now)
        self._log({"ev": "transition", "task_id": task_id,
                   "installation_id": installation_id, "state": "COMPLETED",
                   "t_ms": now, "questionnaire": record_to_wire(post_questionnaire)})
        return assignment

    def expire_tasks(self, now: int) -> list[tuple[str, str]]:
        """Expire every SCHEDULED or NOTIFIED assignment whose window closed.

        STARTED assignments are left alone (in-flight grace)."""
        due = [
            attempts[-1]
            for attempts in self.assignments.values()
            if attempts[-1].state in (TaskState.SCHEDULED, TaskState.NOTIFIED)
            and attempts[-1].window_end_ms <= now
        ]
        due.sort(key=lambda a: (a.window_start_ms, a.task_id, a.installation_id))
        out = []
        for assignment in due:
            self._move(assignment, TaskState.EXPIRED, now)
            self._log({"ev": "transition", "task_id": assignment.task_id,
                       "installation_id": assignment.installation_id,
                       "state": "EXPIRED", "t_ms": now})
            out.append((assignment.installation_id, assignment.task_id))
        return out

    def reschedule_task(self, installation_id: str, task_id: str,
                        new_window: tuple[int, int], now: int) -> TaskAssignment:
        """Close the current attempt as RESCHEDULED and open a fresh SCHEDULED
        attempt with ``new_window``; earlier attempts and logs are kept."""
        assignment = self._current(installation_id, task_id)
        if TaskState.RESCHEDULED not in ALLOWED_TRANSITIONS[assignment.state]:
            raise StudyError("wrong_state",
                             f"cannot reschedule a {assignment.state.value} assignment")
        start_ms, end_ms = new_window
        if start_ms >= end_ms:
            raise StudyError("invalid_window", "window start must be before its end")
        if end_ms <= now:
            raise StudyError("window_past", "new window must end in the future")
        self._move(assignment, TaskState.RESCHEDULED, now)
        fresh = self._open_attempt(task_id, installation_id, start_ms, end_ms, now)
        self._log({"ev": "reschedule", "task_id": task_id,
                   "installation_id": installation_id,
                   "window_start_ms": start_ms, "window_end_ms": end_ms, "t_ms": now})
        return fresh

    def tasks_for(self, installation_id: str, now: int) -> list[tuple[Task, TaskAssignment]]:
        """Active assignments of one installation, window order."""
        self._require_installation(installation_id)
        rows = [
            (self.tasks[attempts[-1].task_id], attempts[-1])
            for (task_id, inst), attempts in self.assignments.items()
            if inst == installation_id and attempts[-1].is_active
        ]
        rows.sort(key=lambda row: (row[1].window_start_ms, row[1].task_id))
        return rows

    def onboarding_state(self, installation_id: str) -> OnboardingStage:
        self._require_installation(installation_id)
        return self.onboarding[installation_id]

    def report_onboarding(self, installation_id: str, event: OnboardingEvent,
                          now: int) -> OnboardingStage:
        """Advance the onboarding stage if ``event`` is the current stage's
        exit event; out-of-order or repeated events are ignored."""
        stage = self.onboarding_state(installation_id)
        expected = _STAGE_EXIT.get(stage)
        if expected is not None and event == expected[0]:
            stage = expected[1]
            self.onboarding[installation_id] = stage
            self._log({"ev": "onboarding", "installation_id": installation_id,
                       "stage": stage.value, "t_ms": now})
        return stage

    # -- introspection ----------------------------------------------------------

    def all_assignments(self) -> Iterator[TaskAssignment]:
        """Every attempt ever made, including settled ones."""
        for attempts in self.assignments.values():
            yield from attempts

    def snapshot(self) -> dict[str, Any]:
        """Canonical JSON-able view of the whole store (for tests and admin)."""
        return {
            "installations": dict(sorted(self.installations.items())),
            "onboarding": {k: v.value for k, v in sorted(self.onboarding.items())},
            "tasks": {task_id: task_to_wire(task)
                      for task_id, task in sorted(self.tasks.items())},
            "assignments": [
                attempt.to_wire()
                for key in sorted(self.assignments)
                for attempt in self.assignments[key]
            ],
        }


def questionnaire_from_wire(data: dict[str, Any]) -> QuestionnaireRecord:
    """Parse a questionnaire record out of a transition payload."""
    record = record_from_wire(data)
    if not isinstance(record, QuestionnaireRecord):
        raise StudyError("questionnaire_required",
                         "transition payload must be a questionnaire record")
    return record
