"""Task lifecycle: window boundaries, transition rules, rescheduling,
onboarding stages, journal replay, and determinism."""

from __future__ import annotations

import json

import pytest

from fieldstudy.errors import StudyError
from fieldstudy.records import canonical_json
from fieldstudy.scheduling import (
    OnboardingEvent,
    OnboardingStage,
    Task,
    TaskScheduler,
    TaskState,
)
from scheduler_fuzz import check_transition_logs, questionnaire_for, run_random_ops

H9 = 9 * 3_600_000   # 09:00 as epoch-ms offsets within a synthetic day
H12 = 12 * 3_600_000
H18 = 18 * 3_600_000
H21 = 21 * 3_600_000

DEV_A = "device-00a"
DEV_B = "device-00b"


def make_scheduler(*devices: str) -> TaskScheduler:
    scheduler = TaskScheduler()
    for device in devices or (DEV_A,):
        scheduler.register_installation(device, 0)
    return scheduler


def food_task(*assignees: str, task_id: str = "food",
              start: int = H18, end: int = H21) -> Task:
    return Task(
        task_id=task_id,
        title="Food",
        description="search for a recipe for dinner",
        window_start_ms=start,
        window_end_ms=end,
        assigned_to=frozenset(assignees or (DEV_A,)),
        post_questionnaire_url="https://example.org/surveys/post-task",
    )


# -- add_task -----------------------------------------------------------------

def test_add_task_schedules_every_assignee():
    scheduler = make_scheduler(DEV_A, DEV_B)
    scheduler.add_task(food_task(DEV_A, DEV_B), now=0)
    for device in (DEV_A, DEV_B):
        assignment = scheduler.assignments[("food", device)][-1]
        assert assignment.state == TaskState.SCHEDULED


def test_add_task_with_past_window_rejected():
    scheduler = make_scheduler()
    with pytest.raises(StudyError, match="window already past"):
        scheduler.add_task(food_task(), now=H21)


def test_add_task_unknown_assignee_rejected():
    scheduler = make_scheduler(DEV_A)
    with pytest.raises(StudyError, match="not registered"):
        scheduler.add_task(food_task("device-unknown0"), now=0)


def test_duplicate_task_id_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(), now=0)
    with pytest.raises(StudyError, match="already exists"):
        scheduler.add_task(food_task(), now=0)


# -- due_notifications window boundaries ---------------------------------------

def test_not_due_just_before_window_start():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    assert scheduler.due_notifications(H9 - 1) == []


def test_due_exactly_at_window_start():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    assert scheduler.due_notifications(H9) == [(DEV_A, "food")]
    assert scheduler.assignments[("food", DEV_A)][-1].state == TaskState.NOTIFIED


def test_due_notifications_drain_is_idempotent():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    assert scheduler.due_notifications(H9) == [(DEV_A, "food")]
    assert scheduler.due_notifications(H9) == []


# -- start / complete -----------------------------------------------------------

def test_start_inside_window():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    assignment = scheduler.start_task(DEV_A, "food", H9 + 60_000)
    assert assignment.state == TaskState.STARTED
    assert scheduler.tasks["food"].metadata[f"participant_start_ms/{DEV_A}"] == str(H9 + 60_000)


def test_start_after_window_end_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    with pytest.raises(StudyError, match="outside"):
        scheduler.start_task(DEV_A, "food", H12)


def test_start_without_notification_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    with pytest.raises(StudyError, match="not NOTIFIED"):
        scheduler.start_task(DEV_A, "food", H9)


def test_complete_requires_completed_post_questionnaire():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.start_task(DEV_A, "food", H9 + 1)
    with pytest.raises(StudyError, match="not completed"):
        scheduler.complete_task(DEV_A, "food", H9 + 2,
                                questionnaire_for(DEV_A, "food", H9 + 2, completed=False))
    assignment = scheduler.complete_task(DEV_A, "food", H9 + 3,
                                         questionnaire_for(DEV_A, "food", H9 + 3))
    assert assignment.state == TaskState.COMPLETED


def test_complete_twice_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.start_task(DEV_A, "food", H9 + 1)
    scheduler.complete_task(DEV_A, "food", H9 + 2, questionnaire_for(DEV_A, "food", H9 + 2))
    with pytest.raises(StudyError, match="not STARTED"):
        scheduler.complete_task(DEV_A, "food", H9 + 3, questionnaire_for(DEV_A, "food", H9 + 3))


# -- expiry ----------------------------------------------------------------------

def test_notified_expires_just_after_window_end():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    assert scheduler.expire_tasks(H12) == [(DEV_A, "food")]
    assert scheduler.assignments[("food", DEV_A)][-1].state == TaskState.EXPIRED


def test_started_assignment_never_expires():
    # grace for in-flight work, cross-checked by the fuzz oracle below
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.start_task(DEV_A, "food", H9 + 1)
    assert scheduler.expire_tasks(H12 + 1) == []
    assert scheduler.assignments[("food", DEV_A)][-1].state == TaskState.STARTED


def test_expire_with_nothing_due_is_empty():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    assert scheduler.expire_tasks(H9) == []


# -- reschedule -------------------------------------------------------------------

def test_reschedule_expired_task_opens_fresh_attempt():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.expire_tasks(H12)
    day = 24 * 3_600_000
    fresh = scheduler.reschedule_task(DEV_A, "food", (day + H9, day + H12), H12 + 1)
    assert fresh.state == TaskState.SCHEDULED
    assert fresh.attempt == 1
    attempts = scheduler.assignments[("food", DEV_A)]
    assert attempts[0].state == TaskState.RESCHEDULED
    assert len(attempts) == 2


def test_reschedule_completed_task_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.start_task(DEV_A, "food", H9 + 1)
    scheduler.complete_task(DEV_A, "food", H9 + 2, questionnaire_for(DEV_A, "food", H9 + 2))
    with pytest.raises(StudyError, match="COMPLETED"):
        scheduler.reschedule_task(DEV_A, "food", (H18, H21), H12)


def test_reschedule_inverted_window_rejected():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    with pytest.raises(StudyError, match="before its end"):
        scheduler.reschedule_task(DEV_A, "food", (H21, H18), 0)


def test_reschedule_preserves_history_length():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    before = sum(len(a.transition_log) for a in scheduler.all_assignments())
    scheduler.reschedule_task(DEV_A, "food", (H18, H21), 0)
    after = sum(len(a.transition_log) for a in scheduler.all_assignments())
    assert after > before


# -- tasks_for ---------------------------------------------------------------------

def test_tasks_for_orders_by_window_then_id():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(task_id="zeta", start=H9, end=H21), now=0)
    scheduler.add_task(food_task(task_id="alpha", start=H9, end=H21), now=0)
    scheduler.add_task(food_task(task_id="later", start=H12, end=H21), now=0)
    rows = scheduler.tasks_for(DEV_A, now=0)
    got = [task.task_id for task, _ in rows]
    # sort oracle: order the same rows independently
    expected = sorted(got, key=lambda tid: (scheduler.tasks[tid].window_start_ms, tid))
    assert got == expected == ["alpha", "zeta", "later"]


def test_tasks_for_unknown_installation_rejected():
    scheduler = make_scheduler()
    with pytest.raises(StudyError, match="not registered"):
        scheduler.tasks_for("device-unknown0", now=0)


def test_tasks_for_skips_settled_assignments():
    scheduler = make_scheduler()
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    assert len(scheduler.tasks_for(DEV_A, H9)) == 1
    scheduler.expire_tasks(H12)
    assert scheduler.tasks_for(DEV_A, H12) == []


# -- onboarding ---------------------------------------------------------------------

def test_fresh_registration_starts_in_tutorial():
    scheduler = make_scheduler()
    assert scheduler.onboarding_state(DEV_A) == OnboardingStage.TUTORIAL


def test_full_onboarding_flow_reaches_ready():
    scheduler = make_scheduler()
    scheduler.report_onboarding(DEV_A, OnboardingEvent.TUTORIAL_DONE, 10)
    scheduler.report_onboarding(DEV_A, OnboardingEvent.DEMO_TASK_DONE, 20)
    stage = scheduler.report_onboarding(DEV_A, OnboardingEvent.SURVEY_DONE, 30)
    assert stage == OnboardingStage.READY


def test_out_of_order_report_does_not_skip_stages():
    scheduler = make_scheduler()
    scheduler.report_onboarding(DEV_A, OnboardingEvent.TUTORIAL_DONE, 10)
    # survey completion arrives while still in DEMO_TASK: ignored
    stage = scheduler.report_onboarding(DEV_A, OnboardingEvent.SURVEY_DONE, 20)
    assert stage == OnboardingStage.DEMO_TASK


# -- randomized soundness, drain, determinism, journal --------------------------------

def test_random_ops_stay_inside_transition_graph():
    for seed in range(25):
        scheduler = run_random_ops(seed, close_out=False)
        assert check_transition_logs(scheduler) == []


def test_close_out_settles_every_assignment():
    for seed in range(10):
        scheduler = run_random_ops(seed, close_out=True)
        assert all(not a.is_active for a in scheduler.all_assignments())


def test_drain_leaves_no_scheduled_or_notified():
    scheduler = run_random_ops(99, close_out=False)
    far = 10**15
    scheduler.due_notifications(far - 1)
    scheduler.expire_tasks(far)
    leftover = {a.state for a in scheduler.all_assignments()}
    assert TaskState.SCHEDULED not in leftover
    assert TaskState.NOTIFIED not in leftover


def test_identical_op_sequences_build_identical_stores():
    a = run_random_ops(7).snapshot()
    b = run_random_ops(7).snapshot()
    assert canonical_json(a) == canonical_json(b)


def test_journal_replay_reconstructs_store(tmp_path):
    journal = tmp_path / "tasks.journal"
    scheduler = TaskScheduler(journal)
    scheduler.register_installation(DEV_A, 0)
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.due_notifications(H9)
    scheduler.start_task(DEV_A, "food", H9 + 5)
    scheduler.complete_task(DEV_A, "food", H9 + 9, questionnaire_for(DEV_A, "food", H9 + 9))
    scheduler.report_onboarding(DEV_A, OnboardingEvent.TUTORIAL_DONE, 10)
    expected = scheduler.snapshot()
    scheduler.close()

    replayed = TaskScheduler(journal)
    assert canonical_json(replayed.snapshot()) == canonical_json(expected)
    replayed.close()


def test_journal_lines_are_json(tmp_path):
    journal = tmp_path / "tasks.journal"
    scheduler = TaskScheduler(journal)
    scheduler.register_installation(DEV_A, 0)
    scheduler.add_task(food_task(start=H9, end=H12), now=0)
    scheduler.close()
    lines = journal.read_text().splitlines()
    assert len(lines) == 2
    assert all(json.loads(line) for line in lines)
