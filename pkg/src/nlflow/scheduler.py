"""Recurring execution: attach schedules to workflows and fire them on tick.

Missed windows coalesce into at most one catch-up run; a tick never fires
the same window twice because next_fire always advances strictly past `now`.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import replace
from datetime import datetime

from . import recurrence
from .errors import ConcurrentRunError, NotReadyError, UnknownIdError
from .executor import Executor
from .model import Schedule, Workflow, utcnow
from .store import FileStore

logger = logging.getLogger(__name__)


class Scheduler:
    def __init__(self, store: FileStore, executor: Executor, now=utcnow):
        self.store = store
        self.executor = executor
        self.now = now
        self._tick_guard = threading.Lock()

    def schedule(self, workflow_id: str, expression: str, timezone: str) -> Workflow:
        """Attach a recurrence to a ready workflow; next_fire starts in the future."""
        with self.store.lock(workflow_id):
            workflow = self.store.load_workflow(workflow_id)
            self.executor._check_runnable(workflow)  # same readiness bar as run
            fire = recurrence.next_fire(expression, timezone, self.now())
            workflow = replace(
                workflow,
                schedule=Schedule(expression=expression, timezone=timezone, next_fire=fire),
                updated_at=utcnow(),
            )
            self.store.save_workflow(workflow)
            return workflow

    def unschedule(self, workflow_id: str) -> Workflow:
        with self.store.lock(workflow_id):
            workflow = self.store.load_workflow(workflow_id)
            if workflow.schedule is None:
                return workflow
            workflow = replace(workflow, schedule=None, updated_at=utcnow())
            self.store.save_workflow(workflow)
            return workflow

    def tick(self, now: datetime | None = None) -> list[str]:
        """Start runs for every due schedule; returns the run ids started.

        Single-flight: overlapping ticks are skipped rather than queued.
        """
        if not self._tick_guard.acquire(blocking=False):
            return []
        try:
            now = now or self.now()
            started: list[str] = []
            for workflow_id in self.store.list_workflow_ids():
                try:
                    with self.store.lock(workflow_id):
                        workflow = self.store.load_workflow(workflow_id)
                        sched = workflow.schedule
                        if sched is None or sched.next_fire > now:
                            continue
                        # Advance past now first: missed windows coalesce into
                        # this single catch-up run.
                        advanced = recurrence.next_fire(sched.expression, sched.timezone, now)
                        workflow = replace(
                            workflow,
                            schedule=replace(sched, next_fire=advanced),
                            updated_at=utcnow(),
                        )
                        self.store.save_workflow(workflow, check=False)
                    run = self.executor.start_run(workflow, background=True)
                    started.append(run.id)
                except ConcurrentRunError:
                    logger.warning("schedule for %s skipped: previous run still active", workflow_id)
                except NotReadyError:
                    logger.warning("schedule for %s skipped: workflow not ready", workflow_id)
                except UnknownIdError:
                    continue
            return started
        finally:
            self._tick_guard.release()
