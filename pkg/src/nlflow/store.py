"""File-backed persistence: canonical workflow documents, run records,
append-only per-run event logs, step outputs and the test-mode email outbox.

Directory layout under the data root:
    workflows/<id>.json
    runs/<run_id>/run.json
    runs/<run_id>/events.jsonl
    runs/<run_id>/steps/<index>/<filename>
    actions/<id>.json
    outbox/<run_id>-<seq>.eml
"""

from __future__ import annotations

import json
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any

from .errors import UnknownIdError
from .model import Workflow, canonical_bytes, deserialize, serialize


class FileStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        for sub in ("workflows", "runs", "actions", "outbox", "files", "suggestions"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()

    def lock(self, key: str) -> threading.Lock:
        """Per-entity lock used to serialize mutations of one workflow."""
        with self._locks_guard:
            return self._locks[key]

    # -- workflows ----------------------------------------------------------

    def _workflow_path(self, workflow_id: str) -> Path:
        return self.root / "workflows" / f"{workflow_id}.json"

    def save_workflow(self, workflow: Workflow, *, check: bool = True) -> None:
        data = serialize(workflow, check=check)
        self._atomic_write(self._workflow_path(workflow.id), data)

    def load_workflow(self, workflow_id: str) -> Workflow:
        path = self._workflow_path(workflow_id)
        if not path.exists():
            raise UnknownIdError(f"no workflow {workflow_id!r}")
        return deserialize(path.read_bytes())

    def workflow_bytes(self, workflow_id: str) -> bytes:
        path = self._workflow_path(workflow_id)
        if not path.exists():
            raise UnknownIdError(f"no workflow {workflow_id!r}")
        return path.read_bytes()

    def list_workflow_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "workflows").glob("*.json"))

    def list_workflows(self) -> list[Workflow]:
        return [self.load_workflow(i) for i in self.list_workflow_ids()]

    def delete_workflow(self, workflow_id: str) -> None:
        path = self._workflow_path(workflow_id)
        if not path.exists():
            raise UnknownIdError(f"no workflow {workflow_id!r}")
        path.unlink()

    # -- runs -----------------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def save_run_doc(self, run_id: str, doc: dict[str, Any]) -> None:
        run_dir = self._run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        self._atomic_write(run_dir / "run.json", canonical_bytes(doc))

    def load_run_doc(self, run_id: str) -> dict[str, Any]:
        path = self._run_dir(run_id) / "run.json"
        if not path.exists():
            raise UnknownIdError(f"no run {run_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def run_exists(self, run_id: str) -> bool:
        return (self._run_dir(run_id) / "run.json").exists()

    def append_event_line(self, run_id: str, line: str) -> None:
        run_dir = self._run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "events.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def read_event_lines(self, run_id: str) -> list[str]:
        path = self._run_dir(run_id) / "events.jsonl"
        if not path.exists():
            return []
        text = path.read_text(encoding="utf-8")
        # A concurrent writer may leave a partial trailing line; skip it.
        complete, sep, _ = text.rpartition("\n")
        if not sep:
            return []
        return [line for line in complete.split("\n") if line]

    # -- step outputs -------------------------------------------------------

    def step_dir(self, run_id: str, step_index: int) -> Path:
        path = self._run_dir(run_id) / "steps" / str(step_index)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_step_file(self, run_id: str, step_index: int, filename: str, data: bytes) -> str:
        path = self.step_dir(run_id, step_index) / filename
        self._atomic_write(path, data)
        return str(path.relative_to(self.root))

    def resolve_ref(self, value_ref: str) -> Path:
        return self.root / value_ref

    # -- email outbox ---------------------------------------------------------

    def outbox_write(self, run_id: str, seq: int, content: str) -> str:
        path = self.root / "outbox" / f"{run_id}-{seq}.eml"
        self._atomic_write(path, content.encode("utf-8"))
        return str(path.relative_to(self.root))

    # -- suggestion cache ------------------------------------------------------

    def save_suggestion_doc(self, suggestion_id: str, doc: dict[str, Any]) -> None:
        self._atomic_write(
            self.root / "suggestions" / f"{suggestion_id}.json", canonical_bytes(doc)
        )

    def take_suggestion_doc(self, suggestion_id: str) -> dict[str, Any] | None:
        """Read-and-delete; exactly one caller gets the document."""
        path = self.root / "suggestions" / f"{suggestion_id}.json"
        with self.lock(f"suggestion:{suggestion_id}"):
            try:
                data = path.read_bytes()
                path.unlink()
            except FileNotFoundError:
                return None
        return json.loads(data.decode("utf-8"))

    def prune_suggestions(self, cutoff_iso: str) -> None:
        for path in (self.root / "suggestions").glob("*.json"):
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                if doc.get("expires_at", "") < cutoff_iso:
                    path.unlink()
            except (OSError, json.JSONDecodeError):
                continue

    # -- uploaded action manifests -------------------------------------------

    def save_action_manifest(self, action_id: str, doc: dict[str, Any]) -> None:
        self._atomic_write(self.root / "actions" / f"{action_id}.json", canonical_bytes(doc))

    def actions_dir(self) -> Path:
        return self.root / "actions"

    # -- misc -----------------------------------------------------------------

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
