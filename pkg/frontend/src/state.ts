// Pure view-model reducers. The run view folds events strictly in seq order;
// out-of-order or duplicate deliveries never move state backwards.

import type { RunEvent, Workflow } from "./types.js";

export type StepVisual = "idle" | "running" | "done" | "failed" | "skipped";

export interface RunView {
  runId: string | null;
  lastSeq: number;
  stepStates: StepVisual[];
  finished: boolean;
  failed: boolean;
  /** step indices in the order they were highlighted */
  highlightOrder: number[];
}

export function emptyRunView(stepCount: number): RunView {
  return {
    runId: null,
    lastSeq: -1,
    stepStates: Array.from({ length: stepCount }, () => "idle"),
    finished: false,
    failed: false,
    highlightOrder: [],
  };
}

export function applyRunEvent(view: RunView, event: RunEvent): RunView {
  if (event.seq <= view.lastSeq) return view; // replayed duplicate
  const next: RunView = {
    ...view,
    runId: event.run_id,
    lastSeq: event.seq,
    stepStates: [...view.stepStates],
    highlightOrder: [...view.highlightOrder],
  };
  switch (event.kind) {
    case "run_started":
      break;
    case "step_started":
      if (event.step_index !== null) {
        next.stepStates[event.step_index] = "running";
        next.highlightOrder.push(event.step_index);
      }
      break;
    case "step_completed":
      if (event.step_index !== null) next.stepStates[event.step_index] = "done";
      break;
    case "step_failed":
      if (event.step_index !== null) next.stepStates[event.step_index] = "failed";
      break;
    case "run_completed":
      next.finished = true;
      break;
    case "run_failed":
      next.finished = true;
      next.failed = true;
      for (let i = 0; i < next.stepStates.length; i += 1) {
        if (next.stepStates[i] === "idle") next.stepStates[i] = "skipped";
      }
      break;
  }
  return next;
}

export function workflowReady(workflow: Workflow): boolean {
  return workflow.status === "ready";
}

export function unresolvedLabels(workflow: Workflow): { step: number; label: string }[] {
  const out: { step: number; label: string }[] = [];
  for (const step of workflow.steps) {
    for (const capsule of step.data) {
      if (capsule.state === "unresolved") out.push({ step: step.index, label: capsule.label });
    }
  }
  return out;
}
