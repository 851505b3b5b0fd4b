// Pure HTML renderers: server documents in, markup out. No hidden state, so
// the canvas can always be re-rendered from a fresh GET.

import type { RunView } from "./state.js";
import type { ActionManifest, RenderedStep, Suggestion, Workflow } from "./types.js";

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function chipClass(state: "unresolved" | "resolved"): string {
  return state === "resolved" ? "chip chip-resolved" : "chip chip-unresolved";
}

/** Step text with {label} slots replaced by capsule chips and the verb bolded. */
export function renderStepText(
  text: string,
  verb: string,
  capsules: { label: string; state: "unresolved" | "resolved"; ref?: string }[],
): string {
  let html = esc(text);
  for (const capsule of capsules) {
    const chip =
      `<span class="${chipClass(capsule.state)}" data-label="${esc(capsule.label)}">` +
      `${esc(capsule.state === "resolved" && capsule.ref ? capsule.ref : capsule.label)}</span>`;
    const slot = esc(`{${capsule.label}}`);
    html = html.includes(slot) ? html.replace(slot, chip) : html.replace(esc(capsule.label), chip);
  }
  if (verb) {
    const pattern = new RegExp(`^(${esc(verb)})\\b`);
    html = html.replace(pattern, "<strong>$1</strong>");
  }
  return html;
}

export function renderSuggestion(suggestion: Suggestion): string {
  const steps = suggestion.rendered_steps
    .map((step: RenderedStep, i: number) => {
      const capsules = step.data_labels_with_state.map((d) => ({
        label: d.label,
        state: d.state,
      }));
      const context = step.context.length
        ? `<em class="context">${step.context.map(esc).join(" · ")}</em>`
        : "";
      return (
        `<li class="suggested-step" data-index="${i}">` +
        `${renderStepText(step.text, step.action_verb, capsules)} ${context}</li>`
      );
    })
    .join("");
  return (
    `<div class="suggestion" data-id="${esc(suggestion.id)}">` +
    `<h3>Suggested steps</h3><ol>${steps}</ol>` +
    `<button class="apply" data-id="${esc(suggestion.id)}">Apply</button> ` +
    `<button class="reject" data-id="${esc(suggestion.id)}">Reject</button></div>`
  );
}

export function renderWorkflow(workflow: Workflow, view: RunView | null): string {
  const nodes = workflow.steps
    .map((step) => {
      const visual = view ? view.stepStates[step.index] : "idle";
      const capsules = step.data.map((c) => ({
        label: c.label,
        state: c.state,
        ref: c.source?.ref,
      }));
      const verb = step.action?.verb ?? "";
      const action = step.action
        ? `<div class="action" title="score ${step.action.score.toFixed(3)}">` +
          `${esc(step.action.action_id)}</div>`
        : `<div class="action action-missing">unmapped</div>`;
      const output = step.output
        ? `<div class="output">→ ${esc(step.output.value_ref)}</div>`
        : "";
      return (
        `<div class="node node-${visual}" draggable="true" data-step="${step.index}">` +
        `<div class="node-index">${step.index + 1}</div>` +
        `<div class="node-text">${renderStepText(step.text, verb, capsules)}</div>` +
        action + output +
        `<div class="node-error" data-step="${step.index}"></div>` +
        `</div>`
      );
    })
    .join('<div class="link-arrow">→</div>');
  const schedule = workflow.schedule
    ? `<span class="schedule">⏰ ${esc(workflow.schedule.expression)} ` +
      `(${esc(workflow.schedule.timezone)}), next ${esc(workflow.schedule.next_fire)}</span>`
    : "";
  return (
    `<div class="workflow" data-id="${esc(workflow.id)}">` +
    `<div class="workflow-header"><strong>${esc(workflow.title)}</strong> ` +
    `<span class="status status-${workflow.status}">${workflow.status}</span> ${schedule}</div>` +
    `<div class="chain">${nodes}</div></div>`
  );
}

export function renderActionPanel(
  actions: ActionManifest[],
  boundId: string | null,
  candidates: { action_id: string; similarity: number }[] = [],
): string {
  const scores = new Map(candidates.map((c) => [c.action_id, c.similarity]));
  const ordered = candidates.length
    ? (candidates
        .map((c) => actions.find((a) => a.id === c.action_id))
        .filter(Boolean) as ActionManifest[])
    : actions;
  const rows = ordered
    .map((action) => {
      const mark = action.id === boundId ? " action-bound" : "";
      const score = scores.has(action.id)
        ? `<span class="score">${scores.get(action.id)!.toFixed(3)}</span> `
        : "";
      return (
        `<li class="action-row${mark}" data-action="${esc(action.id)}">` +
        `${score}<code>${esc(action.name)}</code>: ${esc(action.description)}</li>`
      );
    })
    .join("");
  return `<ul class="action-panel">${rows}</ul>`;
}

export function renderEventLine(kind: string, stepIndex: number | null, payload: string): string {
  const step = stepIndex === null ? "" : ` step ${stepIndex + 1}`;
  return `<div class="event event-${kind}">${esc(kind)}${step} ${esc(payload)}</div>`;
}
