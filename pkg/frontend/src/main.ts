// DOM wiring for the builder page. The UI holds no state of its own beyond
// the open run subscription: every mutation round-trips through the API and
// re-renders the server's document.

import { ApiClient, ApiRequestError } from "./api.js";
import { streamRunEvents, type StreamHandle } from "./events.js";
import { applyRunEvent, emptyRunView, type RunView } from "./state.js";
import { renderActionPanel, renderEventLine, renderSuggestion, renderWorkflow } from "./render.js";
import type { Suggestion, Workflow } from "./types.js";

const api = new ApiClient("");

let currentWorkflow: Workflow | null = null;
let currentSuggestion: Suggestion | null = null;
let runView: RunView | null = null;
let stream: StreamHandle | null = null;
let dragFrom: number | null = null;
let selectedStep = 0;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(err: unknown, stepIndex: number | null = null): void {
  const message =
    err instanceof ApiRequestError
      ? `${err.error.code}: ${err.error.message}`
      : String(err);
  if (stepIndex !== null) {
    const slot = document.querySelector(`.node-error[data-step="${stepIndex}"]`);
    if (slot) {
      slot.textContent = message;
      return;
    }
  }
  el("global-error").textContent = message;
  setTimeout(() => (el("global-error").textContent = ""), 6000);
}

function renderCanvas(): void {
  const canvas = el("canvas");
  if (!currentWorkflow) {
    canvas.innerHTML = '<p class="hint">Apply a suggestion to start building.</p>';
    return;
  }
  canvas.innerHTML = renderWorkflow(currentWorkflow, runView);
  wireCanvas();
  el("run-btn").toggleAttribute("disabled", currentWorkflow.status !== "ready");
}

async function refreshWorkflow(): Promise<void> {
  if (!currentWorkflow) return;
  currentWorkflow = await api.getWorkflow(currentWorkflow.id);
  renderCanvas();
}

function wireCanvas(): void {
  for (const chip of document.querySelectorAll<HTMLElement>("#canvas .chip")) {
    const node = chip.closest<HTMLElement>(".node");
    const step = Number(node?.dataset.step ?? -1);
    const label = chip.dataset.label ?? "";
    chip.addEventListener("dragover", (event) => event.preventDefault());
    chip.addEventListener("drop", (event) => {
      event.preventDefault();
      event.stopPropagation();
      const file = (event as DragEvent).dataTransfer?.files?.[0];
      if (file) void attach(step, label, { kind: "file", ref: file.name });
    });
    chip.addEventListener("click", () => {
      const ref = window.prompt(`Link "${label}" to a file path or URL`);
      if (!ref) return;
      const kind = ref.startsWith("http://") || ref.startsWith("https://") ? "url" : "file";
      void attach(step, label, { kind, ref });
    });
  }
  for (const node of document.querySelectorAll<HTMLElement>("#canvas .node")) {
    node.addEventListener("click", (event) => {
      if ((event.target as HTMLElement).classList.contains("chip")) return;
      selectedStep = Number(node.dataset.step);
      void renderActions();
    });
    node.addEventListener("dragstart", () => {
      dragFrom = Number(node.dataset.step);
    });
    node.addEventListener("dragover", (event) => event.preventDefault());
    node.addEventListener("drop", (event) => {
      event.preventDefault();
      const to = Number(node.dataset.step);
      if (dragFrom === null || dragFrom === to || !currentWorkflow) return;
      api
        .patchSteps(currentWorkflow.id, { op: "reorder", from: dragFrom, to })
        .then((workflow) => {
          currentWorkflow = workflow;
          renderCanvas();
        })
        .catch((err) => showError(err, to));
      dragFrom = null;
    });
  }
}

async function attach(
  step: number,
  label: string,
  source: { kind: "file" | "url"; ref: string },
): Promise<void> {
  if (!currentWorkflow) return;
  try {
    currentWorkflow = await api.attachData(currentWorkflow.id, step, label, source);
    renderCanvas();
  } catch (err) {
    showError(err, step);
  }
}

async function onSuggest(): Promise<void> {
  const prompt = el<HTMLTextAreaElement>("prompt-input").value.trim();
  if (!prompt) return;
  try {
    currentSuggestion = await api.suggest(prompt);
    el("suggestion-box").innerHTML = renderSuggestion(currentSuggestion);
    el("suggestion-box")
      .querySelector(".apply")
      ?.addEventListener("click", () => void onApply());
    el("suggestion-box")
      .querySelector(".reject")
      ?.addEventListener("click", () => {
        if (currentSuggestion) void api.rejectSuggestion(currentSuggestion.id);
        currentSuggestion = null;
        el("suggestion-box").innerHTML = "";
      });
  } catch (err) {
    showError(err);
  }
}

async function onApply(): Promise<void> {
  if (!currentSuggestion) return;
  try {
    currentWorkflow = await api.applySuggestion(currentSuggestion.id);
    currentSuggestion = null;
    el("suggestion-box").innerHTML = "";
    runView = null;
    renderCanvas();
    await renderActions();
  } catch (err) {
    showError(err);
  }
}

async function renderActions(): Promise<void> {
  const actions = await api.listActions();
  const step = currentWorkflow?.steps[selectedStep];
  const bound = step?.action?.action_id ?? null;
  let candidates: { action_id: string; similarity: number }[] = [];
  if (currentWorkflow && step) {
    try {
      candidates = (await api.stepCandidates(currentWorkflow.id, selectedStep)).candidates;
    } catch {
      candidates = [];
    }
  }
  const title = step ? ` / candidates for step ${selectedStep + 1}` : "";
  el("action-panel-title").textContent = `Action pool${title}`;
  el("action-list").innerHTML = renderActionPanel(actions, bound, candidates);
  for (const row of document.querySelectorAll<HTMLElement>("#action-list .action-row")) {
    row.addEventListener("click", () => {
      if (!currentWorkflow) return;
      api
        .patchSteps(currentWorkflow.id, {
          op: "bind",
          step: selectedStep,
          action_id: row.dataset.action ?? "",
        })
        .then((workflow) => {
          currentWorkflow = workflow;
          renderCanvas();
          void renderActions();
        })
        .catch((err) => showError(err, selectedStep));
    });
  }
}

async function onRun(): Promise<void> {
  if (!currentWorkflow) return;
  stream?.close();
  const log = el("event-log");
  log.innerHTML = "";
  try {
    const run = await api.run(currentWorkflow.id);
    runView = emptyRunView(currentWorkflow.steps.length);
    stream = streamRunEvents("", run.id, (event) => {
      runView = applyRunEvent(runView!, event);
      log.insertAdjacentHTML(
        "beforeend",
        renderEventLine(event.kind, event.step_index, event.payload),
      );
      renderCanvas();
      if (runView.finished) void refreshWorkflow();
    });
    await stream.done;
  } catch (err) {
    showError(err);
  }
}

async function onRefine(): Promise<void> {
  if (!currentWorkflow) return;
  const box = el<HTMLInputElement>("refine-input");
  const feedback = box.value.trim();
  if (!feedback) return;
  try {
    currentWorkflow = await api.refine(currentWorkflow.id, feedback);
    box.value = "";
    runView = null;
    renderCanvas();
  } catch (err) {
    showError(err);
  }
}

async function onSchedule(): Promise<void> {
  if (!currentWorkflow) return;
  const expression = el<HTMLInputElement>("schedule-expr").value.trim();
  const timezone = el<HTMLInputElement>("schedule-tz").value.trim() || "UTC";
  if (!expression) return;
  try {
    currentWorkflow = await api.schedule(currentWorkflow.id, expression, timezone);
    renderCanvas();
  } catch (err) {
    showError(err);
  }
}

function switchTab(tab: "service" | "schedule"): void {
  el("service-tab").classList.toggle("active", tab === "service");
  el("schedule-tab").classList.toggle("active", tab === "schedule");
  el("service-pane").style.display = tab === "service" ? "" : "none";
  el("schedule-pane").style.display = tab === "schedule" ? "" : "none";
}

export function boot(): void {
  el("suggest-btn").addEventListener("click", () => void onSuggest());
  el("run-btn").addEventListener("click", () => void onRun());
  el("refine-btn").addEventListener("click", () => void onRefine());
  el("approve-btn").addEventListener("click", () => {
    if (currentWorkflow)
      void api.approve(currentWorkflow.id).then((w) => {
        currentWorkflow = w;
        renderCanvas();
      }).catch(showError);
  });
  el("schedule-btn").addEventListener("click", () => void onSchedule());
  el("service-tab").addEventListener("click", () => switchTab("service"));
  el("schedule-tab").addEventListener("click", () => switchTab("schedule"));
  renderCanvas();
  void renderActions().catch(() => undefined);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
