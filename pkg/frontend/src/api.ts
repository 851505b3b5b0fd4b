// Typed client for the workflow service. The server is the single source of
// truth: every mutation returns the fresh document, which callers re-render.

import type {
  ActionManifest,
  ApiError,
  DataSource,
  Run,
  StepCandidates,
  Suggestion,
  Workflow,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly error: ApiError,
  ) {
    super(`${error.code}: ${error.message}`);
  }
}

async function parseError(response: Response): Promise<never> {
  let body: ApiError;
  try {
    body = (await response.json()) as ApiError;
  } catch {
    body = { code: "internal", message: response.statusText, details: null };
  }
  throw new ApiRequestError(response.status, body);
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  suggest(prompt: string): Promise<Suggestion> {
    return this.request("POST", "/suggestions", { prompt });
  }

  applySuggestion(id: string): Promise<Workflow> {
    return this.request("POST", `/suggestions/${id}/apply`);
  }

  rejectSuggestion(id: string, prompt?: string): Promise<Suggestion | null> {
    return this.request("POST", `/suggestions/${id}/reject`, prompt ? { prompt } : {});
  }

  listWorkflows(): Promise<Workflow[]> {
    return this.request("GET", "/workflows");
  }

  getWorkflow(id: string): Promise<Workflow> {
    return this.request("GET", `/workflows/${id}`);
  }

  deleteWorkflow(id: string): Promise<unknown> {
    return this.request("DELETE", `/workflows/${id}`);
  }

  attachData(id: string, step: number, label: string, source: DataSource): Promise<Workflow> {
    return this.request("POST", `/workflows/${id}/data`, { step, label, source });
  }

  patchSteps(
    id: string,
    op:
      | { op: "add"; text: string; position?: number }
      | { op: "remove"; step: number }
      | { op: "edit"; step: number; text: string }
      | { op: "reorder"; from: number; to: number }
      | { op: "bind"; step: number; action_id: string },
  ): Promise<Workflow> {
    return this.request("PATCH", `/workflows/${id}/steps`, op);
  }

  stepCandidates(id: string, step: number): Promise<StepCandidates> {
    return this.request("GET", `/workflows/${id}/steps/${step}/candidates`);
  }

  refine(id: string, feedback: string): Promise<Workflow> {
    return this.request("POST", `/workflows/${id}/refine`, { feedback });
  }

  approve(id: string): Promise<Workflow> {
    return this.request("POST", `/workflows/${id}/refine`, { approve: true });
  }

  schedule(id: string, expression: string, timezone: string): Promise<Workflow> {
    return this.request("POST", `/workflows/${id}/schedule`, { expression, timezone });
  }

  unschedule(id: string): Promise<Workflow> {
    return this.request("DELETE", `/workflows/${id}/schedule`);
  }

  run(id: string): Promise<Run> {
    return this.request("POST", `/workflows/${id}/run`);
  }

  getRun(id: string): Promise<Run> {
    return this.request("GET", `/runs/${id}`);
  }

  listActions(): Promise<ActionManifest[]> {
    return this.request("GET", "/actions");
  }

  addAction(manifest: object): Promise<ActionManifest> {
    return this.request("POST", "/actions", manifest);
  }
}
