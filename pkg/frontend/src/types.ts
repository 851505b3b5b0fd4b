// Wire types mirrored from the service's canonical JSON documents.

export type CapsuleState = "unresolved" | "resolved";

export interface DataSource {
  kind: "file" | "url" | "database" | "step_output";
  ref?: string;
  step_index?: number;
}

export interface DataCapsule {
  label: string;
  state: CapsuleState;
  source: DataSource | null;
}

export interface ContextAnnotation {
  text: string;
  kind: "format" | "constraint" | "destination" | "other";
}

export interface ActionBinding {
  action_id: string;
  verb: string;
  score: number;
  parameters: Record<string, { kind: string; value: string | number }>;
}

export interface StepOutput {
  step_index: number;
  kind: "file" | "table" | "text" | "url";
  value_ref: string;
  produced_at: string;
}

export interface Step {
  index: number;
  text: string;
  data: DataCapsule[];
  action: ActionBinding | null;
  context: ContextAnnotation[];
  output: StepOutput | null;
}

export interface Schedule {
  expression: string;
  timezone: string;
  next_fire: string;
}

export interface RefinementRecord {
  iteration: number;
  feedback: string;
  plan_before: string[];
  plan_after: string[];
  approved: boolean;
}

export interface Workflow {
  version: string;
  id: string;
  title: string;
  status: "draft" | "ready" | "running" | "succeeded" | "failed";
  steps: Step[];
  schedule: Schedule | null;
  refinement_history: RefinementRecord[];
  created_at: string;
  updated_at: string;
}

export interface RenderedStep {
  text: string;
  action_verb: string;
  data_labels_with_state: { label: string; state: CapsuleState }[];
  context: string[];
}

export interface Suggestion {
  id: string;
  source_prompt: string;
  rendered_steps: RenderedStep[];
  plan: { steps: string[]; iteration: number; final: boolean };
  expires_at: string;
}

export type RunEventKind =
  | "run_started"
  | "step_started"
  | "step_completed"
  | "step_failed"
  | "run_completed"
  | "run_failed";

export interface RunEvent {
  run_id: string;
  seq: number;
  kind: RunEventKind;
  step_index: number | null;
  payload: string;
  at: string;
}

export interface Run {
  id: string;
  workflow_id: string;
  status: "running" | "succeeded" | "failed";
  started_at: string;
  ended_at: string | null;
  step_results: StepOutput[];
}

export interface ActionManifest {
  id: string;
  name: string;
  description: string;
  parameter_schema: { label: string; required: boolean; kind: string }[];
  executor_kind: string;
}

export interface StepCandidates {
  step_index: number;
  candidates: { action_id: string; similarity: number }[];
}

export interface ApiError {
  code: string;
  message: string;
  details: unknown;
}
