// SSE client over fetch streaming, so it runs in both browser and node.
// Reconnects automatically with Last-Event-ID, replaying only the suffix;
// the subscriber sees one gap-free, seq-ordered stream.

import type { RunEvent } from "./types.js";

const TERMINAL = new Set(["run_completed", "run_failed"]);

export interface StreamHandle {
  done: Promise<RunEvent[]>;
  /** Drop the connection as if the network failed; auto-reconnect resumes. */
  forceDisconnect(): void;
  close(): void;
}

interface Options {
  maxReconnects?: number;
  reconnectDelayMs?: number;
}

export function streamRunEvents(
  baseUrl: string,
  runId: string,
  onEvent: (event: RunEvent) => void,
  options: Options = {},
): StreamHandle {
  const maxReconnects = options.maxReconnects ?? 20;
  const reconnectDelayMs = options.reconnectDelayMs ?? 100;
  const seen: RunEvent[] = [];
  let lastEventId = -1;
  let closed = false;
  let controller: AbortController | null = null;

  const done = (async (): Promise<RunEvent[]> => {
    let attempts = 0;
    while (!closed) {
      controller = new AbortController();
      const headers: Record<string, string> = {};
      if (lastEventId >= 0) headers["Last-Event-ID"] = String(lastEventId);
      try {
        const response = await fetch(`${baseUrl}/runs/${runId}/events`, {
          headers,
          signal: controller.signal,
        });
        if (!response.ok || !response.body) throw new Error(`stream failed: ${response.status}`);
        const terminal = await consume(response.body, (event) => {
          if (event.seq <= lastEventId) return; // duplicate after resume
          lastEventId = event.seq;
          seen.push(event);
          onEvent(event);
        });
        if (terminal) return seen;
      } catch {
        // fall through to reconnect
      }
      attempts += 1;
      if (closed || attempts > maxReconnects) break;
      await new Promise((resolve) => setTimeout(resolve, reconnectDelayMs));
    }
    return seen;
  })();

  return {
    done,
    forceDisconnect: () => controller?.abort(),
    close: () => {
      closed = true;
      controller?.abort();
    },
  };
}

/** Parse one SSE connection; resolves true once a terminal event arrived. */
async function consume(
  body: ReadableStream<Uint8Array>,
  emit: (event: RunEvent) => void,
): Promise<boolean> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  let sawTerminal = false;
  for (;;) {
    const { value, done } = await reader.read();
    if (value) buffer += decoder.decode(value, { stream: true });
    let boundary: number;
    while ((boundary = buffer.indexOf("\n\n")) >= 0) {
      const frame = buffer.slice(0, boundary);
      buffer = buffer.slice(boundary + 2);
      const event = parseFrame(frame);
      if (event) {
        emit(event);
        if (TERMINAL.has(event.kind)) sawTerminal = true;
      }
    }
    if (done) return sawTerminal;
    if (sawTerminal) {
      await reader.cancel();
      return true;
    }
  }
}

function parseFrame(frame: string): RunEvent | null {
  let data = "";
  for (const line of frame.split("\n")) {
    if (line.startsWith("data: ")) data += line.slice(6);
  }
  if (!data) return null;
  try {
    return JSON.parse(data) as RunEvent;
  } catch {
    return null;
  }
}
