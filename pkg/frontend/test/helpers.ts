/** Shared fakes: a routed fetch stand-in and a hand-cranked event source. */

import type { EventSourceLike } from "../src/app.js";
import type { FetchLike } from "../src/api.js";
import type { Snapshot } from "../src/types.js";

export const PATTERNS = [
  "yes",
  "no",
  "no it is <attribute>",
  "no <attribute>",
  "it is <attribute>",
  "<attribute>",
  "what colour is this",
  "what shape is this",
  "and the colour",
  "and the shape",
  "so this is a",
];

export function makeSnapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    id: "abc123def456",
    settings: "L+UC+CD",
    object_index: 0,
    object_id: "obj-0000",
    image_url: "/sessions/abc123def456/object.png",
    turn: "tutor",
    ended: false,
    transcript: [
      {
        speaker: "learner",
        move: "AskWh(colour)",
        text: "what colour is this",
      },
    ],
    agreed: "{x=obj-0000 : Ind}",
    confidences: [],
    bands: { base: 0.5, positive: 0.9 },
    cost: 2.0,
    patterns: PATTERNS,
    ...overrides,
  };
}

interface Refusal {
  __status: number;
  detail: unknown;
}

type Handler = (body: unknown) => unknown | Promise<unknown>;

export function refuse(status: number, detail: unknown): Refusal {
  return { __status: status, detail };
}

/** Routes "METHOD /path" to a handler and records every call it serves. */
export class FakeServer {
  readonly calls: { method: string; path: string; body: unknown }[] = [];
  private readonly handlers = new Map<string, Handler>();

  on(method: string, path: string, handler: Handler): void {
    this.handlers.set(`${method} ${path}`, handler);
  }

  readonly fetch: FetchLike = async (input, init = {}) => {
    const url = new URL(input, "http://test.invalid");
    const method = (init.method ?? "GET").toUpperCase();
    const body =
      typeof init.body === "string" ? JSON.parse(init.body) : undefined;
    this.calls.push({ method, path: url.pathname, body });
    const handler = this.handlers.get(`${method} ${url.pathname}`);
    if (!handler) {
      return jsonResponse(404, { detail: { error: "unknown session" } });
    }
    const result = await handler(body);
    if (isRefusal(result)) {
      return jsonResponse(result.__status, { detail: result.detail });
    }
    return jsonResponse(200, result);
  };

  sent(method: string, path: string): unknown[] {
    return this.calls
      .filter((c) => c.method === method && c.path === path)
      .map((c) => c.body);
  }
}

function isRefusal(value: unknown): value is Refusal {
  return typeof value === "object" && value !== null && "__status" in value;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class FakeEventSource implements EventSourceLike {
  static instances: FakeEventSource[] = [];

  readonly url: string;
  readyState = 0;
  private readonly listeners = new Map<string, ((ev: Event) => void)[]>();

  constructor(url: string) {
    this.url = url;
    FakeEventSource.instances.push(this);
  }

  static reset(): void {
    FakeEventSource.instances = [];
  }

  static last(): FakeEventSource {
    const es = FakeEventSource.instances.at(-1);
    if (!es) throw new Error("no event source was opened");
    return es;
  }

  addEventListener(type: string, listener: (ev: Event) => void): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  close(): void {
    this.readyState = 2;
  }

  open(): void {
    this.readyState = 1;
    this.fire(new Event("open"));
  }

  emit(type: string, snapshot: Snapshot): void {
    this.fire(new MessageEvent(type, { data: JSON.stringify(snapshot) }));
  }

  drop(): void {
    this.fire(new Event("error"));
  }

  private fire(event: Event): void {
    for (const listener of this.listeners.get(event.type) ?? []) {
      listener(event);
    }
  }
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
