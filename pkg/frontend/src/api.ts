/** Typed access to the tutoring service endpoints.
 *
 * Every method resolves to parsed JSON or throws ApiError carrying the HTTP
 * status and the server's structured `detail` payload, so callers can show
 * the accepted-pattern list on parse failures and tell protocol rejections
 * from unknown sessions.
 */

import type { ErrorDetail, Snapshot, UtteranceReply } from "./types.js";

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly detail: ErrorDetail;

  constructor(status: number, detail: ErrorDetail) {
    super(detail.message ?? detail.error ?? `HTTP ${status}`);
    this.status = status;
    this.detail = detail;
  }
}

export interface CreateSessionOptions {
  settings?: string;
  seed?: number;
  positive_threshold?: number;
  use_model?: boolean;
  share_model?: boolean;
}

export class TutorApi {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(base = "", fetchFn?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  async createSession(options: CreateSessionOptions = {}): Promise<Snapshot> {
    return this.request("POST", "/sessions", options);
  }

  async state(sessionId: string): Promise<Snapshot> {
    return this.request("GET", `/sessions/${sessionId}/state`);
  }

  async utterance(sessionId: string, text: string): Promise<UtteranceReply> {
    return this.request("POST", `/sessions/${sessionId}/utterance`, { text });
  }

  async advance(sessionId: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/advance`);
  }

  async save(sessionId: string, path: string): Promise<{ path: string }> {
    return this.request("POST", `/sessions/${sessionId}/save`, { path });
  }

  eventsUrl(sessionId: string): string {
    return `${this.base}/sessions/${sessionId}/events`;
  }

  /** Image URL keyed by object index so advancing busts the browser cache. */
  imageUrl(snapshot: Snapshot): string {
    return `${this.base}${snapshot.image_url}?o=${snapshot.object_index}`;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.base}${path}`, init);
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail =
        payload && typeof payload === "object" && "detail" in payload
          ? (payload as { detail: unknown }).detail
          : payload;
      throw new ApiError(response.status, normalizeDetail(detail));
    }
    return payload as T;
  }
}

function normalizeDetail(detail: unknown): ErrorDetail {
  if (detail && typeof detail === "object" && "error" in detail) {
    return detail as ErrorDetail;
  }
  return { error: "request failed", message: String(detail ?? "") };
}
