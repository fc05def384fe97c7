/** Session controller: one active session per page.
 *
 * All rendered state comes from server snapshots, delivered by the event
 * stream or fetched from the state endpoint; nothing is painted
 * optimistically.  While an utterance is in flight the controls lock, and
 * they stay locked until the server's snapshot for that turn arrives.  A
 * dropped stream resyncs from the state endpoint, so a reconnected tab
 * always equals the server.
 */

import { ApiError, TutorApi, type CreateSessionOptions } from "./api.js";
import { renderCreateScreen, renderSession } from "./ui.js";
import type { ErrorDetail, Snapshot } from "./types.js";

export interface EventSourceLike {
  readyState: number;
  addEventListener(type: string, listener: (event: Event) => void): void;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

const STREAM_EVENTS = ["state", "turn", "end", "advance"] as const;
const OPEN = 1;
const CLOSED = 2;

export class TutorApp {
  private readonly root: HTMLElement;
  private readonly api: TutorApi;
  private readonly esFactory: EventSourceFactory;
  private es: EventSourceLike | null = null;
  private current: Snapshot | null = null;
  private stamps: number[] = [];
  private error: ErrorDetail | null = null;
  private busy = false;
  private draft = "";

  constructor(root: HTMLElement, api: TutorApi, esFactory?: EventSourceFactory) {
    this.root = root;
    this.api = api;
    this.esFactory =
      esFactory ?? ((url) => new EventSource(url) as EventSourceLike);
    root.addEventListener("click", (ev) => this.onClick(ev));
    root.addEventListener("submit", (ev) => this.onSubmit(ev));
    root.addEventListener("input", (ev) => this.onInput(ev));
  }

  get snapshot(): Snapshot | null {
    return this.current;
  }

  async start(sessionId?: string | null): Promise<void> {
    if (!sessionId) {
      this.showCreate("");
      return;
    }
    try {
      this.adopt(await this.api.state(sessionId));
    } catch (err) {
      this.showCreate(
        err instanceof ApiError && err.status === 404
          ? `session ${sessionId} is unknown; start a new one`
          : describe(err),
      );
    }
  }

  async create(options: CreateSessionOptions): Promise<void> {
    try {
      this.adopt(await this.api.createSession(options));
    } catch (err) {
      this.showCreate(describe(err));
    }
  }

  destroy(): void {
    this.es?.close();
    this.es = null;
  }

  // -- server state in ------------------------------------------------------

  private adopt(snapshot: Snapshot): void {
    this.applySnapshot(snapshot);
    this.connect();
    if (typeof history !== "undefined") {
      history.replaceState(null, "", `?session=${snapshot.id}`);
    }
  }

  private connect(): void {
    this.es?.close();
    const session = this.current;
    if (!session) return;
    const es = this.esFactory(this.api.eventsUrl(session.id));
    for (const type of STREAM_EVENTS) {
      es.addEventListener(type, (ev) => {
        this.applySnapshot(JSON.parse((ev as MessageEvent).data) as Snapshot);
      });
    }
    es.addEventListener("error", () => {
      if (es.readyState === CLOSED && this.es === es) this.connect();
      void this.resync();
    });
    this.es = es;
  }

  private async resync(): Promise<void> {
    if (!this.current) return;
    try {
      this.applySnapshot(await this.api.state(this.current.id));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.showCreate("session is gone; start a new one");
      } else {
        this.error = toDetail(err);
        this.render();
      }
    }
  }

  private applySnapshot(snapshot: Snapshot): void {
    const sameDialogue =
      this.current !== null &&
      this.current.id === snapshot.id &&
      this.current.object_index === snapshot.object_index &&
      snapshot.transcript.length >= this.stamps.length;
    if (!sameDialogue) this.stamps = [];
    const now = Date.now();
    while (this.stamps.length < snapshot.transcript.length) {
      this.stamps.push(now);
    }
    this.current = snapshot;
    this.busy = false;
    this.error = null;
    this.render();
  }

  // -- tutor actions out ----------------------------------------------------

  private async send(text: string): Promise<void> {
    const session = this.current;
    if (!session || this.busy) return;
    this.busy = true;
    this.error = null;
    this.render();
    try {
      await this.api.utterance(session.id, text);
      this.draft = "";
      if (!this.streamLive()) await this.resync();
    } catch (err) {
      this.busy = false;
      this.error = toDetail(err);
      this.render();
    }
  }

  private async advance(): Promise<void> {
    const session = this.current;
    if (!session || this.busy) return;
    this.busy = true;
    this.error = null;
    this.render();
    try {
      await this.api.advance(session.id);
      if (!this.streamLive()) await this.resync();
    } catch (err) {
      this.busy = false;
      this.error = toDetail(err);
      this.render();
    }
  }

  private streamLive(): boolean {
    return this.es !== null && this.es.readyState === OPEN;
  }

  // -- DOM ------------------------------------------------------------------

  private render(): void {
    const snapshot = this.current;
    if (!snapshot) return;
    this.root.innerHTML = renderSession(
      snapshot,
      this.stamps,
      this.api.imageUrl(snapshot),
      this.error,
      this.busy,
    );
    const input = this.root.querySelector<HTMLInputElement>(
      '[data-role="say"] input[name="text"]',
    );
    if (input) input.value = this.draft;
  }

  private showCreate(notice: string): void {
    this.destroy();
    this.current = null;
    this.stamps = [];
    this.root.innerHTML = renderCreateScreen(notice);
  }

  private onClick(ev: Event): void {
    const target = ev.target as HTMLElement;
    const quick = target.closest<HTMLButtonElement>("button[data-say]");
    if (quick) {
      if (!quick.disabled) void this.send(quick.dataset.say ?? "");
      return;
    }
    const next = target.closest<HTMLButtonElement>('[data-role="advance"]');
    if (next && !next.disabled) void this.advance();
  }

  private onSubmit(ev: Event): void {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    if (form.dataset.role === "create") {
      const settings = (
        form.querySelector('[name="settings"]') as HTMLSelectElement
      ).value;
      const seed =
        Number(
          (form.querySelector('[name="seed"]') as HTMLInputElement).value,
        ) || 0;
      void this.create({ settings, seed });
    } else if (form.dataset.role === "say") {
      const text = this.draft.trim();
      if (text) void this.send(text);
    }
  }

  private onInput(ev: Event): void {
    const target = ev.target as HTMLInputElement;
    if (target.name === "text") this.draft = target.value;
  }
}

function toDetail(err: unknown): ErrorDetail {
  if (err instanceof ApiError) return err.detail;
  return { error: "connection", message: describe(err) };
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
