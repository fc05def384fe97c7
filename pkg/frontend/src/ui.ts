/** Pure HTML renderers.
 *
 * Everything here maps server state to markup strings; no fetching and no
 * DOM mutation, which keeps the render path trivial to test.  The transcript
 * is rendered strictly in server order and confidence bars carry the exact
 * probability in a data attribute alongside the rounded display value.
 */

import {
  ATTRIBUTES,
  attributePhrase,
  bandOf,
  CONDITIONS,
  type Bands,
  type ConfidenceEntry,
  type ErrorDetail,
  type Snapshot,
  type TranscriptEntry,
} from "./types.js";

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderStatus(snapshot: Snapshot): string {
  const turn =
    snapshot.turn === "ended"
      ? "dialogue over"
      : snapshot.turn === "tutor"
        ? "your turn"
        : "learner thinking";
  return `
    <span class="settings">${esc(snapshot.settings)}</span>
    <span class="object">${esc(snapshot.object_id)}</span>
    <span class="turn turn-${esc(snapshot.turn)}">${turn}</span>
    <span class="cost">tutor effort ${snapshot.cost.toFixed(2)}</span>
  `;
}

export function renderTranscript(
  entries: TranscriptEntry[],
  stamps: number[],
): string {
  if (entries.length === 0) {
    return `<div class="empty">no turns yet</div>`;
  }
  return entries
    .map((entry, i) => {
      const at = stamps[i] !== undefined ? timeLabel(stamps[i]) : "";
      return `
        <div class="utterance ${entry.speaker}" data-move="${esc(entry.move)}">
          <span class="who">${entry.speaker}</span>
          <span class="words">${esc(entry.text)}</span>
          <span class="when">${at}</span>
        </div>
      `;
    })
    .join("");
}

function timeLabel(ms: number): string {
  return new Date(ms).toLocaleTimeString();
}

export function renderConfidence(
  confidences: ConfidenceEntry[],
  bands: Bands,
): string {
  if (confidences.length === 0) {
    return `<div class="empty">nothing learned yet</div>`;
  }
  return confidences
    .map((c) => {
      const band = bandOf(c.prob, bands);
      const width = Math.max(0, Math.min(100, c.prob * 100));
      return `
        <div class="bar-row${c.best ? " best" : ""}" data-attribute="${esc(c.attribute)}">
          <span class="bar-label">${esc(c.attribute)}</span>
          <span class="bar-track">
            <span class="bar-fill band-${band}" data-prob="${c.prob}"
                  style="width: ${width.toFixed(1)}%"></span>
          </span>
          <span class="bar-value">${c.prob.toFixed(2)}</span>
        </div>
      `;
    })
    .join("");
}

/** One button per tutor move so nobody has to memorize the grammar. */
export function quickActions(): { label: string; say: string }[] {
  const actions = [
    { label: "Yes", say: "yes" },
    { label: "No", say: "no" },
    { label: "What colour is this?", say: "what colour is this" },
    { label: "What shape is this?", say: "what shape is this" },
    { label: "And the colour?", say: "and the colour" },
    { label: "And the shape?", say: "and the shape" },
    { label: "So this is a...", say: "so this is a" },
  ];
  for (const attribute of ATTRIBUTES) {
    actions.push({
      label: `It is ${attributePhrase(attribute)}`,
      say: `it is ${attributePhrase(attribute)}`,
    });
  }
  for (const attribute of ATTRIBUTES) {
    actions.push({
      label: `No, it is ${attributePhrase(attribute)}`,
      say: `no it is ${attributePhrase(attribute)}`,
    });
  }
  return actions;
}

export function renderQuickActions(enabled: boolean): string {
  return quickActions()
    .map(
      (a) => `
        <button type="button" class="quick" data-say="${esc(a.say)}"
                ${enabled ? "" : "disabled"}>${esc(a.label)}</button>
      `,
    )
    .join("");
}

export function renderError(detail: ErrorDetail | null): string {
  if (!detail) return "";
  const patterns = detail.patterns
    ? `<div class="patterns">accepted patterns:
         <ul>${detail.patterns.map((p) => `<li><code>${esc(p)}</code></li>`).join("")}</ul>
       </div>`
    : "";
  return `
    <div class="error" data-error="${esc(detail.error)}">
      <span class="error-message">${esc(detail.message ?? detail.error)}</span>
      ${patterns}
    </div>
  `;
}

export function renderCreateScreen(notice: string): string {
  const options = CONDITIONS.map(
    (c) => `<option value="${c}">${c}</option>`,
  ).join("");
  return `
    <form class="create" data-role="create">
      ${notice ? `<div class="notice">${esc(notice)}</div>` : ""}
      <label>dialogue policy
        <select name="settings">${options}</select>
      </label>
      <label>object order seed
        <input name="seed" type="number" value="0">
      </label>
      <button type="submit">start teaching</button>
    </form>
  `;
}

export function renderSession(
  snapshot: Snapshot,
  stamps: number[],
  imageUrl: string,
  error: ErrorDetail | null,
  busy: boolean,
): string {
  const tutorTurn = snapshot.turn === "tutor" && !busy;
  return `
    <header class="status" data-role="status">${renderStatus(snapshot)}</header>
    <main class="layout">
      <section class="object-pane">
        <img class="object-image" data-role="image" src="${esc(imageUrl)}"
             alt="object ${esc(snapshot.object_id)}">
        <div class="agreed" data-role="agreed">${esc(snapshot.agreed)}</div>
        <button type="button" class="advance" data-role="advance"
                ${snapshot.ended ? "" : "disabled"}>next object</button>
      </section>
      <section class="dialogue-pane">
        <div class="transcript" data-role="transcript">
          ${renderTranscript(snapshot.transcript, stamps)}
        </div>
        <div class="error-slot" data-role="error">${renderError(error)}</div>
        <form class="say" data-role="say">
          <input name="text" type="text" autocomplete="off"
                 placeholder="talk to the learner" ${tutorTurn ? "" : "disabled"}>
          <button type="submit" ${tutorTurn ? "" : "disabled"}>send</button>
        </form>
        <div class="quick-actions" data-role="quick">
          ${renderQuickActions(tutorTurn)}
        </div>
      </section>
      <section class="confidence-pane">
        <h2>learner confidence</h2>
        <div class="bars" data-role="confidence">
          ${renderConfidence(snapshot.confidences, snapshot.bands)}
        </div>
        <div class="bands-note">
          unsure from ${snapshot.bands.base.toFixed(2)},
          confident from ${snapshot.bands.positive.toFixed(2)}
        </div>
      </section>
    </main>
  `;
}
