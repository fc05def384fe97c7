/** Wire schema of the tutoring service, plus the fixed attribute inventory. */

export type Speaker = "learner" | "tutor";

export interface TranscriptEntry {
  speaker: Speaker;
  move: string;
  text: string;
}

export interface ConfidenceEntry {
  attribute: string;
  category: "colour" | "shape";
  prob: number;
  best: boolean;
}

export interface Bands {
  base: number;
  positive: number;
}

export interface Snapshot {
  id: string;
  settings: string;
  object_index: number;
  object_id: string;
  image_url: string;
  turn: Speaker | "ended";
  ended: boolean;
  transcript: TranscriptEntry[];
  agreed: string;
  confidences: ConfidenceEntry[];
  bands: Bands;
  cost: number;
  patterns: string[];
}

export interface UtteranceReply {
  tutor: TranscriptEntry;
  learner: TranscriptEntry[];
  cost_delta: number;
  state: Snapshot;
}

/** Server error payloads (the `detail` of a non-2xx response). */
export interface ErrorDetail {
  error: string;
  message?: string;
  patterns?: string[];
}

export const COLOURS = [
  "black",
  "blue",
  "green",
  "orange",
  "purple",
  "red",
] as const;

export const SHAPES = ["circle", "square", "triangle"] as const;

export const ATTRIBUTES: readonly string[] = [...COLOURS, ...SHAPES];

export const CONDITIONS = [
  "L+UC+CD",
  "L+UC-CD",
  "L-UC+CD",
  "L-UC-CD",
  "T+UC+CD",
  "T+UC-CD",
  "T-UC+CD",
  "T-UC-CD",
] as const;

/** How an attribute reads in a sentence; shape words carry the article. */
export function attributePhrase(attribute: string): string {
  return (SHAPES as readonly string[]).includes(attribute)
    ? `a ${attribute}`
    : attribute;
}

export type Band = "unknown" | "unsure" | "confident";

export function bandOf(prob: number, bands: Bands): Band {
  if (prob < bands.base) return "unknown";
  if (prob < bands.positive) return "unsure";
  return "confident";
}
