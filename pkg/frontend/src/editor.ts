/**
 * Labeling-function editor state. Round-trip fidelity matters: loading a
 * labeler and saving it unchanged must produce the identical definition,
 * so the suite file on disk never churns under no-op edits.
 */

import type { LabelerDetail } from "./schema.js";

export interface EditorState {
  name: string;
  template: string;
  labelMapText: string; // one "answer -> TARGET" line per entry
  candidatesText: string; // comma-separated
  threshold: number;
  backend: string;
}

export function stateFromDetail(detail: LabelerDetail): EditorState {
  return {
    name: detail.name,
    template: detail.template,
    labelMapText: Object.entries(detail.label_map)
      .map(([answer, target]) => `${answer} -> ${target}`)
      .join("\n"),
    candidatesText: detail.candidates.join(", "),
    threshold: detail.threshold,
    backend: detail.backend,
  };
}

export function parseLabelMap(text: string): Record<string, string> {
  const map: Record<string, string> = {};
  for (const line of text.split("\n")) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const arrow = trimmed.indexOf("->");
    if (arrow < 0) {
      throw new Error(`label map line needs "answer -> TARGET": ${trimmed}`);
    }
    const answer = trimmed.slice(0, arrow).trim();
    const target = trimmed.slice(arrow + 2).trim();
    if (!answer || !target) {
      throw new Error(`label map line needs "answer -> TARGET": ${trimmed}`);
    }
    map[answer] = target;
  }
  return map;
}

/** The PUT /api/v1/labelers/{name} body for the current editor state. */
export function detailFromState(state: EditorState): LabelerDetail {
  return {
    name: state.name,
    template: state.template,
    label_map: parseLabelMap(state.labelMapText),
    candidates: state.candidatesText
      .split(",")
      .map((c) => c.trim())
      .filter((c) => c.length > 0),
    threshold: state.threshold,
    backend: state.backend,
    polarity: [],
  };
}

/** Fields that the service accepts on save (polarity is derived there). */
export function saveBody(state: EditorState): Omit<LabelerDetail, "polarity"> {
  const { polarity: _unused, ...body } = detailFromState(state);
  return body;
}
