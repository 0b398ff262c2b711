/**
 * Pure view renderers: payload in, HTML string out. No fetches, no DOM,
 * and no statistics; every number shown is a formatted API field, which
 * is what makes these functions directly snapshot-testable.
 */

import { escapeHtml, pct, pctOrDash, prob, signedPct } from "./format.js";
import type {
  CalibrationDelta,
  DatasetInfo,
  ExampleItem,
  LabelerSummary,
  LFStats,
  PreviewResponse,
  RunStatus,
} from "./schema.js";

export function renderDatasetSummary(info: DatasetInfo): string {
  const splits = Object.entries(info.splits)
    .map(([name, count]) => `${escapeHtml(name)}: ${count}`)
    .join(" · ");
  const prior = info.prior.map((p) => pct(p)).join(" / ");
  return `<div class="dataset-summary">
    <span class="classes">${info.classes.map(escapeHtml).join(" vs ")}</span>
    <span class="positive">positive: ${escapeHtml(info.positive)}</span>
    <span class="prior">prior: ${prior}</span>
    <span class="splits">${splits}</span>
  </div>`;
}

export interface LfRowData {
  summary: LabelerSummary;
  stats?: LFStats;
  delta?: CalibrationDelta;
}

/** The main labeler table: one row per prompt with its quality numbers. */
export function renderLfTable(rows: LfRowData[]): string {
  const body = rows
    .map(({ summary, stats, delta }) => {
      const polarity = summary.polarity.join("/");
      const coverage = stats ? pct(stats.coverage) : "–";
      const accuracy = stats ? pctOrDash(stats.accuracy) : "–";
      const dCov = delta ? signedPct(delta.d_coverage) : "–";
      const dAcc = delta ? signedPct(delta.d_accuracy) : "–";
      const low = stats?.low_coverage ? ` <span class="flag">low coverage</span>` : "";
      return `<tr data-lf="${escapeHtml(summary.name)}">
        <td class="name">${escapeHtml(summary.name)}${low}</td>
        <td class="polarity">${escapeHtml(polarity)}</td>
        <td class="num coverage">${coverage}</td>
        <td class="num accuracy">${accuracy}</td>
        <td class="num d-coverage">${dCov}</td>
        <td class="num d-accuracy">${dAcc}</td>
        <td class="num threshold">${summary.threshold}</td>
      </tr>`;
    })
    .join("\n");
  return `<table class="lf-table">
    <thead><tr>
      <th>labeling function</th><th>polarity</th><th>coverage %</th>
      <th>accuracy %</th><th>Δcoverage</th><th>Δaccuracy</th><th>τ</th>
    </tr></thead>
    <tbody>${body}</tbody>
  </table>`;
}

/** Preview panel: per-example prompt, candidate probabilities, vote. */
export function renderPreview(preview: PreviewResponse): string {
  const rows = preview.rows
    .map((row) => {
      if (row.error) {
        return `<tr class="error"><td>${escapeHtml(row.example_id)}</td>
          <td colspan="3">backend error: ${escapeHtml(row.error)}</td></tr>`;
      }
      const scored = (row.scored ?? [])
        .map(
          (s) =>
            `<span class="cand">${escapeHtml(s.candidate)} ` +
            `<span class="p raw">${prob(s.raw)}</span>` +
            (preview.calibrated
              ? ` → <span class="p used">${prob(s.used)}</span>`
              : "") +
            `</span>`
        )
        .join(" ");
      const voteClass = row.vote_label === "ABSTAIN" ? "abstain" : "vote";
      const correct =
        row.correct === undefined ? "" : row.correct ? " ✓" : " ✗";
      return `<tr>
        <td class="id">${escapeHtml(row.example_id)}</td>
        <td class="prompt"><pre>${escapeHtml(row.prompt ?? "")}</pre></td>
        <td class="scored">${scored}</td>
        <td class="vote ${voteClass}">${escapeHtml(row.vote_label ?? "")}${correct}</td>
      </tr>`;
    })
    .join("\n");
  const stats = preview.stats
    ? `<div class="preview-stats">coverage ${pct(preview.stats.coverage)}% · ` +
      `accuracy ${pctOrDash(preview.stats.accuracy)}% on ${preview.stats.n_covered} covered</div>`
    : `<div class="preview-stats empty">no sample</div>`;
  return `${stats}
  <table class="preview-table">
    <thead><tr><th>example</th><th>prompt</th><th>candidates</th><th>vote</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

/** Coverage (x) vs accuracy (y) scatter from the stats payload. */
export function renderScatter(stats: LFStats[], size = 360): string {
  const pad = 32;
  const span = size - 2 * pad;
  const points = stats
    .filter((s) => s.accuracy !== null)
    .map((s) => {
      const x = pad + s.coverage * span;
      const y = size - pad - (s.accuracy as number) * span;
      const polarity = s.polarity.join("/");
      return `<circle cx="${x.toFixed(1)}" cy="${y.toFixed(1)}" r="5"
        class="pol-${escapeHtml(polarity)}" data-lf="${escapeHtml(s.name)}">
        <title>${escapeHtml(s.name)}: coverage ${pct(s.coverage)}%, accuracy ${pctOrDash(
          s.accuracy
        )}%</title></circle>`;
    })
    .join("\n");
  return `<svg class="scatter" viewBox="0 0 ${size} ${size}" width="${size}" height="${size}">
    <line x1="${pad}" y1="${size - pad}" x2="${size - pad}" y2="${size - pad}" class="axis"/>
    <line x1="${pad}" y1="${pad}" x2="${pad}" y2="${size - pad}" class="axis"/>
    <text x="${size / 2}" y="${size - 6}" class="label">coverage</text>
    <text x="10" y="${size / 2}" class="label" transform="rotate(-90 10 ${size / 2})">accuracy</text>
    ${points}
  </svg>`;
}

export function renderCalibrationTable(deltas: CalibrationDelta[]): string {
  const body = deltas
    .map(
      (d) => `<tr data-lf="${escapeHtml(d.name)}">
      <td class="name">${escapeHtml(d.name)}</td>
      <td class="num d-coverage">${signedPct(d.d_coverage)}</td>
      <td class="num d-accuracy">${signedPct(d.d_accuracy)}</td>
    </tr>`
    )
    .join("\n");
  return `<table class="calibration-table">
    <thead><tr><th>labeling function</th><th>Δcoverage</th><th>Δaccuracy</th></tr></thead>
    <tbody>${body}</tbody>
  </table>`;
}

export function renderRunStatus(status: RunStatus): string {
  const stages = Object.entries(status.stages ?? {})
    .map(([name, s]) => `<li class="${s.status}">${escapeHtml(name)}: ${s.status}</li>`)
    .join("");
  const error = status.error
    ? `<div class="run-error">${escapeHtml(status.error)}</div>`
    : "";
  return `<div class="run-status ${status.status}">
    <span class="id">run ${escapeHtml(status.run_id)}</span>
    <span class="state">${escapeHtml(status.status)}</span>
    <ul>${stages}</ul>${error}
  </div>`;
}

export function renderExamples(items: ExampleItem[], classes: string[]): string {
  const body = items
    .map((item) => {
      const gold = item.gold === null ? "–" : classes[item.gold] ?? String(item.gold);
      const vote =
        item.vote === undefined
          ? ""
          : `<td class="vote">${
              item.vote === -1 ? "ABSTAIN" : escapeHtml(classes[item.vote] ?? String(item.vote))
            }</td>`;
      return `<tr>
        <td class="id">${escapeHtml(item.id)}</td>
        <td class="text">${escapeHtml(item.fields["text"] ?? "")}</td>
        <td class="gold">${escapeHtml(gold)}</td>${vote}
      </tr>`;
    })
    .join("\n");
  return `<table class="examples-table"><tbody>${body}</tbody></table>`;
}
