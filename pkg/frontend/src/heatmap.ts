/**
 * Diversity heatmap rendering. The service supplies the matrix already
 * sorted by polarity block then name; cells carry their exact payload
 * value in a tooltip, and color is a pure display scale over the payload
 * maximum.
 */

import { escapeHtml } from "./format.js";
import type { DiversityMeasure, DiversityResponse } from "./schema.js";

export interface HeatmapCell {
  row: string;
  col: string;
  value: number;
  crossPolarity: boolean;
}

/** Flatten the payload into renderable cells, in payload order. */
export function heatmapCells(
  payload: DiversityResponse,
  measure: DiversityMeasure
): HeatmapCell[] {
  const grid = payload.measures[measure];
  const order = payload.lf_order;
  const cells: HeatmapCell[] = [];
  for (let i = 0; i < order.length; i++) {
    for (let j = 0; j < order.length; j++) {
      const rowPol = payload.polarity[order[i]] ?? [];
      const colPol = payload.polarity[order[j]] ?? [];
      cells.push({
        row: order[i],
        col: order[j],
        value: grid[i][j],
        crossPolarity: rowPol.join(",") !== colPol.join(","),
      });
    }
  }
  return cells;
}

function shade(value: number, max: number): string {
  if (max <= 0) return "rgb(255,255,255)";
  const t = Math.min(value / max, 1);
  const channel = (from: number, to: number) => Math.round(from + (to - from) * t);
  return `rgb(${channel(255, 21)},${channel(255, 80)},${channel(255, 166)})`;
}

export function renderHeatmap(
  payload: DiversityResponse,
  measure: DiversityMeasure,
  cellSize = 26
): string {
  const order = payload.lf_order;
  const m = order.length;
  const max = Math.max(
    ...payload.measures[measure].flatMap((row) => row.map((v) => v))
  );
  const labelSpace = 120;
  const size = labelSpace + m * cellSize;
  const cells = heatmapCells(payload, measure)
    .map((cell, index) => {
      const i = Math.floor(index / m);
      const j = index % m;
      const x = labelSpace + j * cellSize;
      const y = labelSpace + i * cellSize;
      return `<rect x="${x}" y="${y}" width="${cellSize - 1}" height="${cellSize - 1}"
        fill="${shade(cell.value, max)}" data-value="${cell.value}"
        data-row="${escapeHtml(cell.row)}" data-col="${escapeHtml(cell.col)}">
        <title>${escapeHtml(cell.row)} × ${escapeHtml(cell.col)}: ${cell.value}</title>
      </rect>`;
    })
    .join("\n");
  const rowLabels = order
    .map(
      (name, i) =>
        `<text x="${labelSpace - 6}" y="${labelSpace + i * cellSize + cellSize / 2 + 4}"
          text-anchor="end" class="row-label">${escapeHtml(name)}</text>`
    )
    .join("\n");
  const colLabels = order
    .map(
      (name, j) =>
        `<text x="${labelSpace + j * cellSize + cellSize / 2}" y="${labelSpace - 6}"
          text-anchor="start" class="col-label"
          transform="rotate(-60 ${labelSpace + j * cellSize + cellSize / 2} ${labelSpace - 6})">${escapeHtml(
            name
          )}</text>`
    )
    .join("\n");
  return `<svg class="heatmap heatmap-${measure}" viewBox="0 0 ${size + 8} ${size + 8}"
    width="${size + 8}" height="${size + 8}">
    ${rowLabels}
    ${colLabels}
    ${cells}
  </svg>`;
}
