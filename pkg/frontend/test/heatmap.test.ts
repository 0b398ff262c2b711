import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { heatmapCells, renderHeatmap } from "../src/heatmap.js";
import type { DiversityResponse } from "../src/schema.js";

const fixturePath = join(dirname(fileURLToPath(import.meta.url)), "fixtures", "session.json");
const session = JSON.parse(readFileSync(fixturePath, "utf-8"));
const diversity = session.run_diversity as DiversityResponse;

describe("diversity heatmap", () => {
  it("renders m x m cells in the server's polarity-sorted order", () => {
    const m = diversity.lf_order.length;
    const cells = heatmapCells(diversity, "double_fault");
    expect(cells.length).toBe(m * m);
    expect(cells[0].row).toBe(diversity.lf_order[0]);
    expect(cells[m - 1].col).toBe(diversity.lf_order[m - 1]);
    const html = renderHeatmap(diversity, "double_fault");
    expect((html.match(/<rect/g) ?? []).length).toBe(m * m);
  });

  it("double-fault cells between opposite-polarity labelers are all zero", () => {
    const cells = heatmapCells(diversity, "double_fault");
    const cross = cells.filter((c) => c.crossPolarity);
    expect(cross.length).toBeGreaterThan(0);
    for (const cell of cross) {
      expect(cell.value).toBe(0);
    }
  });

  it("cell values come verbatim from the payload", () => {
    const grid = diversity.measures.agreement;
    const cells = heatmapCells(diversity, "agreement");
    const m = diversity.lf_order.length;
    for (let i = 0; i < m; i++) {
      for (let j = 0; j < m; j++) {
        expect(cells[i * m + j].value).toBe(grid[i][j]);
      }
    }
  });

  it("tooltips carry the exact payload value", () => {
    const html = renderHeatmap(diversity, "agreement");
    const grid = diversity.measures.agreement;
    const m = diversity.lf_order.length;
    const sampled = [
      [0, 0],
      [0, m - 1],
      [Math.floor(m / 2), Math.floor(m / 3)],
    ];
    for (const [i, j] of sampled) {
      expect(html).toContain(
        `${diversity.lf_order[i]} × ${diversity.lf_order[j]}: ${grid[i][j]}`
      );
    }
  });

  it("a one-labeler payload renders a single trivial cell", () => {
    const tiny: DiversityResponse = {
      lf_order: ["only"],
      polarity: { only: [1] },
      measures: {
        agreement: [[0]],
        disagreement: [[0]],
        double_fault: [[0]],
        double_correct: [[0]],
      },
    };
    const html = renderHeatmap(tiny, "agreement");
    expect((html.match(/<rect/g) ?? []).length).toBe(1);
  });
});
