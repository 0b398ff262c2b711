import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { pct, pctOrDash } from "../src/format.js";
import {
  renderCalibrationTable,
  renderDatasetSummary,
  renderLfTable,
  renderPreview,
  renderRunStatus,
  renderScatter,
  type LfRowData,
} from "../src/render.js";
import type {
  CalibrationResponse,
  DatasetInfo,
  LabelersResponse,
  PreviewResponse,
  RunStatus,
  StatsResponse,
} from "../src/schema.js";

const fixturePath = join(dirname(fileURLToPath(import.meta.url)), "fixtures", "session.json");
const session = JSON.parse(readFileSync(fixturePath, "utf-8"));

const labelers = session.labelers as LabelersResponse;
const stats = session.run_stats as StatsResponse;
const calibration = session.run_calibration as CalibrationResponse;
const preview = session.preview as PreviewResponse;
const strictPreview = session.preview_threshold as PreviewResponse;

function cellText(html: string, row: string, cls: string): string {
  const rowMatch = html.match(
    new RegExp(`<tr data-lf="${row}">([\\s\\S]*?)</tr>`)
  );
  expect(rowMatch, `row ${row}`).toBeTruthy();
  const cell = rowMatch![1].match(
    new RegExp(`<td class="[^"]*${cls}[^"]*">([\\s\\S]*?)</td>`)
  );
  expect(cell, `cell ${cls} in ${row}`).toBeTruthy();
  return cell![1].replace(/<[^>]+>/g, "").trim();
}

describe("labeling function table", () => {
  const rows: LfRowData[] = labelers.labelers.map((summary) => ({
    summary,
    stats: stats.lf_stats.find((s) => s.name === summary.name),
    delta: calibration.deltas.find((d) => d.name === summary.name),
  }));
  const html = renderLfTable(rows);

  it("renders every labeler from the payload", () => {
    for (const lf of labelers.labelers) {
      expect(html).toContain(`data-lf="${lf.name}"`);
    }
  });

  it("renders numbers equal to payload values at displayed precision", () => {
    for (const s of stats.lf_stats) {
      expect(cellText(html, s.name, "coverage")).toBe(pct(s.coverage));
      expect(cellText(html, s.name, "accuracy")).toBe(pctOrDash(s.accuracy));
      const displayed = Number(cellText(html, s.name, "coverage"));
      expect(Math.abs(displayed - s.coverage * 100)).toBeLessThan(0.05 + 1e-9);
    }
  });

  it("performs no recomputation: a perturbed payload renders the perturbed value", () => {
    const perturbed: LfRowData[] = rows.map((row, index) =>
      index === 0 && row.stats
        ? { ...row, stats: { ...row.stats, coverage: 0.1234 } }
        : row
    );
    const out = renderLfTable(perturbed);
    expect(cellText(out, rows[0].summary.name, "coverage")).toBe("12.3");
  });

  it("shows calibration deltas from the payload", () => {
    for (const d of calibration.deltas) {
      const cell = cellText(html, d.name, "d-coverage");
      expect(cell.startsWith("+") || cell.startsWith("-")).toBe(true);
    }
  });
});

describe("preview panel", () => {
  it("renders one row per sampled example with its vote", () => {
    const html = renderPreview(preview);
    for (const row of preview.rows) {
      expect(html).toContain(row.example_id);
      expect(html).toContain(row.vote_label!);
    }
  });

  it("threshold edit converts sub-threshold votes to ABSTAIN", () => {
    // The strict preview was recorded after raising tau above every cast
    // vote's confidence; the base preview shows what they were before.
    const strictHtml = renderPreview(strictPreview);
    const threshold = 0.92;
    for (let i = 0; i < preview.rows.length; i++) {
      const base = preview.rows[i];
      const strict = strictPreview.rows[i];
      const maxUsed = Math.max(...base.scored!.map((s) => s.used));
      if (maxUsed < threshold) {
        expect(strict.vote_label).toBe("ABSTAIN");
      } else {
        expect(strict.vote_label).toBe(base.vote_label);
      }
      expect(strictHtml).toContain(strict.example_id);
    }
    expect(
      preview.rows.some(
        (r) =>
          r.vote_label !== "ABSTAIN" &&
          Math.max(...r.scored!.map((s) => s.used)) < threshold
      )
    ).toBe(true); // the edit actually converted something
  });

  it("marks backend errors inline", () => {
    const withError: PreviewResponse = {
      ...preview,
      rows: [{ example_id: "x", error: "backend down" }],
    };
    const html = renderPreview(withError);
    expect(html).toContain("backend error");
    expect(html).toContain("backend down");
  });
});

describe("supporting views", () => {
  it("dataset summary shows classes, prior, and split sizes", () => {
    const html = renderDatasetSummary(session.dataset as DatasetInfo);
    expect(html).toContain("HAM");
    expect(html).toContain("SPAM");
    expect(html).toContain("train: 300");
  });

  it("scatter emits one point per labeler with exact values in tooltips", () => {
    const html = renderScatter(stats.lf_stats);
    const points = html.match(/<circle/g) ?? [];
    expect(points.length).toBe(stats.lf_stats.length);
    for (const s of stats.lf_stats) {
      expect(html).toContain(`coverage ${pct(s.coverage)}%`);
    }
  });

  it("calibration table lists every delta", () => {
    const html = renderCalibrationTable(calibration.deltas);
    for (const d of calibration.deltas) {
      expect(html).toContain(`data-lf="${d.name}"`);
    }
  });

  it("run status lists stage states", () => {
    const html = renderRunStatus(session.run_status as RunStatus);
    expect(html).toContain("run ");
    expect(html).toContain("query: done");
    expect(html).toContain("report: done");
  });

  it("escapes markup in payload text", () => {
    const html = renderPreview({
      sample_size: 1,
      calibrated: false,
      stats: null,
      rows: [
        {
          example_id: "x",
          prompt: 'Is <script>alert("x")</script> spam?',
          scored: [{ candidate: "yes", raw: 1, used: 1 }],
          vote: 1,
          vote_label: "SPAM",
          confidence: 1,
        },
      ],
    });
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});
