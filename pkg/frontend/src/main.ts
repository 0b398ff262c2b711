/**
 * Console wiring: tabs, the editor/preview loop, run triggering with
 * status polling, and the analytics views. All state lives on the server;
 * the UI re-fetches after every mutation.
 */

import { ApiClient } from "./api.js";
import { detailFromState, saveBody, stateFromDetail, type EditorState } from "./editor.js";
import { escapeHtml } from "./format.js";
import { renderHeatmap } from "./heatmap.js";
import {
  renderCalibrationTable,
  renderDatasetSummary,
  renderExamples,
  renderLfTable,
  renderPreview,
  renderRunStatus,
  renderScatter,
  type LfRowData,
} from "./render.js";
import type {
  CalibrationDelta,
  DiversityMeasure,
  DiversityResponse,
  LFStats,
} from "./schema.js";

const api = new ApiClient();

interface AppState {
  lastRunId: string | null;
  stats: Map<string, LFStats>;
  deltas: Map<string, CalibrationDelta>;
  diversity: DiversityResponse | null;
  editing: EditorState | null;
  calibratedPreview: boolean;
}

const state: AppState = {
  lastRunId: null,
  stats: new Map(),
  deltas: new Map(),
  diversity: null,
  editing: null,
  calibratedPreview: false,
};

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function flash(message: string, isError = false) {
  const bar = el("flash");
  bar.textContent = message;
  bar.className = isError ? "flash error" : "flash";
  if (!isError) setTimeout(() => (bar.textContent = ""), 4000);
}

async function refreshDataset() {
  el("dataset").innerHTML = renderDatasetSummary(await api.dataset());
}

async function refreshLabelers() {
  const listing = await api.labelers();
  el("suite-hash").textContent = listing.suite_hash;
  const rows: LfRowData[] = listing.labelers.map((summary) => ({
    summary,
    stats: state.stats.get(summary.name),
    delta: state.deltas.get(summary.name),
  }));
  el("lf-table").innerHTML = renderLfTable(rows);
  for (const row of el("lf-table").querySelectorAll("tr[data-lf]")) {
    row.addEventListener("click", () => {
      void openEditor((row as HTMLElement).dataset.lf as string);
    });
  }
}

async function openEditor(name: string) {
  const detail = await api.labeler(name);
  state.editing = stateFromDetail(detail);
  paintEditor();
  await runPreview();
}

function paintEditor() {
  const editing = state.editing;
  if (!editing) return;
  (el("editor-name") as HTMLInputElement).value = editing.name;
  (el("editor-template") as HTMLTextAreaElement).value = editing.template;
  (el("editor-map") as HTMLTextAreaElement).value = editing.labelMapText;
  (el("editor-candidates") as HTMLInputElement).value = editing.candidatesText;
  (el("editor-threshold") as HTMLInputElement).value = String(editing.threshold);
  el("editor-panel").classList.remove("hidden");
}

function readEditor(): EditorState {
  return {
    name: (el("editor-name") as HTMLInputElement).value,
    template: (el("editor-template") as HTMLTextAreaElement).value,
    labelMapText: (el("editor-map") as HTMLTextAreaElement).value,
    candidatesText: (el("editor-candidates") as HTMLInputElement).value,
    threshold: Number((el("editor-threshold") as HTMLInputElement).value),
    backend: state.editing?.backend ?? "default",
  };
}

async function runPreview() {
  try {
    const current = readEditor();
    state.editing = current;
    const body: Record<string, unknown> = {
      ...detailFromState(current),
      sample_size: 25,
      calibrate: state.calibratedPreview,
    };
    el("preview").innerHTML = renderPreview(await api.preview(body));
  } catch (err) {
    flash(String(err), true);
  }
}

async function saveEditor() {
  try {
    const current = readEditor();
    const saved = await api.saveLabeler(current.name, saveBody(current));
    flash(`saved; suite is now ${saved.suite_hash}`);
    await refreshLabelers();
    await runPreview();
  } catch (err) {
    flash(String(err), true);
  }
}

async function triggerRun() {
  const split = (el("run-split") as HTMLSelectElement).value;
  const calibrate = (el("run-calibrate") as HTMLInputElement).checked;
  const created = await api.triggerRun(split, calibrate);
  state.lastRunId = created.run_id;
  flash(created.cached ? `run ${created.run_id} already computed` : `run ${created.run_id} started`);
  await pollRun(created.run_id);
}

async function pollRun(runId: string) {
  for (;;) {
    const status = await api.runStatus(runId);
    el("run-status").innerHTML = renderRunStatus(status);
    if (status.status === "done") {
      await loadAnalytics(runId, status.calibrate);
      return;
    }
    if (status.status === "failed") {
      flash(status.error ?? "run failed", true);
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
}

async function loadAnalytics(runId: string, calibrated: boolean) {
  const stats = await api.runStats(runId);
  state.stats = new Map(stats.lf_stats.map((s) => [s.name, s]));
  el("scatter").innerHTML = renderScatter(stats.lf_stats);
  state.diversity = await api.runDiversity(runId);
  paintHeatmap();
  if (calibrated) {
    const calibration = await api.runCalibration(runId);
    state.deltas = new Map(calibration.deltas.map((d) => [d.name, d]));
    el("calibration").innerHTML = renderCalibrationTable(calibration.deltas);
  } else {
    state.deltas = new Map();
    el("calibration").innerHTML = `<p class="empty">run with calibration to see deltas</p>`;
  }
  await refreshLabelers();
  await refreshExamples(runId);
}

function paintHeatmap() {
  if (!state.diversity) return;
  const measure = (el("heatmap-measure") as HTMLSelectElement).value as DiversityMeasure;
  el("heatmap").innerHTML = renderHeatmap(state.diversity, measure);
}

async function refreshExamples(runId: string) {
  const lf = (el("examples-lf") as HTMLInputElement).value.trim();
  const params: Record<string, string> = {
    split: (el("run-split") as HTMLSelectElement).value,
    limit: "15",
  };
  if (lf) {
    params.lf = lf;
    params.run_id = runId;
  }
  const [dataset, listing] = await Promise.all([api.dataset(), api.examples(params)]);
  el("examples").innerHTML =
    `<p class="count">${listing.total} matching examples</p>` +
    renderExamples(listing.examples, dataset.classes);
}

async function refreshGateway() {
  const stats = await api.gatewayStats();
  el("gateway").innerHTML = Object.entries(stats)
    .map(
      ([backend, s]) =>
        `<span class="backend">${escapeHtml(backend)}: ${s.queries} queries, ` +
        `${s.hits} cache hits, ${s.calls} calls, ${s.failures} failures</span>`
    )
    .join(" ");
}

function wire() {
  el("save-lf").addEventListener("click", () => void saveEditor());
  el("preview-lf").addEventListener("click", () => void runPreview());
  el("preview-calibrated").addEventListener("change", (event) => {
    state.calibratedPreview = (event.target as HTMLInputElement).checked;
    void runPreview();
  });
  el("trigger-run").addEventListener("click", () => void triggerRun());
  el("heatmap-measure").addEventListener("change", () => paintHeatmap());
  el("examples-lf").addEventListener("change", () => {
    if (state.lastRunId) void refreshExamples(state.lastRunId);
  });
  setInterval(() => void refreshGateway(), 5000);
}

async function boot() {
  wire();
  await refreshDataset();
  await refreshLabelers();
  await refreshGateway();
}

void boot();
