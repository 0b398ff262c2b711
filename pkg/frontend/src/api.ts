/** Thin typed client over the console's /api/v1 endpoints. */

import type {
  CalibrationResponse,
  DatasetInfo,
  DiversityResponse,
  ExamplesResponse,
  GatewayStats,
  LabelerDetail,
  LabelersResponse,
  PreviewResponse,
  RunCreated,
  RunStatus,
  StatsResponse,
} from "./schema.js";

export class ApiClient {
  constructor(private readonly base: string = "/api/v1") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    const body = await response.json();
    if (!response.ok) {
      const detail = body?.detail ?? response.statusText;
      throw new Error(`${body?.error ?? "ApiError"}: ${detail}`);
    }
    return body as T;
  }

  dataset(): Promise<DatasetInfo> {
    return this.request("/dataset");
  }

  labelers(): Promise<LabelersResponse> {
    return this.request("/labelers");
  }

  labeler(name: string): Promise<LabelerDetail> {
    return this.request(`/labelers/${encodeURIComponent(name)}`);
  }

  saveLabeler(name: string, body: object): Promise<{ suite_hash: string }> {
    return this.request(`/labelers/${encodeURIComponent(name)}`, {
      method: "PUT",
      body: JSON.stringify(body),
    });
  }

  preview(body: object): Promise<PreviewResponse> {
    return this.request("/labelers/preview", {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  triggerRun(split: string, calibrate: boolean): Promise<RunCreated> {
    return this.request("/runs", {
      method: "POST",
      body: JSON.stringify({ split, calibrate }),
    });
  }

  runStatus(runId: string): Promise<RunStatus> {
    return this.request(`/runs/${runId}`);
  }

  runStats(runId: string): Promise<StatsResponse> {
    return this.request(`/runs/${runId}/stats`);
  }

  runDiversity(runId: string): Promise<DiversityResponse> {
    return this.request(`/runs/${runId}/diversity`);
  }

  runCalibration(runId: string): Promise<CalibrationResponse> {
    return this.request(`/runs/${runId}/calibration`);
  }

  examples(params: Record<string, string>): Promise<ExamplesResponse> {
    const query = new URLSearchParams(params).toString();
    return this.request(`/examples?${query}`);
  }

  gatewayStats(): Promise<GatewayStats> {
    return this.request("/gateway/stats");
  }
}
