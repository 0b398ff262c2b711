/**
 * Typed definitions of the console service's /api/v1 payloads, vendored
 * from the documented API. The UI renders these verbatim; it never derives
 * statistics of its own.
 */

export interface DatasetInfo {
  classes: string[];
  positive: string;
  prior: number[];
  splits: Record<string, number>;
}

export interface LabelerSummary {
  name: string;
  polarity: string[];
  threshold: number;
  backend: string;
  candidates: string[];
}

export interface LabelerDetail extends LabelerSummary {
  template: string;
  label_map: Record<string, string>;
}

export interface LabelersResponse {
  suite_hash: string;
  labelers: LabelerSummary[];
}

export interface ScoredCandidate {
  candidate: string;
  raw: number;
  used: number;
}

export interface PreviewRow {
  example_id: string;
  prompt?: string;
  scored?: ScoredCandidate[];
  vote?: number;
  vote_label?: string;
  confidence?: number;
  correct?: boolean;
  error?: string;
}

export interface ClassBreakdown {
  coverage: number;
  accuracy: number | null;
}

export interface LFStats {
  name: string;
  coverage: number;
  accuracy: number | null;
  n_covered: number;
  polarity: number[];
  low_coverage: boolean;
  per_class: Record<string, ClassBreakdown>;
}

export interface PreviewResponse {
  sample_size: number;
  calibrated: boolean;
  rows: PreviewRow[];
  stats: LFStats | null;
}

export interface RunCreated {
  run_id: string;
  status: string;
  cached: boolean;
}

export interface RunStatus {
  run_id: string;
  split: string;
  calibrate: boolean;
  suite_hash: string;
  status: string;
  error?: string;
  stages?: Record<string, { status: string; error?: string }>;
}

export interface StatsResponse {
  lf_stats: LFStats[];
}

export type DiversityMeasure =
  | "agreement"
  | "disagreement"
  | "double_fault"
  | "double_correct";

export interface DiversityResponse {
  lf_order: string[];
  polarity: Record<string, number[]>;
  measures: Record<DiversityMeasure, number[][]>;
}

export interface ClassDelta {
  d_coverage: number;
  d_accuracy: number | null;
}

export interface CalibrationDelta {
  name: string;
  d_coverage: number;
  d_accuracy: number | null;
  per_class: Record<string, ClassDelta>;
}

export interface CalibrationResponse {
  deltas: CalibrationDelta[];
}

export interface ExampleItem {
  id: string;
  fields: Record<string, string>;
  gold: number | null;
  vote?: number;
  confidence?: number;
}

export interface ExamplesResponse {
  total: number;
  examples: ExampleItem[];
}

export type GatewayStats = Record<
  string,
  { queries: number; hits: number; calls: number; failures: number }
>;

export interface ApiError {
  error: string;
  detail: string;
}
