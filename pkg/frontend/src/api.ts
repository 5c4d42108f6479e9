/** Typed client for the review service JSON API.
 *
 * Run snapshots are cached by ETag: the client sends If-None-Match and
 * serves the cached body on 304. Stats documents keep the raw response
 * text's numeric literals (see rawjson) so views can print numbers
 * exactly as the server sent them. No field is renamed or normalized
 * on the way through.
 */

import { parseWithRaw, RawNumbers } from "./rawjson.js";

export interface FeatureSubsetView {
  included: string[];
  rationale: string;
}

export interface HypothesisView {
  id: string;
  statement: string;
  focal_feature: string;
  parent_id: string | null;
  revision_reason: string;
  status: string;
}

export interface RunSnapshot {
  run_id: string;
  config: Record<string, unknown>;
  pool: HypothesisView[];
  schema: Record<string, boolean>;
  hypotheses: HypothesisView[];
  pool_cursor: number;
  subset: FeatureSubsetView;
  status: string;
  stall_count: number;
  n_iterations: number;
  has_final_stats: boolean;
}

export interface EvidenceItemView {
  participant_ids: string[];
  excerpt: string;
}

export interface ReportView {
  verdict: string;
  evidence: EvidenceItemView[];
  suggested_additions: string[];
  suggested_removals: string[];
  unknown_suggestions: string[];
  raw_response: string;
}

export interface IterationView {
  index: number;
  hypothesis_id: string;
  subset: FeatureSubsetView;
  subset_after: FeatureSubsetView;
  pairing: Record<string, unknown>;
  batches: string[][];
  excerpts: Record<string, [number, number][]>;
  reports: ReportView[];
  decision: string;
  decided_by: string;
  timestamp: number;
  stall_after: number;
  error: string | null;
  human_action: Record<string, unknown> | null;
  activated: HypothesisView | null;
  prev_hash: string;
  record_hash: string;
}

export interface DecisionBody {
  action: string;
  statement?: string;
  focal_feature?: string;
  add?: string[];
  remove?: string[];
}

export interface StatsDoc {
  value: Record<string, unknown>;
  numbers: RawNumbers;
}

export interface CohortSummary {
  n_participants: number;
  n_events: number;
  date_range: [string, string] | null;
  schema: Record<string, boolean>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

interface CacheEntry {
  etag: string;
  snapshot: RunSnapshot;
}

export class ApiClient {
  private readonly cache = new Map<string, CacheEntry>();

  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) =>
      fetch(input, init),
  ) {}

  private async fail(res: Response): Promise<never> {
    let code = "internal";
    let message = `HTTP ${res.status}`;
    try {
      const body = (await res.json()) as { code?: unknown; message?: unknown };
      if (typeof body.code === "string") code = body.code;
      if (typeof body.message === "string") message = body.message;
    } catch {
      // non-JSON error body: keep the status line
    }
    throw new ApiError(res.status, code, message);
  }

  async listRuns(): Promise<RunSnapshot[]> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/runs`);
    if (!res.ok) return this.fail(res);
    return (await res.json()) as RunSnapshot[];
  }

  async createRun(spec: Record<string, unknown>): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/runs`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(spec),
    });
    if (!res.ok) return this.fail(res);
    const body = (await res.json()) as { run_id: string };
    return body.run_id;
  }

  /** Latest snapshot plus its ETag; a 304 serves the cached copy. */
  async getRun(
    runId: string,
  ): Promise<{ snapshot: RunSnapshot; etag: string }> {
    const cached = this.cache.get(runId);
    const headers: Record<string, string> = {};
    if (cached) headers["If-None-Match"] = cached.etag;
    const res = await this.fetchImpl(
      `${this.baseUrl}/api/runs/${encodeURIComponent(runId)}`,
      { headers },
    );
    if (res.status === 304 && cached) {
      return { snapshot: cached.snapshot, etag: cached.etag };
    }
    if (!res.ok) return this.fail(res);
    const etag = res.headers.get("ETag") ?? "";
    const snapshot = (await res.json()) as RunSnapshot;
    this.cache.set(runId, { etag, snapshot });
    return { snapshot, etag };
  }

  async getIteration(runId: string, index: number): Promise<IterationView> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/api/runs/${encodeURIComponent(runId)}/iterations/${index}`,
    );
    if (!res.ok) return this.fail(res);
    return (await res.json()) as IterationView;
  }

  /** Submit a decision under the optimistic lock of `etag`. */
  async decide(
    runId: string,
    body: DecisionBody,
    etag: string,
  ): Promise<RunSnapshot> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/api/runs/${encodeURIComponent(runId)}/decision`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json", "If-Match": etag },
        body: JSON.stringify(body),
      },
    );
    if (!res.ok) return this.fail(res);
    const snapshot = (await res.json()) as RunSnapshot;
    const fresh = res.headers.get("ETag");
    if (fresh) this.cache.set(runId, { etag: fresh, snapshot });
    return snapshot;
  }

  async getStats(runId: string): Promise<StatsDoc> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/api/runs/${encodeURIComponent(runId)}/stats`,
    );
    if (!res.ok) return this.fail(res);
    const text = await res.text();
    const { value, numbers } = parseWithRaw(text);
    return { value: value as Record<string, unknown>, numbers };
  }

  async cohortSummary(): Promise<CohortSummary> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/cohort/summary`);
    if (!res.ok) return this.fail(res);
    return (await res.json()) as CohortSummary;
  }
}
