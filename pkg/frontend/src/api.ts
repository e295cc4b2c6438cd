/** Typed client for the loopback inspector API.
 *
 * Every number the UI displays originates from one of these responses;
 * the client never post-processes statistics.
 */

export interface PopulationSummary {
  metric: string;
  size: number;
  min: number;
  median: number;
  max: number;
  distinct: number[];
  values: number[];
}

export interface HistogramPayload {
  bin_edges: number[];
  bin_counts: number[];
  iterations: number;
  population_size: number;
  params: {
    sample_size: number;
    trim_depth: number;
    iterations: number;
    seed: number;
  };
}

export type Verdict = "UNIMODAL" | "NOISY" | "MULTIMODAL";

export interface ModalityPayload {
  verdict: Verdict;
  peak_count: number;
  strong_peaks: number;
  weak_peaks: number;
  peak_positions: { x: number; density: number }[];
  density: { x: number[]; y: number[] };
}

export interface BootlierResponse {
  metric: string;
  limit: number | null;
  population_size: number;
  histogram: HistogramPayload;
  modality: ModalityPayload;
}

export interface BootlierRequest {
  metric: string;
  limit?: number | null;
  N: number;
  k: number;
  iters: number;
  seed: number;
}

export interface StoredDecision {
  metric: string;
  final_limit: number;
  flagged_fraction: number;
  customers_flagged: string[];
  removal_trace: unknown[];
  params: Record<string, number>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`API error ${status}`);
  }
}

export class DecisionConflict extends ApiError {
  constructor(public existingLimit: number, detail: unknown) {
    super(409, detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** The server surface the session depends on; faked in tests. */
export interface InspectorBackend {
  population(metric: string): Promise<PopulationSummary>;
  bootlier(req: BootlierRequest): Promise<BootlierResponse>;
  recordDecision(
    metric: string,
    limit: number,
    params: { N: number; k: number; iters: number; seed: number },
    overwrite: boolean,
  ): Promise<{ stored: StoredDecision }>;
  storedDecision(metric: string): Promise<StoredDecision | null>;
}

export class InspectorApi implements InspectorBackend {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) {
      if (resp.status === 409 && body?.detail?.existing_limit !== undefined) {
        throw new DecisionConflict(body.detail.existing_limit, body.detail);
      }
      throw new ApiError(resp.status, body?.detail ?? body);
    }
    return body as T;
  }

  population(metric: string): Promise<PopulationSummary> {
    return this.request(`/api/population?metric=${encodeURIComponent(metric)}`);
  }

  bootlier(req: BootlierRequest): Promise<BootlierResponse> {
    return this.request("/api/bootlier", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  recordDecision(
    metric: string,
    limit: number,
    params: { N: number; k: number; iters: number; seed: number },
    overwrite: boolean,
  ): Promise<{ stored: StoredDecision }> {
    return this.request("/api/decision", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ metric, limit, overwrite, ...params }),
    });
  }

  async storedDecision(metric: string): Promise<StoredDecision | null> {
    try {
      const body = await this.request<{ stored: StoredDecision }>(
        `/api/decision?metric=${encodeURIComponent(metric)}`,
      );
      return body.stored;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) return null;
      throw err;
    }
  }
}
