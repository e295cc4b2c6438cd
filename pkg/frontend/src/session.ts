/** Inspector session state: candidate limits, recompute queue, decision.
 *
 * History is append-only; the recorded decision always matches the last
 * confirmed candidate. While a recompute is in flight further slider
 * moves collapse into one pending request (latest wins), so the server
 * sees at most one outstanding recomputation per session.
 */

import {
  BootlierResponse,
  DecisionConflict,
  InspectorBackend,
  PopulationSummary,
  StoredDecision,
} from "./api.js";

export interface BootstrapParams {
  N: number;
  k: number;
  iters: number;
  seed: number;
}

export interface Snapshot {
  limit: number;
  response: BootlierResponse;
}

export type RecordOutcome =
  | { kind: "stored"; decision: StoredDecision }
  | { kind: "conflict"; existingLimit: number };

export class InspectorSession {
  private snapshots: Snapshot[] = [];
  private population_: PopulationSummary | null = null;
  private inFlight = false;
  private pendingLimit: number | null = null;
  private decision_: StoredDecision | null = null;

  constructor(
    private api: InspectorBackend,
    readonly metric: string,
    readonly params: BootstrapParams,
    private onChange: () => void = () => {},
  ) {}

  get population(): PopulationSummary | null {
    return this.population_;
  }

  get history(): readonly Snapshot[] {
    return this.snapshots;
  }

  get current(): Snapshot | null {
    return this.snapshots.length
      ? this.snapshots[this.snapshots.length - 1]
      : null;
  }

  get recordedDecision(): StoredDecision | null {
    return this.decision_;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  /** Slider bounds: trimming below the population median is never sound. */
  get bounds(): { min: number; max: number } | null {
    if (!this.population_) return null;
    return { min: Math.ceil(this.population_.median), max: this.population_.max };
  }

  clampLimit(limit: number): number {
    const b = this.bounds;
    if (!b) return limit;
    return Math.min(b.max, Math.max(b.min, Math.round(limit)));
  }

  async load(): Promise<void> {
    this.population_ = await this.api.population(this.metric);
    this.decision_ = await this.api.storedDecision(this.metric);
    this.onChange();
  }

  /** Ask the server to recompute at a candidate limit.
   *
   * Returns once this limit (or a newer one that superseded it) has been
   * answered. Out-of-range limits are refused without a request.
   */
  async requestLimit(limit: number): Promise<void> {
    const clamped = this.clampLimit(limit);
    if (clamped !== Math.round(limit)) return; // slider refuses out-of-range
    if (this.inFlight) {
      this.pendingLimit = clamped; // debounce: latest move wins
      return;
    }
    this.inFlight = true;
    this.onChange();
    try {
      let next: number | null = clamped;
      while (next !== null) {
        const asked: number = next;
        const response = await this.api.bootlier({
          metric: this.metric,
          limit: asked,
          ...this.params,
        });
        this.snapshots = [...this.snapshots, { limit: asked, response }];
        next = this.pendingLimit;
        this.pendingLimit = null;
        if (next === asked) next = null;
      }
    } finally {
      this.inFlight = false;
      this.onChange();
    }
  }

  /** Record the last confirmed candidate as the outlier decision. */
  async record(overwrite = false): Promise<RecordOutcome> {
    const current = this.current;
    if (!current) {
      throw new Error("nothing to record: no confirmed candidate in history");
    }
    try {
      const body = await this.api.recordDecision(
        this.metric,
        current.limit,
        this.params,
        overwrite,
      );
      this.decision_ = body.stored;
      this.onChange();
      return { kind: "stored", decision: body.stored };
    } catch (err) {
      if (err instanceof DecisionConflict) {
        return { kind: "conflict", existingLimit: err.existingLimit };
      }
      throw err;
    }
  }
}
