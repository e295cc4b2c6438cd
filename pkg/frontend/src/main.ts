/** DOM wiring for the inspector: slider in, server verdicts out. */

import { InspectorApi, Verdict } from "./api.js";
import { drawHistogram, VERDICT_COLORS } from "./chart.js";
import { InspectorSession, Snapshot } from "./session.js";

const DEFAULT_PARAMS = { views: { k: 7 }, buys: { k: 3 } } as const;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function verdictBadge(target: HTMLElement, verdict: Verdict | null): void {
  target.textContent = verdict ?? "-";
  target.style.background = verdict ? VERDICT_COLORS[verdict] : "#6b7280";
}

class App {
  private api = new InspectorApi();
  private session!: InspectorSession;

  private metricSelect = el<HTMLSelectElement>("metric");
  private slider = el<HTMLInputElement>("limit");
  private limitLabel = el<HTMLElement>("limit-label");
  private boundsLabel = el<HTMLElement>("bounds-label");
  private status = el<HTMLElement>("status");
  private beforeCanvas = el<HTMLCanvasElement>("before-canvas");
  private afterCanvas = el<HTMLCanvasElement>("after-canvas");
  private beforeBadge = el<HTMLElement>("before-verdict");
  private afterBadge = el<HTMLElement>("after-verdict");
  private beforeCaption = el<HTMLElement>("before-caption");
  private afterCaption = el<HTMLElement>("after-caption");
  private historyList = el<HTMLUListElement>("history");
  private recordButton = el<HTMLButtonElement>("record");
  private decisionBanner = el<HTMLElement>("decision");

  async start(): Promise<void> {
    this.metricSelect.addEventListener("change", () => void this.switchMetric());
    this.slider.addEventListener("change", () => void this.onSlider());
    this.recordButton.addEventListener("click", () => void this.onRecord());
    await this.switchMetric();
  }

  private async switchMetric(): Promise<void> {
    const metric = this.metricSelect.value as "views" | "buys";
    this.status.textContent = "loading population...";
    let pop;
    try {
      pop = await this.api.population(metric);
    } catch (err) {
      this.status.textContent = `no population for ${metric}: ${String(err)}`;
      return;
    }
    const k = DEFAULT_PARAMS[metric].k;
    // resample size follows the 1%-of-population rule the pipeline uses
    const sampleSize = Math.max(Math.ceil(0.01 * pop.size), 2 * k + 2);
    this.session = new InspectorSession(
      this.api,
      metric,
      { N: sampleSize, k, iters: 20000, seed: 0 },
      () => this.render(),
    );
    await this.session.load();
    const bounds = this.session.bounds!;
    this.slider.min = String(bounds.min);
    this.slider.max = String(bounds.max);
    this.slider.value = String(bounds.max);
    this.boundsLabel.textContent =
      `population ${pop.size}, median ${pop.median}, max ${pop.max}`;
    this.status.textContent = "drag the limit and release to recompute";
    this.render();
    await this.session.requestLimit(bounds.max); // starting point: untrimmed
  }

  private async onSlider(): Promise<void> {
    await this.session.requestLimit(Number(this.slider.value));
  }

  private async onRecord(): Promise<void> {
    let outcome = await this.session.record(false);
    if (outcome.kind === "conflict") {
      const ok = window.confirm(
        `A decision for ${this.session.metric} already exists ` +
        `(limit ${outcome.existingLimit}). Overwrite it?`,
      );
      if (!ok) return;
      outcome = await this.session.record(true);
    }
    this.render();
  }

  private render(): void {
    const session = this.session;
    this.limitLabel.textContent = this.slider.value;
    this.status.textContent = session.busy
      ? "recomputing on the server..."
      : this.status.textContent;

    const history = session.history;
    const first: Snapshot | null = history.length ? history[0] : null;
    const last = session.current;

    this.paintPanel(this.beforeCanvas, this.beforeBadge, this.beforeCaption,
      first, "(a) first candidate");
    this.paintPanel(this.afterCanvas, this.afterBadge, this.afterCaption,
      last, "(b) current candidate");

    this.historyList.replaceChildren(
      ...history.map((snap, i) => {
        const item = document.createElement("li");
        item.textContent =
          `#${i + 1} limit <= ${snap.limit}: ${snap.response.modality.verdict} ` +
          `(${snap.response.modality.peak_count} peaks, ` +
          `population ${snap.response.population_size})`;
        return item;
      }),
    );

    this.recordButton.disabled = last === null || session.busy;
    const decision = session.recordedDecision;
    if (decision) {
      this.decisionBanner.hidden = false;
      this.decisionBanner.textContent =
        `stored ${decision.metric} limit ${decision.final_limit}; ` +
        `${(decision.flagged_fraction * 100).toFixed(2)}% of customers flagged`;
    } else {
      this.decisionBanner.hidden = true;
    }
    if (!session.busy && last) {
      this.status.textContent =
        `limit <= ${last.limit}: ${last.response.modality.verdict}`;
    }
  }

  private paintPanel(
    canvas: HTMLCanvasElement,
    badge: HTMLElement,
    caption: HTMLElement,
    snap: Snapshot | null,
    label: string,
  ): void {
    drawHistogram(
      canvas,
      snap?.response.histogram ?? null,
      snap?.response.modality ?? null,
    );
    verdictBadge(badge, snap?.response.modality.verdict ?? null);
    caption.textContent = snap ? `${label}: counts <= ${snap.limit}` : label;
  }
}

new App().start().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `failed to start: ${String(err)}`;
});
