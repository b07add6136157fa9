// The session app: a small state machine rendered as a pure function of
// the last server payload plus pending input. Reloading mid-session
// resumes from the stored session id; the advisor's suggestion is never
// part of any payload this client sees, so it cannot leak into the DOM.

import { ApiClient, ApiError } from "./api.js";
import { renderCandles } from "./chart.js";
import { DayView, SchemaError, Summary } from "./types.js";

export type Phase = "idle" | "day" | "summary";

export interface AppState {
  phase: Phase;
  sessionId: string | null;
  condition: string | null;
  view: DayView | null;
  summary: Summary | null;
  banner: string | null;
  submitting: boolean;
  selectedTarget: number | null;
  canRetry: boolean;
}

const STORAGE_KEY = "nudgelab.session";

const CLASS_LABELS: Array<["bull" | "neutral" | "bear", string]> = [
  ["bull", "BULL"],
  ["neutral", "NEUTRAL"],
  ["bear", "BEAR"],
];

function fmtJpy(value: number): string {
  return `${Math.round(value).toLocaleString("en-US")} JPY`;
}

export class App {
  readonly state: AppState = {
    phase: "idle",
    sessionId: null,
    condition: null,
    view: null,
    summary: null,
    banner: null,
    submitting: false,
    selectedTarget: null,
    canRetry: false,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly storage: Pick<Storage, "getItem" | "setItem" | "removeItem"> | null = null,
  ) {}

  // -- lifecycle -------------------------------------------------------------

  async start(condition = "auto", seed?: number): Promise<void> {
    const stored = this.storage?.getItem(STORAGE_KEY);
    if (stored) {
      this.state.sessionId = stored;
      await this.refresh();
      return;
    }
    try {
      const session = await this.api.createSession(condition, seed);
      this.state.sessionId = session.session_id;
      this.state.condition = session.condition;
      this.storage?.setItem(STORAGE_KEY, session.session_id);
    } catch (err) {
      this.fail(err);
      return;
    }
    await this.refresh();
  }

  async refresh(): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      const view = await this.api.getDay(this.state.sessionId);
      this.state.view = view;
      this.state.condition = view.condition;
      this.state.phase = "day";
      this.state.banner = null;
      this.state.canRetry = false;
      if (!view.valid_targets.includes(this.state.selectedTarget ?? NaN)) {
        this.state.selectedTarget = view.portfolio.position;
      }
    } catch (err) {
      if (err instanceof ApiError && err.code === "session_completed") {
        await this.loadSummary();
        return;
      }
      if (err instanceof ApiError && err.code === "unknown_session") {
        // stale stored id (e.g. wiped server store): start over cleanly
        this.storage?.removeItem(STORAGE_KEY);
        this.state.sessionId = null;
      }
      this.fail(err);
      return;
    }
    this.render();
  }

  private async loadSummary(): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      this.state.summary = await this.api.getSummary(this.state.sessionId);
      this.state.phase = "summary";
      this.state.banner = null;
    } catch (err) {
      this.fail(err);
      return;
    }
    this.render();
  }

  /** Idempotency token for the current day; resubmissions reuse it. */
  orderToken(): string {
    if (!this.state.sessionId || !this.state.view) throw new Error("no active day");
    return `${this.state.sessionId}:day${this.state.view.episode_day}`;
  }

  async submit(): Promise<void> {
    const { view, sessionId, submitting, selectedTarget } = this.state;
    if (!view || !sessionId || submitting || selectedTarget === null) return;
    this.state.submitting = true;
    this.render();
    try {
      const result = await this.api.submitOrder(sessionId, selectedTarget, this.orderToken());
      this.state.submitting = false;
      if (result.completed) {
        await this.loadSummary();
        return;
      }
      await this.refresh();
    } catch (err) {
      this.state.submitting = false;
      if (err instanceof ApiError && err.code === "order_rejected") {
        // same day, same token on the next attempt; nothing advanced
        this.state.banner = `Order rejected: ${err.message}`;
        this.state.canRetry = false;
        this.render();
        return;
      }
      if (err instanceof ApiError && err.code === "network") {
        this.state.banner = `Connection problem: ${err.message}. Your order was not lost; retry below.`;
        this.state.canRetry = true;
        this.render();
        return;
      }
      this.fail(err);
    }
  }

  reset(): void {
    this.storage?.removeItem(STORAGE_KEY);
    this.state.phase = "idle";
    this.state.sessionId = null;
    this.state.view = null;
    this.state.summary = null;
    this.state.banner = null;
    this.render();
  }

  private fail(err: unknown): void {
    const message = err instanceof SchemaError || err instanceof ApiError
      ? err.message
      : `unexpected error: ${(err as Error)?.message ?? err}`;
    this.state.banner = message;
    this.state.canRetry = false;
    this.render();
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    this.root.textContent = "";
    const banner = this.renderBanner();
    if (banner) this.root.appendChild(banner);
    if (this.state.phase === "day" && this.state.view) {
      this.root.appendChild(this.renderDay(this.state.view));
    } else if (this.state.phase === "summary" && this.state.summary) {
      this.root.appendChild(this.renderSummary(this.state.summary));
    } else if (!banner) {
      const idle = document.createElement("p");
      idle.className = "idle-note";
      idle.textContent = "No active session.";
      this.root.appendChild(idle);
    }
  }

  private renderBanner(): HTMLElement | null {
    if (!this.state.banner) return null;
    const banner = document.createElement("div");
    banner.className = "banner banner--error";
    banner.setAttribute("role", "alert");
    const text = document.createElement("span");
    text.textContent = this.state.banner;
    banner.appendChild(text);
    if (this.state.canRetry) {
      const retry = document.createElement("button");
      retry.className = "banner__retry";
      retry.textContent = "Retry";
      retry.addEventListener("click", () => void this.submit());
      banner.appendChild(retry);
    }
    return banner;
  }

  private renderDay(view: DayView): HTMLElement {
    const panel = document.createElement("section");
    panel.className = "day-panel";

    const header = document.createElement("header");
    header.className = "day-header";
    const title = document.createElement("h2");
    title.textContent = `Day ${view.episode_day + 1} of ${view.days_total}`;
    header.appendChild(title);
    const assets = document.createElement("p");
    assets.className = "day-assets";
    const deltaTxt = `${view.portfolio.delta_pct >= 0 ? "+" : ""}${view.portfolio.delta_pct.toFixed(2)}%`;
    assets.textContent =
      `Total assets ${fmtJpy(view.portfolio.total_assets)} (${deltaTxt} overnight) | ` +
      `cash ${fmtJpy(view.portfolio.cash)} | position ${view.portfolio.position} shares | ` +
      `price ${fmtJpy(view.portfolio.price)}`;
    header.appendChild(assets);
    panel.appendChild(header);

    const chartBox = document.createElement("div");
    chartBox.className = "chart-box";
    chartBox.appendChild(renderCandles(view.bars));
    panel.appendChild(chartBox);

    panel.appendChild(this.renderForecast(view));
    panel.appendChild(this.renderCards(view));
    panel.appendChild(this.renderOrderForm(view));
    return panel;
  }

  private renderForecast(view: DayView): HTMLElement {
    const box = document.createElement("div");
    box.className = "forecast";
    const caption = document.createElement("h3");
    caption.textContent = "Model forecast for tomorrow";
    box.appendChild(caption);
    for (const [key, label] of CLASS_LABELS) {
      const row = document.createElement("div");
      row.className = `forecast__row forecast__row--${key}`;
      const name = document.createElement("span");
      name.className = "forecast__label";
      name.textContent = label;
      const track = document.createElement("div");
      track.className = "forecast__track";
      const fill = document.createElement("div");
      fill.className = "forecast__fill";
      fill.style.width = `${(view.p[key] * 100).toFixed(1)}%`;
      track.appendChild(fill);
      const pct = document.createElement("span");
      pct.className = "forecast__pct";
      pct.textContent = `${(view.p[key] * 100).toFixed(1)}%`;
      row.append(name, track, pct);
      box.appendChild(row);
    }
    return box;
  }

  private renderCards(view: DayView): HTMLElement {
    const cards = document.createElement("div");
    cards.className = "cards";
    for (const [key, label] of CLASS_LABELS) {
      const card = document.createElement("article");
      card.className = view.emphasis[key] ? "card card--emphasized" : "card";
      card.dataset["class"] = key;
      const heading = document.createElement("h4");
      heading.className = "card__title";
      heading.textContent = label;
      const body = document.createElement("p");
      body.className = "card__text";
      body.textContent = view.texts[key];
      card.append(heading, body);
      cards.appendChild(card);
    }
    return cards;
  }

  private renderOrderForm(view: DayView): HTMLElement {
    const form = document.createElement("form");
    form.className = "order-form";
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });

    const label = document.createElement("label");
    label.className = "order-form__label";
    label.textContent = "Position after today's order (shares): ";
    const select = document.createElement("select");
    select.className = "order-form__target";
    select.name = "target";
    for (const target of view.valid_targets) {
      const option = document.createElement("option");
      option.value = String(target);
      option.textContent = String(target);
      if (target === this.state.selectedTarget) option.selected = true;
      select.appendChild(option);
    }
    select.addEventListener("change", () => {
      this.state.selectedTarget = Number(select.value);
    });
    label.appendChild(select);

    const button = document.createElement("button");
    button.type = "submit";
    button.className = "order-form__submit";
    button.disabled = this.state.submitting;
    button.textContent = this.state.submitting ? "Submitting..." : "Place order and advance";

    form.append(label, button);
    return form;
  }

  private renderSummary(summary: Summary): HTMLElement {
    const panel = document.createElement("section");
    panel.className = "summary-panel";
    const title = document.createElement("h2");
    title.textContent = "Session complete";
    panel.appendChild(title);

    const finals = document.createElement("p");
    finals.className = "summary-final";
    finals.textContent = `Final assets after ${summary.days} days: ${fmtJpy(summary.final_assets)}`;
    panel.appendChild(finals);

    const profit = summary.final_assets - 1_000_000;
    const verdict = document.createElement("p");
    verdict.className = profit >= 0 ? "summary-profit summary-profit--gain" : "summary-profit summary-profit--loss";
    verdict.textContent = `${profit >= 0 ? "Gain" : "Loss"}: ${fmtJpy(Math.abs(profit))}`;
    panel.appendChild(verdict);

    const table = document.createElement("table");
    table.className = "summary-trace";
    const head = document.createElement("tr");
    for (const column of ["Day", "Position", "Total assets"]) {
      const th = document.createElement("th");
      th.textContent = column;
      head.appendChild(th);
    }
    table.appendChild(head);
    for (const point of summary.trace) {
      const row = document.createElement("tr");
      const cells = [String(point.episode_day + 1), String(point.d_u), fmtJpy(point.total_assets)];
      for (const value of cells) {
        const td = document.createElement("td");
        td.textContent = value;
        row.appendChild(td);
      }
      table.appendChild(row);
    }
    panel.appendChild(table);

    if (this.state.sessionId) {
      const link = document.createElement("a");
      link.className = "summary-log";
      link.href = this.api.logUrl(this.state.sessionId);
      link.textContent = "Download the session log (JSONL)";
      panel.appendChild(link);
    }
    return panel;
  }
}
