// Thin client over the session JSON API. Server errors arrive as an
// envelope {code, message}; network failures surface as ApiError with
// code "network" so the app can offer a retry without losing the
// idempotency token.

import {
  DayView, OrderResult, Summary, parseDayView, parseOrderResult, parseSummary,
} from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

type FetchLike = typeof globalThis.fetch;

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? globalThis.fetch.bind(globalThis);
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, "network", `request failed: ${(err as Error).message}`);
    }
    const text = await response.text();
    let body: unknown = null;
    if (text.length > 0) {
      try {
        body = JSON.parse(text);
      } catch {
        body = text;
      }
    }
    if (!response.ok) {
      const envelope = body as { code?: string; message?: string } | null;
      throw new ApiError(
        response.status,
        envelope?.code ?? `http_${response.status}`,
        envelope?.message ?? `HTTP ${response.status}`,
      );
    }
    return body;
  }

  async createSession(condition: string, seed?: number): Promise<{ session_id: string; condition: string }> {
    const body: Record<string, unknown> = { condition };
    if (seed !== undefined) body["seed"] = seed;
    const data = await this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const record = data as { session_id?: unknown; condition?: unknown };
    if (typeof record?.session_id !== "string" || typeof record?.condition !== "string") {
      throw new ApiError(0, "bad_payload", "session creation returned no id");
    }
    return { session_id: record.session_id, condition: record.condition };
  }

  async getDay(sessionId: string): Promise<DayView> {
    return parseDayView(await this.request(`/sessions/${sessionId}/day`));
  }

  async submitOrder(sessionId: string, target: number, token: string): Promise<OrderResult> {
    return parseOrderResult(await this.request(`/sessions/${sessionId}/order`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ target_position: target, token }),
    }));
  }

  async getSummary(sessionId: string): Promise<Summary> {
    return parseSummary(await this.request(`/sessions/${sessionId}/summary`));
  }

  logUrl(sessionId: string): string {
    return `${this.base}/sessions/${sessionId}/log`;
  }

  async fetchLog(sessionId: string): Promise<string> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.logUrl(sessionId));
    } catch (err) {
      throw new ApiError(0, "network", `request failed: ${(err as Error).message}`);
    }
    if (!response.ok) throw new ApiError(response.status, "log_unavailable", "log not available");
    return response.text();
  }
}
