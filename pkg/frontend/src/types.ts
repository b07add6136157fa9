// Payload shapes of the session API, with strict runtime validation.
// A malformed payload must surface as a visible error, never render as a
// silent default, so every field is checked before use.

export interface Bar {
  date_index: number;
  open: number;
  high: number;
  low: number;
  close: number;
}

export interface ClassTriple<T> {
  bull: T;
  neutral: T;
  bear: T;
}

export interface Portfolio {
  cash: number;
  position: number;
  price: number;
  total_assets: number;
  delta_pct: number;
}

export interface DayView {
  session_id: string;
  condition: string;
  day: number;
  episode_day: number;
  days_total: number;
  bars: Bar[];
  p: ClassTriple<number>;
  texts: ClassTriple<string>;
  emphasis: ClassTriple<boolean>;
  portfolio: Portfolio;
  valid_targets: number[];
}

export interface OrderResult {
  accepted: boolean;
  episode_day: number;
  total_assets: number;
  completed: boolean;
}

export interface TracePoint {
  day: number;
  episode_day: number;
  d_u: number;
  delta_pct: number;
  total_assets: number;
  pattern: boolean[];
}

export interface Summary {
  session_id: string;
  condition: string;
  final_assets: number;
  days: number;
  correlation: number | null;
  trace: TracePoint[];
}

export class SchemaError extends Error {
  constructor(message: string) {
    super(`unexpected server payload: ${message}`);
    this.name = "SchemaError";
  }
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function requireNumber(obj: Record<string, unknown>, key: string): number {
  const value = obj[key];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new SchemaError(`field '${key}' is not a finite number`);
  }
  return value;
}

function requireString(obj: Record<string, unknown>, key: string): string {
  const value = obj[key];
  if (typeof value !== "string" || value.length === 0) {
    throw new SchemaError(`field '${key}' is not a non-empty string`);
  }
  return value;
}

function requireTriple<T>(
  obj: Record<string, unknown>, key: string, check: (v: unknown) => v is T,
): ClassTriple<T> {
  const value = obj[key];
  if (!isRecord(value)) throw new SchemaError(`field '${key}' is not an object`);
  for (const cls of ["bull", "neutral", "bear"]) {
    if (!check(value[cls])) throw new SchemaError(`field '${key}.${cls}' has the wrong type`);
  }
  return value as unknown as ClassTriple<T>;
}

const isNumber = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);
const isString = (v: unknown): v is string => typeof v === "string";
const isBoolean = (v: unknown): v is boolean => typeof v === "boolean";

export function parseDayView(data: unknown): DayView {
  if (!isRecord(data)) throw new SchemaError("day payload is not an object");
  const bars = data["bars"];
  if (!Array.isArray(bars) || bars.length === 0) {
    throw new SchemaError("field 'bars' is not a non-empty array");
  }
  for (const bar of bars) {
    if (!isRecord(bar)) throw new SchemaError("bar entry is not an object");
    for (const key of ["date_index", "open", "high", "low", "close"]) {
      requireNumber(bar, key);
    }
  }
  const portfolio = data["portfolio"];
  if (!isRecord(portfolio)) throw new SchemaError("field 'portfolio' is not an object");
  for (const key of ["cash", "position", "price", "total_assets", "delta_pct"]) {
    requireNumber(portfolio, key);
  }
  const targets = data["valid_targets"];
  if (!Array.isArray(targets) || targets.length === 0 || !targets.every(isNumber)) {
    throw new SchemaError("field 'valid_targets' is not a non-empty number array");
  }
  return {
    session_id: requireString(data, "session_id"),
    condition: requireString(data, "condition"),
    day: requireNumber(data, "day"),
    episode_day: requireNumber(data, "episode_day"),
    days_total: requireNumber(data, "days_total"),
    bars: bars as unknown as Bar[],
    p: requireTriple(data, "p", isNumber),
    texts: requireTriple(data, "texts", isString),
    emphasis: requireTriple(data, "emphasis", isBoolean),
    portfolio: portfolio as unknown as Portfolio,
    valid_targets: targets as number[],
  };
}

export function parseOrderResult(data: unknown): OrderResult {
  if (!isRecord(data)) throw new SchemaError("order response is not an object");
  if (data["accepted"] !== true) throw new SchemaError("order response not accepted");
  return {
    accepted: true,
    episode_day: requireNumber(data, "episode_day"),
    total_assets: requireNumber(data, "total_assets"),
    completed: Boolean(data["completed"]),
  };
}

export function parseSummary(data: unknown): Summary {
  if (!isRecord(data)) throw new SchemaError("summary payload is not an object");
  const trace = data["trace"];
  if (!Array.isArray(trace)) throw new SchemaError("field 'trace' is not an array");
  const correlation = data["correlation"];
  if (correlation !== null && !isNumber(correlation)) {
    throw new SchemaError("field 'correlation' is neither null nor a number");
  }
  return {
    session_id: requireString(data, "session_id"),
    condition: requireString(data, "condition"),
    final_assets: requireNumber(data, "final_assets"),
    days: requireNumber(data, "days"),
    correlation: correlation as number | null,
    trace: trace as TracePoint[],
  };
}
