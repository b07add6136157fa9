// Test utilities: a live backend spawner (the real Python service) and
// payload stubs for unit tests.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import type { DayView } from "../src/types.js";

export async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.once("error", reject);
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      const port = address.port;
      server.close(() => resolve(port));
    });
  });
}

export interface Backend {
  baseUrl: string;
  stop: () => void;
}

export async function startBackend(config: Record<string, unknown>): Promise<Backend> {
  const dir = mkdtempSync(join(tmpdir(), "nudgelab-ui-"));
  const configPath = join(dir, "service.json");
  writeFileSync(configPath, JSON.stringify(config));
  const port = await freePort();
  const proc: ChildProcess = spawn(
    "python3", ["-m", "nudgelab.cli", "serve", "--config", configPath, "--port", String(port)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  proc.stderr?.on("data", (chunk) => { stderr += String(chunk); });

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`backend exited with ${proc.exitCode}: ${stderr}`);
    }
    try {
      const response = await fetch(`${baseUrl}/sessions/__probe__/day`);
      if (response.status === 404) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`backend did not come up in 30s: ${stderr}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  return { baseUrl, stop: () => { proc.kill(); } };
}

export const BASE_SERVICE_CONFIG = {
  master_seed: 31337,
  series: { synth: { seed: 55, days: 120, regime: "random_walk",
                     volatility: 0.015, drift: 0.0, start_price: 1800 } },
  predictor: { calibrated: { seed: 66, target_accuracy: 0.6, confidence: 0.6 } },
  window: { start: 10, length: 45 },
  corpus: { generate: { seed: 1 } },
  conditions: {
    flat: { kind: "flat", policy: { kind: "oracle" } },
    roulette: { kind: "roulette", policy: { kind: "oracle" } },
  },
};

// drift with zero volatility pushes the price above 2000 JPY by the window
// start, so the 500-share order exceeds the 1M budget deterministically
export const RISING_SERVICE_CONFIG = {
  ...BASE_SERVICE_CONFIG,
  series: { synth: { seed: 1, days: 120, regime: "random_walk",
                     volatility: 0.0, drift: 0.01, start_price: 2000 } },
};

export function makeDayPayload(overrides: Partial<DayView> = {}): DayView {
  return {
    session_id: "abc123",
    condition: "roulette",
    day: 10,
    episode_day: 0,
    days_total: 45,
    bars: [
      { date_index: 8, open: 1800, high: 1830, low: 1790, close: 1820 },
      { date_index: 9, open: 1820, high: 1825, low: 1780, close: 1795 },
      { date_index: 10, open: 1795, high: 1810, low: 1795, close: 1810 },
    ],
    p: { bull: 0.6, neutral: 0.25, bear: 0.15 },
    texts: {
      bull: "The climb keeps going.",
      neutral: "Nothing decisive on the chart.",
      bear: "Looks stretched, pullback likely.",
    },
    emphasis: { bull: true, neutral: false, bear: false },
    portfolio: { cash: 1_000_000, position: 0, price: 1810, total_assets: 1_000_000, delta_pct: 0 },
    valid_targets: [0, 100, 200, 300, 400, 500],
    ...overrides,
  };
}

export async function until(check: () => boolean, timeoutMs = 10_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!check()) {
    if (Date.now() > deadline) throw new Error("condition not reached in time");
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}

/** In-memory Storage stand-in for resume tests. */
export function memoryStorage(): Pick<Storage, "getItem" | "setItem" | "removeItem"> {
  const map = new Map<string, string>();
  return {
    getItem: (key) => map.get(key) ?? null,
    setItem: (key, value) => { map.set(key, value); },
    removeItem: (key) => { map.delete(key); },
  };
}
