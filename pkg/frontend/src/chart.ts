// Hand-rolled SVG candlestick chart; no chart library so the client stays
// dependency-free and renders identically under jsdom.

import { Bar } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface ChartOptions {
  width?: number;
  height?: number;
  padding?: number;
}

function el(name: string, attrs: Record<string, string | number>): SVGElement {
  const node = document.createElementNS(SVG_NS, name);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, String(value));
  }
  return node;
}

export function renderCandles(bars: Bar[], options: ChartOptions = {}): SVGSVGElement {
  const width = options.width ?? 640;
  const height = options.height ?? 240;
  const padding = options.padding ?? 10;

  const svg = el("svg", {
    width, height, viewBox: `0 0 ${width} ${height}`, class: "candle-chart",
    role: "img", "aria-label": `candlestick chart of ${bars.length} days`,
  }) as SVGSVGElement;

  const low = Math.min(...bars.map((b) => b.low));
  const high = Math.max(...bars.map((b) => b.high));
  const span = Math.max(high - low, 1e-9);
  const innerW = width - 2 * padding;
  const innerH = height - 2 * padding;
  const slot = innerW / bars.length;
  const bodyW = Math.max(Math.min(slot * 0.6, 18), 1.5);

  const y = (price: number) => padding + (high - price) / span * innerH;

  bars.forEach((bar, i) => {
    const cx = padding + slot * (i + 0.5);
    const up = bar.close > bar.open;
    const cls = up ? "candle candle--up" : bar.close < bar.open ? "candle candle--down" : "candle candle--flat";
    const group = el("g", { class: cls, "data-day": bar.date_index });
    group.appendChild(el("line", {
      x1: cx, x2: cx, y1: y(bar.high), y2: y(bar.low), class: "candle__wick",
    }));
    const top = y(Math.max(bar.open, bar.close));
    const bottom = y(Math.min(bar.open, bar.close));
    group.appendChild(el("rect", {
      x: cx - bodyW / 2, y: top, width: bodyW,
      height: Math.max(bottom - top, 1), class: "candle__body",
    }));
    svg.appendChild(group);
  });
  return svg;
}
