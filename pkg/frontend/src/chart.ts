/**
 * Static SVG charts from API data: the historical sales series and the
 * scenario frontier.  No client-side KPI recomputation, only drawing.
 */

import type { ScenarioScoreDoc, StatsPoint } from "./types";

const W = 560;
const H = 220;
const PAD = 36;

function scale(value: number, lo: number, hi: number, outLo: number, outHi: number): number {
  if (hi <= lo) return (outLo + outHi) / 2;
  return outLo + ((value - lo) / (hi - lo)) * (outHi - outLo);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Supply and sales per historical issue, as grouped bars. */
export function salesHistoryChart(series: StatsPoint[]): string {
  if (series.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}" role="img"><text x="10" y="20">no history</text></svg>`;
  }
  const maxY = Math.max(...series.map((p) => Math.max(p.total_supply, p.total_sales)), 1);
  const band = (W - 2 * PAD) / series.length;
  const parts: string[] = [];
  series.forEach((p, i) => {
    const x = PAD + i * band;
    const hSupply = scale(p.total_supply, 0, maxY, 0, H - 2 * PAD);
    const hSales = scale(p.total_sales, 0, maxY, 0, H - 2 * PAD);
    parts.push(
      `<rect class="supply" x="${(x + band * 0.12).toFixed(1)}" y="${(H - PAD - hSupply).toFixed(1)}"` +
      ` width="${(band * 0.34).toFixed(1)}" height="${hSupply.toFixed(1)}"><title>${esc(p.issue)} supply ${p.total_supply}</title></rect>`,
      `<rect class="sales" x="${(x + band * 0.52).toFixed(1)}" y="${(H - PAD - hSales).toFixed(1)}"` +
      ` width="${(band * 0.34).toFixed(1)}" height="${hSales.toFixed(1)}"><title>${esc(p.issue)} sales ${p.total_sales}</title></rect>`,
    );
  });
  return `<svg viewBox="0 0 ${W} ${H}" class="chart sales-history" role="img">` +
    `<line x1="${PAD}" y1="${H - PAD}" x2="${W - PAD}" y2="${H - PAD}" class="axis"/>` +
    parts.join("") + `</svg>`;
}

/** Scenario frontier: total supply on x, profit on y, one dot per scenario. */
export function frontierChart(scores: ScenarioScoreDoc[]): string {
  if (scores.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}" role="img"><text x="10" y="20">no scenarios</text></svg>`;
  }
  const xs = scores.map((s) => s.kpis.total_supply);
  const ys = scores.map((s) => Number(s.kpis.profit));
  const [xLo, xHi] = [Math.min(...xs), Math.max(...xs)];
  const [yLo, yHi] = [Math.min(...ys), Math.max(...ys)];
  const dots = scores.map((s) => {
    const cx = scale(s.kpis.total_supply, xLo, xHi, PAD, W - PAD);
    const cy = scale(Number(s.kpis.profit), yLo, yHi, H - PAD, PAD);
    const label = s.scenario.join("/");
    return `<circle cx="${cx.toFixed(1)}" cy="${cy.toFixed(1)}" r="4" class="scenario">` +
      `<title>[${esc(label)}] supply ${s.kpis.total_supply}, profit ${esc(s.kpis.profit)}</title></circle>`;
  });
  const ref = scores[0]?.reference_kpis;
  const refDot = ref === undefined ? "" :
    `<circle cx="${scale(ref.total_supply, xLo, xHi, PAD, W - PAD).toFixed(1)}"` +
    ` cy="${scale(Number(ref.profit), yLo, yHi, H - PAD, PAD).toFixed(1)}" r="5" class="reference">` +
    `<title>actual historical plan</title></circle>`;
  return `<svg viewBox="0 0 ${W} ${H}" class="chart frontier" role="img">` +
    `<line x1="${PAD}" y1="${H - PAD}" x2="${W - PAD}" y2="${H - PAD}" class="axis"/>` +
    `<line x1="${PAD}" y1="${PAD}" x2="${PAD}" y2="${H - PAD}" class="axis"/>` +
    dots.join("") + refDot + `</svg>`;
}
