/**
 * Minimal deterministic SVG plotting: linear/log scales, axes with tick
 * labels, polylines, markers and error bars. All numbers are emitted
 * through one fixed formatter so identical inputs yield identical bytes.
 */

export const fmt = (x: number): string => {
  if (!isFinite(x)) return "0";
  const s = x.toPrecision(6);
  return s.includes("e") ? s : String(parseFloat(s));
};

export interface Scale {
  (x: number): number;
  ticks(): number[];
}

export function linearScale(lo: number, hi: number, rLo: number, rHi: number): Scale {
  const span = hi - lo || 1;
  const f = ((x: number) => rLo + ((x - lo) / span) * (rHi - rLo)) as Scale;
  f.ticks = () => {
    const step = niceStep(span / 5);
    const start = Math.ceil(lo / step) * step;
    const out: number[] = [];
    for (let v = start; v <= hi + 1e-12 * Math.abs(span); v += step) out.push(v);
    return out;
  };
  return f;
}

export function logScale(lo: number, hi: number, rLo: number, rHi: number): Scale {
  const a = Math.log10(lo);
  const b = Math.log10(hi);
  const span = b - a || 1;
  const f = ((x: number) => rLo + ((Math.log10(x) - a) / span) * (rHi - rLo)) as Scale;
  f.ticks = () => {
    const out: number[] = [];
    for (let e = Math.ceil(a - 1e-9); e <= Math.floor(b + 1e-9); e++) out.push(10 ** e);
    if (out.length < 2) return [lo, hi];
    return out;
  };
  return f;
}

function niceStep(raw: number): number {
  const mag = 10 ** Math.floor(Math.log10(Math.abs(raw) || 1));
  const r = raw / mag;
  return (r >= 5 ? 10 : r >= 2 ? 5 : r >= 1 ? 2 : 1) * mag;
}

export const PALETTE = ["#1f6f8b", "#c1403d", "#4d8b31", "#8b5e83", "#b07d2b"];

export class SvgCanvas {
  parts: string[] = [];
  constructor(
    readonly width: number,
    readonly height: number,
    readonly margin = { l: 62, r: 16, t: 34, b: 46 },
  ) {}

  get x0() { return this.margin.l; }
  get x1() { return this.width - this.margin.r; }
  get y0() { return this.height - this.margin.b; }  // svg y grows downward
  get y1() { return this.margin.t; }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = "") {
    const d = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"${d}/>`,
    );
  }

  polyline(pts: [number, number][], stroke: string, width = 1.5) {
    const d = pts.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(
      `<polyline points="${d}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  circle(x: number, y: number, r: number, fill: string) {
    this.parts.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${r}" fill="${fill}"/>`);
  }

  text(x: number, y: number, s: string, size = 11, anchor = "middle", fill = "#222") {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" font-family="Helvetica, Arial, sans-serif" text-anchor="${anchor}" fill="${fill}">${escapeXml(s)}</text>`,
    );
  }

  errorBar(x: number, yLo: number, yHi: number, stroke: string, cap = 3) {
    this.line(x, yLo, x, yHi, stroke, 1);
    this.line(x - cap, yLo, x + cap, yLo, stroke, 1);
    this.line(x - cap, yHi, x + cap, yHi, stroke, 1);
  }

  axes(xs: Scale, ys: Scale, xLabel: string, yLabel: string, logX = false, logY = false) {
    this.line(this.x0, this.y0, this.x1, this.y0, "#222", 1);
    this.line(this.x0, this.y0, this.x0, this.y1, "#222", 1);
    for (const t of xs.ticks()) {
      const px = xs(t);
      this.line(px, this.y0, px, this.y0 + 4, "#222", 1);
      this.text(px, this.y0 + 16, logX ? `1e${Math.round(Math.log10(t))}` : fmt(t), 10);
    }
    for (const t of ys.ticks()) {
      const py = ys(t);
      this.line(this.x0 - 4, py, this.x0, py, "#222", 1);
      this.text(this.x0 - 8, py + 3, logY ? `1e${Math.round(Math.log10(t))}` : fmt(t), 10, "end");
    }
    this.text((this.x0 + this.x1) / 2, this.height - 8, xLabel, 12);
    this.parts.push(
      `<text x="14" y="${fmt((this.y0 + this.y1) / 2)}" font-size="12" font-family="Helvetica, Arial, sans-serif" text-anchor="middle" fill="#222" transform="rotate(-90 14 ${fmt((this.y0 + this.y1) / 2)})">${escapeXml(yLabel)}</text>`,
    );
  }

  legend(entries: [string, string][]) {
    entries.forEach(([label, color], i) => {
      const y = this.y1 + 14 + 15 * i;
      this.line(this.x1 - 150, y - 4, this.x1 - 130, y - 4, color, 2);
      this.text(this.x1 - 124, y, label, 10, "start");
    });
  }

  render(title: string): string {
    if (title) this.text((this.x0 + this.x1) / 2, 18, title, 13);
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">\n` +
      `<rect width="${this.width}" height="${this.height}" fill="white"/>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function extent(values: number[], padFrac = 0.06): [number, number] {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const pad = (hi - lo || Math.abs(hi) || 1) * padFrac;
  return [lo - pad, hi + pad];
}
