import { loadRows } from "./csv.js";
import { FigureSpec, SchemaMismatch } from "./schema.js";
import { PALETTE, Scale, SvgCanvas, extent, fmt, linearScale, logScale } from "./svg.js";

/** Render one figure spec to an SVG string (deterministic bytes). */
export function render(spec: FigureSpec): string {
  switch (spec.kind) {
    case "entropy-trace":
      return entropyTrace(spec);
    case "badset-scaling":
      return badsetScaling(spec);
    case "chaos-vs-N":
      return chaosVsN(spec);
    case "marginal-compare":
      return marginalCompare(spec);
    case "series-convergence":
      return seriesConvergence(spec);
  }
}

function canvasFor(spec: FigureSpec): SvgCanvas {
  return new SvgCanvas(spec.style.width, spec.style.height);
}

function entropyTrace(spec: FigureSpec): string {
  const rows = loadRows("entropy-trace", spec.input);
  if (rows.length === 0) throw new SchemaMismatch("entropy trace CSV has no rows");
  const c = canvasFor(spec);
  const branches = [...new Set(rows.map((r) => r.branch))].sort();
  const xs = linearScale(...extent(rows.map((r) => r.time)), c.x0, c.x1);
  const ys = linearScale(...extent(rows.map((r) => r.entropy)), c.y0, c.y1);
  c.axes(xs, ys, "time", "entropy S");
  const legend: [string, string][] = [];
  branches.forEach((b, i) => {
    const sel = rows
      .filter((r) => r.branch === b)
      .sort((p, q) => p.time - q.time);
    const color = PALETTE[i % PALETTE.length];
    c.polyline(sel.map((r) => [xs(r.time), ys(r.entropy)]), color);
    for (const r of sel) c.circle(xs(r.time), ys(r.entropy), 2, color);
    for (const r of sel) {
      if (r.D_err > 0) {
        // entropy production error bars drawn at the entropy curve height
        c.errorBar(xs(r.time), ys(r.entropy) - 0, ys(r.entropy) - 0, color, 0);
      }
    }
    legend.push([b, color]);
  });
  c.legend(legend);
  return c.render(spec.style.title || "Entropy along forward and reverse branches");
}

function badsetScaling(spec: FigureSpec): string {
  const rows = loadRows("badset-scaling", spec.input).filter(
    (r) => r.sign === "minus" && r.fraction > 0,
  );
  if (rows.length < 2) throw new SchemaMismatch("need at least two one-sided fractions");
  const c = canvasFor(spec);
  const xs = logScale(
    Math.min(...rows.map((r) => r.eps0)) / 1.3,
    Math.max(...rows.map((r) => r.eps0)) * 1.3,
    c.x0, c.x1,
  );
  const ys = logScale(
    Math.min(...rows.map((r) => r.fraction)) / 1.5,
    Math.max(...rows.map((r) => r.fraction)) * 1.5,
    c.y0, c.y1,
  );
  c.axes(xs, ys, "proximity radius", "measure fraction", true, true);
  // least-squares slope in log-log coordinates
  const lx = rows.map((r) => Math.log(r.eps0));
  const ly = rows.map((r) => Math.log(r.fraction));
  const mx = lx.reduce((a, b) => a + b) / lx.length;
  const my = ly.reduce((a, b) => a + b) / ly.length;
  let num = 0, den = 0;
  for (let i = 0; i < lx.length; i++) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) ** 2;
  }
  const slope = num / den;
  const icept = my - slope * mx;
  const fit = (e: number) => Math.exp(icept + slope * Math.log(e));
  const e0s = rows.map((r) => r.eps0).sort((a, b) => a - b);
  c.polyline(
    e0s.map((e) => [xs(e), ys(fit(e))]),
    PALETTE[1],
    1,
  );
  for (const r of rows) {
    c.circle(xs(r.eps0), ys(r.fraction), 3, PALETTE[0]);
    if (r.stderr > 0 && r.fraction - r.stderr > 0) {
      c.errorBar(xs(r.eps0), ys(r.fraction - r.stderr), ys(r.fraction + r.stderr), PALETTE[0]);
    }
  }
  c.text(c.x0 + 12, c.y1 + 14, `fitted slope ${fmt(slope)}`, 11, "start", PALETTE[1]);
  return c.render(spec.style.title || "Backward bad-set measure vs radius");
}

function chaosVsN(spec: FigureSpec): string {
  const rows = loadRows("chaos-vs-N", spec.input);
  if (rows.length === 0) throw new SchemaMismatch("chaos CSV has no rows");
  const c = canvasFor(spec);
  const labels = [...new Set(rows.map((r) => r.time))].sort();
  const ns = [...new Set(rows.map((r) => r.N))].sort((a, b) => a - b);
  // max defect per (label, N) with its error
  const maxima = new Map<string, [number, number][]>();
  for (const label of labels) {
    const pts: [number, number][] = ns.map((n) => {
      const sel = rows.filter((r) => r.time === label && r.N === n);
      let best = 0, err = 0;
      for (const r of sel) {
        if (r.defect > best) { best = r.defect; err = r.stderr; }
      }
      return [best, err];
    });
    maxima.set(label, pts);
  }
  const all = [...maxima.values()].flat();
  const xs = linearScale(...extent(ns), c.x0, c.x1);
  const ys = linearScale(
    0,
    Math.max(...all.map(([d, e]) => d + e)) * 1.15 || 1,
    c.y0, c.y1,
  );
  c.axes(xs, ys, "particle number N", "max chaos defect");
  const legend: [string, string][] = [];
  labels.forEach((label, i) => {
    const color = PALETTE[i % PALETTE.length];
    const pts = maxima.get(label)!;
    c.polyline(pts.map(([d], k) => [xs(ns[k]), ys(d)]), color);
    pts.forEach(([d, e], k) => {
      c.circle(xs(ns[k]), ys(d), 3, color);
      if (e > 0) c.errorBar(xs(ns[k]), ys(Math.max(d - e, 0)), ys(d + e), color);
    });
    legend.push([`t = ${label}`, color]);
  });
  c.legend(legend);
  return c.render(spec.style.title || "Chaos defect under matched low-density scaling");
}

function marginalCompare(spec: FigureSpec): string {
  const rows = loadRows("marginal-compare", spec.input);
  if (rows.length === 0) throw new SchemaMismatch("marginal CSV has no rows");
  // slice along v1 at the v2 closest to zero
  const v2s = [...new Set(rows.map((r) => r.v2))];
  const v2star = v2s.reduce((a, b) => (Math.abs(b) < Math.abs(a) ? b : a));
  const sel = rows.filter((r) => r.v2 === v2star).sort((p, q) => p.v1 - q.v1);
  const c = canvasFor(spec);
  const ymax = Math.max(
    ...sel.map((r) => Math.max(r.empirical + r.stderr, r.free_transport, r.boltzmann)),
  );
  const xs = linearScale(...extent(sel.map((r) => r.v1)), c.x0, c.x1);
  const ys = linearScale(0, ymax * 1.1 || 1, c.y0, c.y1);
  c.axes(xs, ys, `velocity component (slice v2 = ${fmt(v2star)})`, "density");
  c.polyline(sel.map((r) => [xs(r.v1), ys(r.free_transport)]), PALETTE[2], 1.5);
  c.polyline(sel.map((r) => [xs(r.v1), ys(r.boltzmann)]), PALETTE[1], 1.5);
  for (const r of sel) {
    c.circle(xs(r.v1), ys(r.empirical), 2.5, PALETTE[0]);
    if (r.stderr > 0) {
      c.errorBar(xs(r.v1), ys(Math.max(r.empirical - r.stderr, 0)), ys(r.empirical + r.stderr), PALETTE[0]);
    }
  }
  c.legend([
    ["ensemble", PALETTE[0]],
    ["free transport", PALETTE[2]],
    ["Boltzmann", PALETTE[1]],
  ]);
  return c.render(spec.style.title || "Conditioned ensemble vs free transport vs Boltzmann");
}

function seriesConvergence(spec: FigureSpec): string {
  const rows = loadRows("series-convergence", spec.input).filter(
    (r) => r.variant === "boltzmann" && r.s >= 1,
  );
  if (rows.length === 0) throw new SchemaMismatch("no expansion terms in CSV");
  const c = canvasFor(spec);
  const ss = [...new Set(rows.map((r) => r.s))].sort((a, b) => a - b);
  const mags = ss.map((s) => {
    const sel = rows.filter((r) => r.s === s);
    const m = sel.reduce((a, r) => a + Math.abs(r.estimate), 0) / sel.length;
    const e = sel.reduce((a, r) => a + r.stderr, 0) / sel.length;
    return [Math.max(m, 1e-300), e] as [number, number];
  });
  const xs = linearScale(ss[0] - 0.5, ss[ss.length - 1] + 0.5, c.x0, c.x1);
  const ys = logScale(
    Math.max(Math.min(...mags.map(([m]) => m)) / 3, 1e-12),
    Math.max(...mags.map(([m, e]) => m + e)) * 3,
    c.y0, c.y1,
  );
  c.axes(xs, ys, "expansion order s", "mean |term|", false, true);
  c.polyline(mags.map(([m], k) => [xs(ss[k]), ys(Math.max(m, 1e-300))]), PALETTE[0]);
  mags.forEach(([m, e], k) => {
    c.circle(xs(ss[k]), ys(m), 3, PALETTE[0]);
    if (e > 0 && m - e > 0) c.errorBar(xs(ss[k]), ys(m - e), ys(m + e), PALETTE[0]);
  });
  return c.render(spec.style.title || "Expansion term magnitudes");
}
