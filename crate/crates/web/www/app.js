import init, { plan_budget, deviation_routes, simulate_scheduler } from "./pkg/seft_web.js";

const SVG = "http://www.w3.org/2000/svg";
const PALETTE = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#ff9da7"];

function el(tag, attrs = {}, parent) {
  const ns = ["svg", "rect", "line", "polyline", "text", "g", "title"].includes(tag) ? SVG : null;
  const node = ns ? document.createElementNS(ns, tag) : document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "text") node.textContent = v;
    else node.setAttribute(k, v);
  }
  if (parent) parent.appendChild(node);
  return node;
}

function color(k, m) {
  return `hsl(${Math.round(220 - 200 * (k / Math.max(1, m - 1)))}, 65%, 50%)`;
}

function formValues(form) {
  const data = Object.fromEntries(new FormData(form));
  for (const k of ["layers", "batches", "dim", "vocab", "records", "seed"]) {
    if (k in data) data[k] = Number(data[k]);
  }
  return data;
}

function show(out, fn) {
  out.replaceChildren();
  try {
    fn(out);
  } catch (e) {
    el("p", { class: "error", text: String(e.message ?? e) }, out);
  }
}

// Grouped bars: series is a list of { name, values, color }.
function bars(parent, series, { width = 900, height = 180 } = {}) {
  const n = series[0].values.length;
  const max = Math.max(1, ...series.flatMap((s) => s.values));
  const pad = 28;
  const svg = el("svg", { viewBox: `0 0 ${width} ${height + pad}`, width }, parent);
  const groupW = (width - pad) / n;
  const barW = Math.max(1, (groupW - 2) / series.length);
  series.forEach((s, j) => {
    s.values.forEach((v, k) => {
      const h = (v / max) * (height - 10);
      el("rect", {
        x: pad + k * groupW + j * barW, y: height - h, width: barW, height: h, fill: s.color,
      }, svg).appendChild(el("title", { text: `${s.name} @ boundary ${k}: ${v}` }));
    });
  });
  const step = Math.ceil(n / 32);
  for (let k = 0; k < n; k += step) {
    el("text", { x: pad + (k + 0.5) * groupW, y: height + 16, "text-anchor": "middle", "font-size": 11, text: k }, svg);
  }
  el("text", { x: 2, y: 12, "font-size": 11, text: max }, svg);
  const legend = el("div", { class: "legend" }, parent);
  for (const s of series) {
    el("span", { style: `background:${s.color}` }, legend);
    legend.append(s.name);
  }
  return svg;
}

function slotStrip(parent, slots, m) {
  const strip = el("div", { class: "slots" }, parent);
  const shown = slots.slice(0, 600);
  for (const b of shown) {
    el("span", { style: `background:${color(b, m)}`, title: `boundary ${b}` }, strip);
  }
  if (slots.length > shown.length) strip.append(` … ${slots.length - shown.length} more`);
}

function runPlan(form, out) {
  const f = formValues(form);
  show(out, (o) => {
    const p = JSON.parse(plan_budget(f.growth, f.layers, f.batches, f.order));
    el("p", { class: "stats", text: `expected saving ${p.expected_saving.toFixed(6)} · quotas ${p.quotas.join(", ")}` }, o);
    bars(o, [{ name: "quota", values: p.quotas, color: PALETTE[0] }]);
    el("p", { text: "Slot order (colour = boundary, shallow blue to deep red):" }, o);
    slotStrip(o, p.slots, f.layers);
  });
}

function runRoutes(form, out) {
  const f = formValues(form);
  show(out, (o) => {
    const r = JSON.parse(deviation_routes(f.layers, f.dim, f.vocab, f.records, f.measure, f.seed));
    el("p", { class: "stats", text: `expected saving if every prompt trains at its natural boundary: ${r.expected_saving.toFixed(4)}` }, o);
    const width = 900, height = 260, pad = 34;
    const all = r.records.flatMap((x) => x.deviations);
    const top = Math.max(1e-9, ...all);
    const svg = el("svg", { viewBox: `0 0 ${width} ${height + pad}`, width }, o);
    const x = (k) => pad + (k / r.layers) * (width - 2 * pad);
    const y = (d) => height - (d / top) * (height - 10);
    for (const rec of r.records) {
      const pts = rec.deviations.map((d, k) => `${x(k)},${y(d)}`).join(" ");
      el("polyline", { points: pts, fill: "none", stroke: color(rec.eof, r.layers), "stroke-opacity": 0.45 }, svg)
        .appendChild(el("title", { text: `tokens [${rec.tokens}] → ${rec.label}, eof ${rec.eof}` }));
    }
    el("polyline", { points: r.mean.map((d, k) => `${x(k)},${y(d)}`).join(" "), fill: "none", stroke: "#111", "stroke-width": 2.5 }, svg);
    for (let k = 0; k <= r.layers; k++) {
      el("text", { x: x(k), y: height + 16, "text-anchor": "middle", "font-size": 11, text: k }, svg);
    }
    el("text", { x: 2, y: 12, "font-size": 11, text: top.toFixed(3) }, svg);
    el("p", { text: "Thick line: mean profile. Line colour: the prompt's natural boundary. Natural boundary counts:" }, o);
    bars(o, [{ name: "prompts", values: r.eof_histogram, color: PALETTE[2] }], { height: 120 });
  });
}

function runScheduler(form, out) {
  const f = formValues(form);
  show(out, (o) => {
    const s = JSON.parse(simulate_scheduler(f.growth, f.order, f.layers, f.batches, f.distribution, f.seed));
    const unfilled = s.unfilled.reduce((a, b) => a + b, 0);
    el("p", {
      class: "stats",
      text: `planned saving ${s.expected_saving.toFixed(4)} · realized ${s.realized_saving.toFixed(4)} · ` +
        `${unfilled} of ${f.batches} slots unfilled`,
    }, o);
    bars(o, [
      { name: "quota", values: s.quotas, color: "#bbb" },
      { name: "filled slots", values: s.slot_counts, color: PALETTE[0] },
      { name: "unfilled", values: s.unfilled, color: PALETTE[3] },
      { name: "closing pass", values: s.forced_counts, color: PALETTE[1] },
    ]);
    el("p", { text: "Boundary each batch trained at, in batch order:" }, o);
    const byBatch = [...s.assignments].sort((a, b) => a.batch_id - b.batch_id).map((a) => a.boundary);
    slotStrip(o, byBatch, f.layers);
  });
}

await init();
for (const [id, outId, fn] of [
  ["plan-form", "plan-out", runPlan],
  ["route-form", "route-out", runRoutes],
  ["sched-form", "sched-out", runScheduler],
]) {
  const form = document.getElementById(id);
  const out = document.getElementById(outId);
  form.addEventListener("submit", (e) => {
    e.preventDefault();
    fn(form, out);
  });
  fn(form, out);
}
