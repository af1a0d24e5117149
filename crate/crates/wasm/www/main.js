import init, { DemoFit, explainedCurve } from "./pkg/mvlogit_wasm.js";

let model = null;

const errorBox = document.getElementById("error");

function formValues(id) {
  const out = {};
  for (const input of document.querySelectorAll(`#${id} input`)) {
    out[input.name] = Number(input.value);
  }
  return out;
}

function report(fn) {
  try {
    errorBox.textContent = "";
    fn();
  } catch (e) {
    errorBox.textContent = String(e.message ?? e);
  }
}

// Axis frame with linear maps; returns {x, y} mapping data to pixels.
function frame(ctx, xmin, xmax, ymin, ymax, xlabel, ylabel) {
  const { width, height } = ctx.canvas;
  const m = { l: 50, r: 12, t: 12, b: 36 };
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.strokeRect(m.l, m.t, width - m.l - m.r, height - m.t - m.b);
  const x = (v) => m.l + ((v - xmin) / (xmax - xmin)) * (width - m.l - m.r);
  const y = (v) => height - m.b - ((v - ymin) / (ymax - ymin)) * (height - m.t - m.b);
  for (let k = 0; k <= 4; k++) {
    const vy = ymin + ((ymax - ymin) * k) / 4;
    ctx.fillText(vy.toFixed(2), 4, y(vy) + 4);
    const vx = xmin + ((xmax - xmin) * k) / 4;
    ctx.fillText(vx.toFixed(2), x(vx) - 12, height - m.b + 16);
  }
  ctx.fillText(xlabel, width / 2, height - 4);
  ctx.save();
  ctx.translate(12, height / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  return { x, y };
}

function drawCoefficients(summary) {
  const ctx = document.getElementById("coef-canvas").getContext("2d");
  const rows = summary.coefficients;
  const lo = Math.min(...rows.map((r) => Math.min(r.lower, r.truth)));
  const hi = Math.max(...rows.map((r) => Math.max(r.upper, r.truth)));
  const pad = 0.05 * (hi - lo || 1);
  const { x, y } = frame(ctx, -0.5, rows.length - 0.5, lo - pad, hi + pad, "free coordinate", "value");
  rows.forEach((r, i) => {
    ctx.strokeStyle = "#3366aa";
    ctx.beginPath();
    ctx.moveTo(x(i), y(r.lower));
    ctx.lineTo(x(i), y(r.upper));
    ctx.stroke();
    ctx.fillStyle = "#3366aa";
    ctx.beginPath();
    ctx.arc(x(i), y(r.estimate), 3, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#cc3322";
    const s = 4;
    ctx.beginPath();
    ctx.moveTo(x(i) - s, y(r.truth) - s);
    ctx.lineTo(x(i) + s, y(r.truth) + s);
    ctx.moveTo(x(i) - s, y(r.truth) + s);
    ctx.lineTo(x(i) + s, y(r.truth) - s);
    ctx.stroke();
  });
}

function fillTable(summary) {
  const rows = [
    ["status", summary.status],
    ["iterations", summary.iterations],
    ["test accuracy, bilinear", summary.accuracy_mv.toFixed(3)],
    ["test accuracy, conventional", summary.accuracy_conventional.toFixed(3)],
    ["similarity to truth", summary.similarity.toFixed(3)],
    ["rank-one share of coefficient matrix", summary.rho.toFixed(3)],
  ];
  document.getElementById("fit-table").innerHTML = rows
    .map(([k, v]) => `<tr><th>${k}</th><td>${v}</td></tr>`)
    .join("");
}

function drawBand() {
  if (!model) return;
  const level = Number(document.getElementById("band-level").value);
  document.getElementById("band-level-text").textContent = level.toFixed(2);
  const band = JSON.parse(model.band(level, -4, 4, 81));
  const ctx = document.getElementById("band-canvas").getContext("2d");
  const { x, y } = frame(ctx, -4, 4, 0, 1, "t", "P(Y=1)");
  ctx.fillStyle = "rgba(51, 102, 170, 0.2)";
  ctx.beginPath();
  band.forEach((b, i) => (i ? ctx.lineTo(x(b.t), y(b.upper)) : ctx.moveTo(x(b.t), y(b.upper))));
  [...band].reverse().forEach((b) => ctx.lineTo(x(b.t), y(b.lower)));
  ctx.closePath();
  ctx.fill();
  ctx.strokeStyle = "#3366aa";
  ctx.beginPath();
  band.forEach((b, i) => (i ? ctx.lineTo(x(b.t), y(b.estimate)) : ctx.moveTo(x(b.t), y(b.estimate))));
  ctx.stroke();
}

function runFit() {
  report(() => {
    const v = formValues("fit-form");
    model?.free();
    model = new DemoFit(v.p, v.q, v.n, v.sigma, v.lambda, v.seed);
    const summary = JSON.parse(model.summary());
    fillTable(summary);
    drawCoefficients(summary);
    drawBand();
  });
}

function runCurve() {
  report(() => {
    const v = formValues("curve-form");
    const curve = JSON.parse(explainedCurve(v.p, v.q, v.sigmaMax, 21, v.draws, 7));
    const ctx = document.getElementById("curve-canvas").getContext("2d");
    const ymin = Math.min(...curve.map((c) => c.mean_rho));
    const { x, y } = frame(ctx, 0, v.sigmaMax, Math.max(0, ymin - 0.05), 1, "sigma", "mean rank-one share");
    ctx.strokeStyle = "#3366aa";
    ctx.beginPath();
    curve.forEach((c, i) => (i ? ctx.lineTo(x(c.sigma), y(c.mean_rho)) : ctx.moveTo(x(c.sigma), y(c.mean_rho))));
    ctx.stroke();
  });
}

await init();
document.getElementById("fit-btn").addEventListener("click", runFit);
document.getElementById("curve-btn").addEventListener("click", runCurve);
document.getElementById("band-level").addEventListener("input", () => report(drawBand));
runFit();
runCurve();
