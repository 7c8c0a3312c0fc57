import init, { simulate_and_test, trace_ratio_curve, rejection_curve } from "./pkg/factorbreak_web.js";

const $ = (id) => document.getElementById(id);
const status = $("status");
const canvas = $("plot");
const ctx = canvas.getContext("2d");
const COLORS = ["#1f77b4", "#d62728", "#2ca02c"];

function settings() {
  const num = (id) => Number($(id).value);
  return JSON.stringify({
    n: num("n"), t: num("t"), break_type: $("break_type").value,
    omega: num("omega"), rho: num("rho"), alpha: num("alpha"), beta: num("beta"),
    seed: num("seed"), reps: num("reps"),
  });
}

function frame(xmin, xmax, ymin, ymax, xlabel) {
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  ctx.beginPath();
  ctx.moveTo(pad, 10);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 10, h - pad);
  ctx.stroke();
  ctx.fillText(ymax.toFixed(2), 2, 16);
  ctx.fillText(ymin.toFixed(2), 2, h - pad);
  ctx.fillText(xmin.toFixed(2), pad, h - pad + 15);
  ctx.fillText(xmax.toFixed(2), w - 40, h - pad + 15);
  ctx.fillText(xlabel, w / 2 - 30, h - 8);
  return {
    x: (v) => pad + ((v - xmin) / (xmax - xmin || 1)) * (w - pad - 10),
    y: (v) => h - pad - ((v - ymin) / (ymax - ymin || 1)) * (h - pad - 10),
  };
}

function drawCurve(curve, xlabel, yfloor) {
  const all = curve.series.flatMap(([, ys]) => ys);
  const ymax = Math.max(...all, yfloor);
  const s = frame(curve.x[0], curve.x[curve.x.length - 1], 0, ymax, xlabel);
  curve.series.forEach(([name, ys], k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.fillStyle = ctx.strokeStyle;
    ctx.beginPath();
    ys.forEach((y, i) => {
      const px = s.x(curve.x[i]), py = s.y(y);
      i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
      ctx.fillRect(px - 2, py - 2, 4, 4);
    });
    ctx.stroke();
    ctx.fillText(name, 60 + 120 * k, 24);
  });
}

function drawBars(values) {
  const ymax = Math.max(...values, 1e-9);
  const s = frame(0, values.length, 0, ymax, "series i: norm of the orthogonal shift");
  ctx.fillStyle = COLORS[0];
  const bw = Math.max(1, s.x(1) - s.x(0) - 1);
  values.forEach((v, i) => ctx.fillRect(s.x(i), s.y(v), bw, s.y(0) - s.y(v)));
}

function fmt(v) {
  return v < 1e-4 ? v.toExponential(1) : v.toFixed(4);
}

function guarded(label, fn) {
  return () => {
    status.className = "";
    status.textContent = `${label}…`;
    // Let the status repaint before the synchronous wasm call.
    setTimeout(() => {
      const t0 = performance.now();
      try {
        fn();
        status.textContent = `${label}: ${((performance.now() - t0) / 1000).toFixed(1)} s`;
      } catch (e) {
        status.className = "error";
        status.textContent = String(e);
      }
    }, 20);
  };
}

function runTest() {
  const r = JSON.parse(simulate_and_test(settings()));
  $("results").hidden = false;
  $("zs").textContent = r.z_statistic.toFixed(2);
  $("zp").textContent = fmt(r.z_p);
  $("zh").textContent = fmt(r.holm[0]);
  $("ws").textContent = r.w_statistic.toFixed(2);
  $("wp").textContent = fmt(r.w_p);
  $("wh").textContent = fmt(r.holm[1]);
  $("tr").textContent = r.trace_ratio.toFixed(3);
  $("rej").textContent = `${r.rejections} of ${r.n}`;
  drawBars(r.w_norms);
}

await init();
$("run-test").onclick = guarded("simulate and test", runTest);
$("run-trace").onclick = guarded("trace ratio curve", () =>
  drawCurve(JSON.parse(trace_ratio_curve(settings())), "factor scale c after the break", 1));
$("run-power").onclick = guarded("rejection curve", () =>
  drawCurve(JSON.parse(rejection_curve(settings())), "loading shift omega", 1));
status.textContent = "ready";
