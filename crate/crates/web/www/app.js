import init, { allocate_power, gpd_tail, sample_and_fit, compare_policies } from "./pkg/v2v_aoi_web.js";

const $ = (id) => document.getElementById(id);
const PMAX = 0.2;

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, 5);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 5, h - pad);
  ctx.stroke();
}

// Log-y plot of [x, p] series. ymin is the lowest decade shown.
function tailPlot(canvas, series, xmax, ymin) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  axes(ctx, w, h, pad);
  const decades = -Math.log10(ymin);
  const px = (x) => pad + (x / xmax) * (w - pad - 10);
  const py = (p) => 5 + (-Math.log10(Math.max(p, ymin)) / decades) * (h - pad - 10);
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  for (let d = 0; d <= decades; d++) {
    ctx.fillText("1e-" + d, 2, py(10 ** -d) + 4);
  }
  ctx.fillText(xmax.toPrecision(3), w - 40, h - pad + 14);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.points.forEach(([x, p], i) => (i ? ctx.lineTo(px(x), py(p)) : ctx.moveTo(px(x), py(p))));
    ctx.stroke();
  }
}

function drawAllocation() {
  const w = +$("wf-w").value, v = +$("wf-v").value, l = +$("wf-l").value;
  $("wf-w-v").textContent = w;
  $("wf-v-v").textContent = v;
  const snr = $("wf-snr").value.split(",").map(Number).filter((x) => !Number.isNaN(x));
  const p = allocate_power(new Float64Array(snr), w, v, PMAX, l, 1e-5);
  const c = $("wf-c"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height, 20);
  const bw = (c.width - 40) / Math.max(p.length, 1);
  ctx.fillStyle = "#3a6ea5";
  p.forEach((pn, i) => {
    const bh = (pn / PMAX) * (c.height - 30);
    ctx.fillRect(25 + i * bw + 4, c.height - 20 - bh, bw - 8, bh);
  });
  $("wf-o").textContent = "powers (W): " + Array.from(p, (x) => x.toFixed(4)).join("  ") +
    "\ntotal: " + p.reduce((a, b) => a + b, 0).toFixed(4) + " of " + PMAX;
}

function gpdSeries(sigma, xi, color) {
  const xmax = 6;
  const xs = Float64Array.from({ length: 200 }, (_, i) => (i * xmax) / 199);
  const ps = gpd_tail(sigma, xi, xs);
  return { color, points: Array.from(xs, (x, i) => [x, ps[i]]) };
}

let fitted = null;
function drawGpd() {
  const s = +$("g-s").value, x = +$("g-x").value;
  $("g-s-v").textContent = s;
  $("g-x-v").textContent = x;
  const series = [gpdSeries(s, x, "#3a6ea5")];
  if (fitted) series.push(gpdSeries(fitted.sigma, fitted.xi, "#d2691e"));
  tailPlot($("g-c"), series, 6, 1e-5);
}

function refit() {
  try {
    fitted = JSON.parse(sample_and_fit(+$("g-s").value, +$("g-x").value, 2000, Date.now() % 100000));
    $("g-o").textContent = `fit: scale ${fitted.sigma.toFixed(4)}, shape ${fitted.xi.toFixed(4)}, KS ${fitted.ks.toFixed(4)}`;
  } catch (e) {
    fitted = null;
    $("g-o").textContent = String(e);
  }
  drawGpd();
}

function simulate() {
  $("s-o").textContent = "running...";
  setTimeout(() => {
    try {
      const res = JSON.parse(compare_policies(+$("s-k").value, +$("s-n").value, $("s-r").value * 1e6, +$("s-v").value, +$("s-t").value, 1));
      const xmax = Math.max(...res.flatMap((r) => r.ccdf.map(([x]) => x)), 1e-3);
      const colors = ["#3a6ea5", "#c0392b"];
      tailPlot($("s-c"), res.map((r, i) => ({ color: colors[i], points: r.ccdf })), xmax, 1e-4);
      $("s-o").textContent = res
        .map((r, i) => `${["blue", "red"][i]} ${r.policy}: mean AoI ${(r.avg_aoi_s * 1e3).toFixed(2)} ms, power ${r.avg_power_w.toFixed(4)} W, Pr{AoI > d} ${r.pr_aoi_exceeds.toExponential(2)}`)
        .join("\n");
    } catch (e) {
      $("s-o").textContent = String(e);
    }
  }, 10);
}

await init();
for (const id of ["wf-w", "wf-v", "wf-l", "wf-snr"]) $(id).addEventListener("input", drawAllocation);
for (const id of ["g-s", "g-x"]) $(id).addEventListener("input", () => { fitted = null; $("g-o").textContent = ""; drawGpd(); });
$("g-fit").addEventListener("click", refit);
$("s-run").addEventListener("click", simulate);
drawAllocation();
drawGpd();
