// Built with: wasm-pack build crates/web --target web --out-dir www/pkg
import init, { sphereBbox, eaoCurve, failureTrace } from "./pkg/surgt_web.js";

const calibration = {
  focal_px: 500, cx_px: 320, cy_px: 256, baseline_mm: 5, image_width: 640, image_height: 512,
};

const $ = (id) => document.getElementById(id);

function show(id, fn) {
  const out = $(id);
  try {
    const value = fn();
    out.className = "";
    out.textContent = JSON.stringify(value, null, 2);
    return value;
  } catch (e) {
    out.className = "error";
    out.textContent = String(e.message ?? e);
    return null;
  }
}

function drawSphere() {
  const query = {
    calibration,
    centre: { x_mm: +$("sx").value, y_mm: +$("sy").value, z_mm: +$("sz").value },
    radius_mm: +$("sr").value,
  };
  const ans = show("sphere-out", () => JSON.parse(sphereBbox(JSON.stringify(query))));
  const ctx = $("sphere-canvas").getContext("2d");
  const half = 320, scale = half / calibration.image_width;
  ctx.clearRect(0, 0, 640, 256);
  ["left", "right"].forEach((view, i) => {
    ctx.strokeStyle = "#999";
    ctx.strokeRect(i * half + 0.5, 0.5, half - 1, 255);
    ctx.fillStyle = "#666";
    ctx.fillText(view, i * half + 6, 14);
    if (!ans) return;
    const [u0, v0, u1, v1] = ans.bbox[view];
    ctx.strokeStyle = "#c33";
    ctx.strokeRect(i * half + u0 * scale, v0 * scale, (u1 - u0) * scale, (v1 - v0) * scale);
  });
}

function drawCurve() {
  const ans = show("curve-out", () => JSON.parse(eaoCurve($("seqs").value)));
  const ctx = $("curve-canvas").getContext("2d");
  ctx.clearRect(0, 0, 640, 200);
  if (!ans) return;
  const n = ans.merged.length, dx = 620 / Math.max(n - 1, 1);
  const x = (i) => 10 + i * dx, y = (v) => 190 - v * 180;
  ctx.fillStyle = "#eef";
  ctx.fillRect(x(ans.window.n_min - 1), 10, x(ans.window.n_max - 1) - x(ans.window.n_min - 1), 180);
  ctx.strokeStyle = "#36c";
  ctx.beginPath();
  let pen = false;
  ans.merged.forEach((v, i) => {
    if (v === null) { pen = false; return; }
    pen ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v));
    pen = true;
  });
  ctx.stroke();
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  ctx.moveTo(10, y(ans.eao));
  ctx.lineTo(630, y(ans.eao));
  ctx.stroke();
}

function drawTrace() {
  const query = { ious: JSON.parse($("ious").value || "[]"), threshold: +$("thr").value, streak: +$("streak").value };
  const ans = show("trace-out", () => JSON.parse(failureTrace(JSON.stringify(query))));
  const ctx = $("trace-canvas").getContext("2d");
  ctx.clearRect(0, 0, 640, 60);
  if (!ans) return;
  const w = 620 / Math.max(ans.bad.length, 1);
  ans.bad.forEach((bad, i) => {
    ctx.fillStyle = bad === null ? "#ccc" : bad ? "#d55" : "#5a5";
    if (ans.failure && i >= ans.failure.streak_start && i <= ans.failure.index) ctx.fillStyle = "#800";
    ctx.fillRect(10 + i * w, 15, w - 2, 30);
  });
}

await init();
["sx", "sy", "sz", "sr"].forEach((id) => $(id).addEventListener("input", drawSphere));
$("curve-run").addEventListener("click", drawCurve);
$("trace-run").addEventListener("click", drawTrace);
drawSphere();
drawCurve();
drawTrace();
