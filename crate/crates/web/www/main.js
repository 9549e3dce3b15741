// Expects the wasm-bindgen output (`--target web`) in ./pkg.
import init, { lesionPreview, partitionReport, simulateTraining } from "./pkg/pht_web.js";

const CLASSES = ["MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function draw(canvasId, size, rgba) {
  const canvas = $(canvasId);
  canvas.width = size;
  canvas.height = size;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), size, size), 0, 0);
}

function renderPreview() {
  const index = num("pv-index");
  const seed = BigInt(num("pv-seed"));
  draw("pv-original", 24, lesionPreview(7n, index, 24, 16, "original", seed));
  draw("pv-prepared", 16, lesionPreview(7n, index, 24, 16, "prepared", seed));
  draw("pv-augmented", 16, lesionPreview(7n, index, 24, 16, "augmented", seed));
}

function renderPartition() {
  const rows = JSON.parse(partitionReport(num("pt-n"), num("pt-stations"), num("pt-test"), num("pt-val"), 0n));
  const head = "<tr><th>split</th><th>n</th>" + CLASSES.map((c) => `<th>${c}</th>`).join("") + "</tr>";
  const body = rows
    .map((r) => `<tr><td>${r.split}</td><td>${r.count}</td>` + r.proportions.map((p) => `<td>${(100 * p).toFixed(1)}</td>`).join("") + "</tr>")
    .join("");
  $("pt-table").innerHTML = `<table>${head}${body}</table>`;
}

function plot(runs) {
  const canvas = $("tr-plot");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = runs.flatMap((r) => r.loss);
  const max = Math.max(...all);
  const min = Math.min(...all);
  const longest = Math.max(...runs.map((r) => r.loss.length));
  const x = (i) => 40 + (i / Math.max(1, longest - 1)) * (canvas.width - 60);
  const y = (v) => 20 + (1 - (v - min) / (max - min || 1)) * (canvas.height - 50);
  ctx.strokeStyle = "#bbb";
  for (const hop of runs[0].hops) {
    ctx.beginPath();
    ctx.moveTo(x(hop - 0.5), 10);
    ctx.lineTo(x(hop - 0.5), canvas.height - 25);
    ctx.stroke();
  }
  runs.forEach((run, k) => {
    ctx.strokeStyle = ["#c0392b", "#2c3e50"][k];
    ctx.beginPath();
    run.loss.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(run.label, 50, canvas.height - 8 - 14 * (1 - k));
  });
  ctx.fillStyle = "#222";
  ctx.fillText(`loss ${max.toFixed(3)}`, 2, 14);
  ctx.fillText(min.toFixed(3), 2, canvas.height - 30);
}

function runTraining() {
  $("tr-result").textContent = "training...";
  // Let the message paint before the synchronous run blocks the page.
  setTimeout(() => {
    const out = JSON.parse(simulateTraining(BigInt(num("tr-seed")), num("tr-n"), num("tr-stations"), num("tr-epochs")));
    const runs = [out.iil, out.centralized];
    plot(runs);
    $("tr-result").textContent = runs
      .map((r) => `${r.label}: mean accuracy ${(100 * r.mean_accuracy).toFixed(2)}%, mean recall ${(100 * r.mean_recall).toFixed(2)}%`)
      .join("; ");
  }, 20);
}

function guarded(fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      $("status").textContent = `error: ${e.message ?? e}`;
    }
  };
}

await init();
$("status").textContent = "ready";
$("pv-run").onclick = guarded(renderPreview);
$("pt-run").onclick = guarded(renderPartition);
$("tr-run").onclick = guarded(runTraining);
guarded(renderPreview)();
guarded(renderPartition)();
