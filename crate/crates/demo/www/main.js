import init, { compound_filter, operation_counts, parameter_counts, variants } from "./pkg/tcnn_demo.js";

const $ = (id) => document.getElementById(id);
const W = 64, H = 64;
let pixels = new Float32Array(W * H);

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function pattern(kind) {
  const out = new Float32Array(W * H);
  if (kind === "digits") {
    const c = document.createElement("canvas");
    c.width = W; c.height = H;
    const g = c.getContext("2d");
    g.fillStyle = "#000"; g.fillRect(0, 0, W, H);
    g.fillStyle = "#fff"; g.font = "bold 30px sans-serif"; g.textBaseline = "middle";
    g.fillText("42", 8, H / 2);
    const d = g.getImageData(0, 0, W, H).data;
    for (let i = 0; i < W * H; i++) out[i] = d[4 * i] / 255;
  } else if (kind === "noise") {
    let s = 7;
    for (let i = 0; i < W * H; i++) {
      s = (s * 1103515245 + 12345) >>> 0;
      out[i] = (s >>> 16) % 100 < 8 ? 1 : 0.2;
    }
  } else {
    for (let y = 0; y < H; y++)
      for (let x = 0; x < W; x++) {
        const r = Math.hypot(x - W / 2, y - H / 2);
        out[y * W + x] = 0.5 + 0.5 * Math.cos(r / 2.2);
      }
  }
  return out;
}

function draw(canvas, values) {
  const g = canvas.getContext("2d");
  const img = g.createImageData(W, H);
  for (let i = 0; i < W * H; i++) {
    const v = Math.max(0, Math.min(255, Math.round(values[i] * 255)));
    img.data.set([v, v, v, 255], 4 * i);
  }
  g.putImageData(img, 0, 0);
}

function filter() {
  for (const id of ["size", "alpha", "beta"]) $(id + "-v").textContent = $(id).value;
  try {
    const out = compound_filter(pixels, W, H, +$("size").value, +$("alpha").value, +$("beta").value);
    draw($("src"), pixels);
    draw($("dst"), out);
    showError();
  } catch (e) {
    showError(e);
  }
}

function loadUpload(file) {
  const img = new Image();
  img.onload = () => {
    const c = document.createElement("canvas");
    c.width = W; c.height = H;
    const g = c.getContext("2d");
    g.drawImage(img, 0, 0, W, H);
    const d = g.getImageData(0, 0, W, H).data;
    for (let i = 0; i < W * H; i++) pixels[i] = (0.299 * d[4 * i] + 0.587 * d[4 * i + 1] + 0.114 * d[4 * i + 2]) / 255;
    filter();
  };
  img.src = URL.createObjectURL(file);
}

function table(el, head, rows) {
  const cells = (tag, r) => "<tr>" + r.map((c) => `<${tag}>${c}</${tag}>`).join("") + "</tr>";
  el.innerHTML = cells("th", head) + rows.map((r) => cells("td", r)).join("");
}

const fmt = (n) => Number(n).toLocaleString("en-US", { maximumFractionDigits: 0 });

function preset() {
  const [shape, classes] = $("preset").value.split("|");
  return { shape, classes: +classes };
}

function counts() {
  $("theta-v").textContent = $("theta").value;
  const { shape, classes } = preset();
  try {
    const r = JSON.parse(operation_counts($("variant").value, shape, classes, +$("theta").value, $("exact").checked));
    const rows = r.layers.map((l) => [l.index, l.kind, fmt(l.ops.mults), fmt(l.ops.adds), fmt(l.ops.comparisons), fmt(l.omega_u)]);
    rows.push(["", "<b>total</b>", fmt(r.total.mults), fmt(r.total.adds), fmt(r.total.comparisons), `<b>${fmt(r.omega_u)}</b>`]);
    table($("ops"), ["#", "layer", "mults", "adds", "comparisons", "Ωu"], rows);
    showError();
  } catch (e) {
    showError(e);
  }
}

function params(roster) {
  const { shape, classes } = preset();
  try {
    const counts = new Map(JSON.parse(parameter_counts(shape, classes)).map((r) => [r.key, r.parameters]));
    table($("params"), ["variant", "description", "parameters"], roster.map((v) => [v.key, v.description, fmt(counts.get(v.key))]));
    showError();
  } catch (e) {
    showError(e);
  }
}

async function main() {
  await init();
  const roster = JSON.parse(variants());
  $("variant").innerHTML = roster.map((v) => `<option value="${v.key}">${v.key}</option>`).join("");
  $("variant").value = "C_ab";

  pixels = pattern($("pattern").value);
  $("pattern").onchange = () => { pixels = pattern($("pattern").value); filter(); };
  $("upload").onchange = (e) => e.target.files[0] && loadUpload(e.target.files[0]);
  for (const id of ["size", "alpha", "beta"]) $(id).oninput = filter;
  for (const id of ["variant", "theta", "exact"]) $(id).oninput = counts;
  $("preset").onchange = () => { counts(); params(roster); };

  filter();
  counts();
  params(roster);
}

main().catch(showError);
