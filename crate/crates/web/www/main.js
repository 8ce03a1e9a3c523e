import init, { WorldDemo, soil_curve, osc_encode } from "./pkg/plantbot_web.js";

await init();

const $ = (id) => document.getElementById(id);

// --- world ---
const world = $("world");
const wctx = world.getContext("2d");
let demo;
let timer = null;

function reset() {
  demo = new WorldDemo(Number($("seed").value) >>> 0);
  demo.set_reflex($("reflex").checked);
  drawWorld(JSON.parse(demo.state()));
}

function toCanvas(s, x, y) {
  const scale = world.width / (2 * s.arena);
  return [(x + s.arena) * scale, (s.arena - y) * scale, scale];
}

function drawWorld(s) {
  wctx.clearRect(0, 0, world.width, world.height);
  const [px, py, scale] = toCanvas(s, s.pose.x, s.pose.y);
  wctx.strokeStyle = "rgba(60,120,200,0.25)";
  for (const [angle, range] of s.rays) {
    const [ex, ey] = toCanvas(s, s.pose.x + range * Math.cos(angle), s.pose.y + range * Math.sin(angle));
    wctx.beginPath(); wctx.moveTo(px, py); wctx.lineTo(ex, ey); wctx.stroke();
  }
  wctx.fillStyle = "#8a6d4b";
  for (const o of s.obstacles) {
    const [ox, oy] = toCanvas(s, o.x, o.y);
    wctx.beginPath(); wctx.arc(ox, oy, o.r * scale, 0, 2 * Math.PI); wctx.fill();
  }
  wctx.strokeStyle = "#3c7a3c";
  wctx.beginPath();
  s.trail.forEach(([x, y], i) => {
    const [tx, ty] = toCanvas(s, x, y);
    i ? wctx.lineTo(tx, ty) : wctx.moveTo(tx, ty);
  });
  wctx.stroke();
  wctx.strokeStyle = s.engaged ? "#c0392b" : "#999";
  wctx.beginPath(); wctx.arc(px, py, s.d_safe * scale, 0, 2 * Math.PI); wctx.stroke();
  wctx.fillStyle = "#2e7d32";
  wctx.beginPath(); wctx.arc(px, py, 6, 0, 2 * Math.PI); wctx.fill();
  wctx.beginPath(); wctx.moveTo(px, py);
  wctx.lineTo(px + 14 * Math.cos(s.pose.heading), py - 14 * Math.sin(s.pose.heading)); wctx.stroke();
  $("world-stats").textContent =
    `t=${s.time_s.toFixed(1)}s  clearance=${s.clearance.toFixed(3)}m  min=${s.min_clearance.toFixed(3)}m  ` +
    `engagements=${s.engagements}  collisions=${s.collisions}`;
}

$("reset").onclick = reset;
$("seed").onchange = reset;
$("reflex").onchange = () => demo.set_reflex($("reflex").checked);
$("run").onclick = () => {
  if (timer) { clearInterval(timer); timer = null; $("run").textContent = "run"; return; }
  timer = setInterval(() => drawWorld(JSON.parse(demo.step(1))), 100);
  $("run").textContent = "pause";
};
world.onclick = (e) => {
  const s = JSON.parse(demo.state());
  const scale = world.width / (2 * s.arena);
  const r = world.getBoundingClientRect();
  demo.add_obstacle((e.clientX - r.left) / scale - s.arena, s.arena - (e.clientY - r.top) / scale, 0.25);
  drawWorld(JSON.parse(demo.state()));
};
reset();

// --- soil ---
const soil = $("soil");
const sctx = soil.getContext("2d");

function drawSoil() {
  const pts = JSON.parse(soil_curve(
    Number($("m0").value), Number($("decay").value), Number($("minutes").value) >>> 0,
    Number($("water-at").value), Number($("liters").value)));
  const maxT = pts[pts.length - 1][0] || 1;
  const maxM = Math.max(40, ...pts.map((p) => p[1])) * 1.1;
  const X = (t) => 40 + (t / maxT) * (soil.width - 50);
  const Y = (m) => soil.height - 20 - (m / maxM) * (soil.height - 30);
  sctx.clearRect(0, 0, soil.width, soil.height);
  sctx.fillStyle = "#666";
  sctx.fillText("0", 28, Y(0));
  sctx.fillText(maxM.toFixed(0) + "%", 4, Y(maxM) + 10);
  sctx.fillText(maxT + " min", soil.width - 45, soil.height - 4);
  sctx.strokeStyle = "#c0392b";
  sctx.setLineDash([4, 4]);
  sctx.beginPath(); sctx.moveTo(X(0), Y(30)); sctx.lineTo(X(maxT), Y(30)); sctx.stroke();
  sctx.setLineDash([]);
  sctx.fillText("dry", X(maxT) - 20, Y(30) - 4);
  sctx.strokeStyle = "#2b6cb0";
  sctx.beginPath();
  pts.forEach(([t, m], i) => (i ? sctx.lineTo(X(t), Y(m)) : sctx.moveTo(X(t), Y(m))));
  sctx.stroke();
}
for (const id of ["m0", "decay", "minutes", "water-at", "liters"]) $(id).oninput = drawSoil;
drawSoil();

// --- osc ---
function encode() {
  try {
    $("hex").textContent = osc_encode($("addr").value, $("text").value);
  } catch (e) {
    $("hex").textContent = "error: " + (e.message || e);
  }
}
$("addr").oninput = encode;
$("text").oninput = encode;
encode();
