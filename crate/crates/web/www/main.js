import init, { Demo } from './pkg/treefit_web.js';

const $ = (id) => document.getElementById(id);
const out = $('out');
let demo = null;

function drawSkeleton(ctx, pixels, parents, color) {
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 2;
  for (let i = 1; i < parents.length; i++) {
    const p = parents[i];
    ctx.beginPath();
    ctx.moveTo(pixels[2 * p], pixels[2 * p + 1]);
    ctx.lineTo(pixels[2 * i], pixels[2 * i + 1]);
    ctx.stroke();
  }
  for (let i = 0; i < parents.length; i++) {
    ctx.beginPath();
    ctx.arc(pixels[2 * i], pixels[2 * i + 1], 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function draw() {
  const canvas = $('view');
  const ctx = canvas.getContext('2d');
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!demo) return;
  const parents = demo.parents();
  drawSkeleton(ctx, demo.joint_pixels(true), parents, '#999');
  drawSkeleton(ctx, demo.joint_pixels(false), parents, '#2563eb');
}

// Objective per iteration on a log scale.
function drawTrace(trace) {
  const canvas = $('trace');
  const ctx = canvas.getContext('2d');
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const logs = trace.map((v) => Math.log10(Math.max(v, 1e-30)));
  const hi = Math.max(...logs), lo = Math.min(...logs);
  const pad = 30, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const x = (i) => pad + (logs.length > 1 ? (i * w) / (logs.length - 1) : 0);
  const y = (v) => pad + (hi > lo ? ((hi - v) * h) / (hi - lo) : h / 2);
  ctx.fillStyle = '#333';
  ctx.fillText(`1e${hi.toFixed(0)}`, 2, pad);
  ctx.fillText(`1e${lo.toFixed(0)}`, 2, pad + h);
  ctx.fillText('objective per iteration', pad, 15);
  ctx.strokeStyle = '#2563eb';
  ctx.beginPath();
  logs.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
}

function report(text) {
  out.textContent = text;
}

function generate() {
  try {
    demo?.free();
    demo = new Demo($('topology').value, +$('joints').value, +$('shape').value, +$('meas').value, +$('noise').value, +$('seed').value);
    $('joint').max = demo.joints;
    report(`${demo.joints} joints. Pose a joint, fit, or compare the two solvers.`);
  } catch (e) {
    demo = null;
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

function pose() {
  if (!demo) return;
  try {
    demo.set_joint(+$('joint').value, +$('rx').value, +$('ry').value, +$('rz').value);
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

function fit() {
  if (!demo) return;
  try {
    const r = JSON.parse(demo.fit($('solver').value, +$('iters').value));
    drawTrace(r.objective_trace);
    report(
      `${r.solver}: ${r.iterations} iterations, ${r.termination}, ${(r.total_time_us / 1000).toFixed(1)} ms\n` +
        `final objective ${r.objective_trace.at(-1).toExponential(3)}, mean keypoint error ${r.mean_keypoint_error.toExponential(2)}`,
    );
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

function compare() {
  if (!demo) return;
  try {
    const c = JSON.parse(demo.compare(+$('repeats').value));
    report(
      `${c.unknowns} unknowns\n` +
        `dense  ${(c.dense_us / 1000).toFixed(2)} ms per direction\n` +
        `sparse ${(c.sparse_us / 1000).toFixed(2)} ms per direction (${c.speedup.toFixed(1)}x faster)\n` +
        `largest relative difference between the directions ${c.relative_difference.toExponential(2)}`,
    );
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
}

await init();
$('generate').onclick = generate;
$('jitter').onclick = () => {
  demo?.jitter(0.3, Math.floor(Math.random() * 1e9));
  draw();
};
for (const id of ['rx', 'ry', 'rz']) $(id).oninput = pose;
$('fit').onclick = fit;
$('compare').onclick = compare;
generate();
