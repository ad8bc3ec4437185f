import init, { cost_curve, penetration_curve, frequency_envelope } from './pkg/gridmss_web.js';

const $ = (id) => document.getElementById(id);

function plot(canvas, series, { xlabel, ylabel, logy = false }) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  const pad = { l: 70, r: 15, t: 15, b: 40 };
  ctx.clearRect(0, 0, w, h);
  const ty = logy ? Math.log10 : (v) => v;
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y.filter(Number.isFinite).map(ty));
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const px = (x) => pad.l + ((x - x0) / (x1 - x0 || 1)) * (w - pad.l - pad.r);
  const py = (y) => h - pad.b - ((ty(y) - y0) / (y1 - y0)) * (h - pad.t - pad.b);

  ctx.strokeStyle = '#999';
  ctx.strokeRect(pad.l, pad.t, w - pad.l - pad.r, h - pad.t - pad.b);
  ctx.fillStyle = '#333';
  ctx.font = '12px system-ui';
  ctx.fillText(xlabel, w / 2, h - 8);
  ctx.fillText(x0.toPrecision(3), pad.l, h - pad.b + 15);
  ctx.fillText(x1.toPrecision(3), w - pad.r - 40, h - pad.b + 15);
  const fmt = (v) => (logy ? (10 ** v).toExponential(2) : v.toPrecision(3));
  ctx.fillText(fmt(y1), 4, pad.t + 10);
  ctx.fillText(fmt(y0), 4, h - pad.b);
  ctx.save();
  ctx.translate(14, h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width ?? 2;
    ctx.beginPath();
    s.x.forEach((x, i) => {
      const y = s.y[i];
      if (!Number.isFinite(y)) return;
      i === 0 ? ctx.moveTo(px(x), py(y)) : ctx.lineTo(px(x), py(y));
    });
    ctx.stroke();
    if (s.dots) {
      ctx.fillStyle = s.color;
      s.x.forEach((x, i) => ctx.fillRect(px(x) - 3, py(s.y[i]) - 3, 6, 6));
    }
  }
}

function guard(f) {
  try {
    $('error').textContent = '';
    f();
  } catch (e) {
    $('error').textContent = String(e.message ?? e);
  }
}

function drawCost() {
  const top = Number($('alpha-max').value);
  $('alpha-max-out').textContent = top;
  const alphas = Array.from({ length: 24 }, (_, i) => 0.1 * (top / 0.1) ** (i / 23));
  const sig = cost_curve(new Float64Array(alphas));
  plot($('cost'), [{ x: alphas, y: Array.from(sig), color: '#1f5fa8', dots: true }], {
    xlabel: 'α (cost coefficient 1/α)',
    ylabel: 'σ*²',
    logy: true,
  });
}

function drawFrequency() {
  const ratio = Number($('ratio').value);
  const paths = Number($('paths').value);
  const seed = Number($('seed').value);
  const t0 = performance.now();
  const out = frequency_envelope(ratio, paths, 15, seed);
  const n = out[1];
  const slice = (k) => Array.from(out.subarray(2 + k * n, 2 + (k + 1) * n));
  const t = slice(0);
  plot($('freq'), [
    { x: t, y: slice(2), color: '#bbb', width: 1 },
    { x: t, y: slice(3), color: '#bbb', width: 1 },
    { x: t, y: slice(1), color: '#c0392b' },
  ], { xlabel: 'time (s)', ylabel: 'ω₁ (rad/s)' });
  $('sim-info').textContent =
    `σ*² = ${out[0].toExponential(3)}, σ² = ${(ratio * out[0]).toExponential(3)}, ${((performance.now() - t0) / 1000).toFixed(1)} s`;
}

function drawPenetration() {
  const sig = Array.from(penetration_curve());
  const s = sig.map((_, i) => i + 1);
  plot($('pen-plot'), [{ x: s, y: sig, color: '#27ae60', dots: true }], {
    xlabel: 'number of noisy lines s',
    ylabel: 'σ*²',
  });
}

await init();
$('alpha-max').addEventListener('input', () => guard(drawCost));
$('ratio').addEventListener('input', () => ($('ratio-out').textContent = $('ratio').value));
$('run').addEventListener('click', () => guard(drawFrequency));
$('pen').addEventListener('click', () => guard(drawPenetration));
guard(drawCost);
