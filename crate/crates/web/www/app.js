import init, { scoreText, simulateEpisode, fitMixture } from "./pkg/affectflow_web.js";

const $ = (id) => document.getElementById(id);

const SIM_FIELDS = [
  ["subjects", 2000, 1],
  ["noise_sigma", 0.05, 0.01],
  ["baseline", 0.14, 0.01],
  ["rise_amplitude", 0.043, 0.001],
  ["rise_rate", 0.183, 0.001],
  ["decay_amplitude", 0.042, 0.001],
  ["decay_rate", -0.057, 0.001],
  ["onset", -38, 1],
  ["end", 53, 1],
  ["seed", 7, 1],
];

function lineChart(series, { xmin, xmax, span } = {}) {
  const W = 900, H = 320, M = 40;
  const pts = series.flatMap((s) => s.x.map((x, i) => [x, s.y[i]]))
    .filter(([x, y]) => y !== null && Number.isFinite(y) && (xmin === undefined || x >= xmin) && (xmax === undefined || x <= xmax));
  if (!pts.length) return "<p class='muted'>nothing to plot</p>";
  const x0 = xmin ?? Math.min(...pts.map((p) => p[0])), x1 = xmax ?? Math.max(...pts.map((p) => p[0]));
  let y0 = Math.min(...pts.map((p) => p[1])), y1 = Math.max(...pts.map((p) => p[1]));
  const pad = (y1 - y0 || 1) * 0.05; y0 -= pad; y1 += pad;
  const sx = (x) => M + ((x - x0) / (x1 - x0)) * (W - 2 * M);
  const sy = (y) => H - M - ((y - y0) / (y1 - y0)) * (H - 2 * M);
  let svg = `<svg viewBox="0 0 ${W} ${H}" font-size="12">`;
  if (span) svg += `<rect x="${sx(span[0])}" y="${M}" width="${sx(span[1]) - sx(span[0])}" height="${H - 2 * M}" fill="#f2d98c" opacity=".5"/>`;
  svg += `<path d="M${M},${M}V${H - M}H${W - M}" fill="none" stroke="#000"/>`;
  svg += `<text x="${M}" y="${H - M + 16}">${x0}</text><text x="${W - M}" y="${H - M + 16}" text-anchor="end">${x1}</text>`;
  svg += `<text x="${M - 4}" y="${sy(y1) + 4}" text-anchor="end">${y1.toFixed(3)}</text><text x="${M - 4}" y="${sy(y0)}" text-anchor="end">${y0.toFixed(3)}</text>`;
  series.forEach((s, k) => {
    let d = "", up = true;
    s.x.forEach((x, i) => {
      const y = s.y[i];
      if (y === null || !Number.isFinite(y) || x < x0 || x > x1) { up = true; return; }
      d += `${up ? "M" : "L"}${sx(x).toFixed(1)},${sy(y).toFixed(1)}`;
      up = false;
    });
    svg += `<path d="${d}" fill="none" stroke="${s.color}" stroke-width="${s.width ?? 1.5}" ${s.dash ? `stroke-dasharray="${s.dash}"` : ""}/>`;
    svg += `<text x="${W - M}" y="${M + 14 * k}" text-anchor="end" fill="${s.color}">${s.label}</text>`;
  });
  return svg + "</svg>";
}

function showError(el, e) {
  el.innerHTML = `<span class="error">${e.message ?? e}</span>`;
}

function runScore() {
  $("score-out").textContent = JSON.stringify(JSON.parse(scoreText($("text").value)), null, 2);
}

function runSimulation() {
  const req = {};
  for (const [name] of SIM_FIELDS) req[name] = Number($(`sim-${name}`).value);
  $("sim-status").textContent = "running...";
  // Let the status text paint before the synchronous work starts.
  setTimeout(() => {
    try {
      const t = performance.now();
      const r = JSON.parse(simulateEpisode(JSON.stringify(req)));
      $("sim-status").textContent = `done in ${Math.round(performance.now() - t)} ms`;
      const colors = ["#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
      const series = [
        { label: "smoothed mean", x: r.offsets, y: r.smoothed, color: "#1f77b4" },
        { label: "null", x: r.offsets, y: r.null, color: "#999" },
        { label: "planted", x: r.offsets, y: r.expected, color: "#000", dash: "4 3", width: 1 },
        ...r.fits.map((f, i) => ({ label: f.model, x: r.offsets, y: f.curve, color: colors[i % 4], width: 1 })),
      ];
      $("sim-plot").innerHTML = lineChart(series, { xmin: -120, xmax: 150, span: r.span });
      $("sim-out").textContent = [
        `CUSUM span: ${r.span ? `[${r.span[0]}, ${r.span[1]}]` : "none"}   (planted [${req.onset}, ${req.end}])`,
        `median-excursion span: ${r.median_span ? `[${r.median_span[0]}, ${r.median_span[1]}]` : "none"}`,
        `half-life of decay: ${r.half_life ? r.half_life.toFixed(2) + " min" : "n/a"}`,
        "models by SSE:",
        ...r.fits.map((f, i) => `  ${i + 1}. ${f.model}  ${f.sse.toExponential(3)}`),
        ...r.warnings.map((w) => `warning: ${w}`),
      ].join("\n");
    } catch (e) {
      $("sim-status").textContent = "";
      showError($("sim-out"), e);
    }
  }, 20);
}

function runMixture() {
  try {
    const r = JSON.parse(fitMixture($("values").value, Number($("kmax").value), 1n));
    $("gmm-plot").innerHTML = lineChart([{ label: `density, k = ${r.k}`, x: r.grid, y: r.density, color: "#1f77b4" }]);
    $("gmm-out").textContent = [
      `k by AIC: ${r.k_aic}, by BIC: ${r.k_bic}, chosen: ${r.k}`,
      ...r.components.map(([w, mu, s]) => `  weight ${w.toFixed(3)}  mean ${mu.toFixed(3)}  sd ${s.toFixed(3)}`),
    ].join("\n");
  } catch (e) {
    $("gmm-plot").innerHTML = "";
    showError($("gmm-out"), e);
  }
}

await init();
$("sim-params").innerHTML = SIM_FIELDS.map(
  ([name, value, step]) => `<label>${name} <input id="sim-${name}" type="number" value="${value}" step="${step}"></label>`,
).join("");
$("score").onclick = runScore;
$("text").onkeydown = (e) => e.key === "Enter" && runScore();
$("simulate").onclick = runSimulation;
$("fit").onclick = runMixture;
runScore();
