import init, { compare, sweep, tamper } from "./pkg/scue_web.js";

const $ = (id) => document.getElementById(id);

function workload() {
  return [$("workload").value, Number($("ops").value), BigInt($("seed").value)];
}

function guarded(out, f) {
  try {
    f();
  } catch (e) {
    $(out).innerHTML = `<p class="bad">${e}</p>`;
  }
}

function fmt(x) {
  return typeof x === "number" && !Number.isInteger(x) ? x.toFixed(3) : x;
}

function renderCompare(doc) {
  const cols = [
    ["avg_write_latency_cycles", "report"],
    ["avg_read_latency_cycles", "report"],
    ["total_cycles", "report"],
    ["norm_write_latency", "normalized"],
    ["norm_total_cycles", "normalized"],
  ];
  const head = cols.map(([c]) => `<th>${c}</th>`).join("");
  const rows = doc.rows
    .map((r) => {
      const cells = cols.map(([c, part]) => `<td>${fmt(r[part][c] ?? "")}</td>`).join("");
      return `<tr><td>${r.report.scheme}</td>${cells}</tr>`;
    })
    .join("");
  return `<p>${doc.workload}, ${doc.ops} ops</p><table><tr><th>scheme</th>${head}</tr>${rows}</table>`;
}

function renderSweep(doc) {
  const s = doc.summary;
  const cls = doc.all_clean ? "good" : "bad";
  const fails = s.failures.slice(0, 20).map(([p, st]) => `event ${p}: ${JSON.stringify(st)}`).join("\n");
  return `<p class="${cls}">${doc.scheme}: ${s.clean} of ${s.points} crash points recovered cleanly</p>` +
    (fails ? `<pre>${fails}</pre>` : "");
}

function renderTamper(doc) {
  const cls = doc.clean ? "good" : "bad";
  return `<p class="${cls}">tamper ${doc.tamper ?? "none"}: ${JSON.stringify(doc.status)}` +
    ` (osiris increments ${doc.osiris_increments})</p>`;
}

await init();

$("run-compare").onclick = () =>
  guarded("compare-out", () => ($("compare-out").innerHTML = renderCompare(JSON.parse(compare(...workload())))));

$("run-sweep").onclick = () =>
  guarded("sweep-out", () =>
    ($("sweep-out").innerHTML = renderSweep(JSON.parse(sweep(...workload(), $("sweep-scheme").value)))));

$("run-tamper").onclick = () =>
  guarded("tamper-out", () =>
    ($("tamper-out").innerHTML = renderTamper(
      JSON.parse(tamper(...workload(), BigInt($("crash-at").value), $("tamper-mode").value)),
    )));
