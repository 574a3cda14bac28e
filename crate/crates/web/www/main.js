import init, { sample, mine, label, decode } from "./pkg/termine_web.js";

const $ = (id) => document.getElementById(id);
let mined = null;

function guarded(errorId, f) {
  return () => {
    $(errorId).textContent = "";
    try {
      f();
    } catch (e) {
      $(errorId).textContent = String(e);
    }
  };
}

function listRules(part) {
  const lines = part.rules.map((r) => `${r.precision.toFixed(2)}  ${String(r.support).padStart(4)}  ${r.pattern}`);
  return `${part.rules.length} of ${part.candidates.length} candidates kept, ` +
    `${part.dictionary.length} dictionary terms\nprec  supp  pattern\n` + lines.join("\n");
}

function loadSample() {
  const s = JSON.parse(sample(Number($("seed").value) || 0));
  $("conllu").value = s.conllu;
  $("annotations").value = s.annotations;
  $("vocabulary").value = s.vocabulary;
  $("unlabeled").value = s.unlabeled;
}

function runMine() {
  mined = null;
  const out = JSON.parse(mine(
    $("conllu").value,
    $("annotations").value,
    $("vocabulary").value,
    Number($("threshold").value),
    Number($("precision").value),
  ));
  mined = out;
  $("aspect-rules").textContent = listRules(out.aspect);
  $("opinion-rules").textContent = listRules(out.opinion);
}

function runLabel() {
  if (!mined) throw new Error("mine rules first");
  $("bio").textContent = label($("unlabeled").value, mined.aspect.ruleset, mined.opinion.ruleset);
}

function runDecode() {
  const out = JSON.parse(decode($("emissions").value, $("transitions").value));
  const names = $("labels").value.trim().split(/\s+/);
  const name = (j) => names[j] ?? String(j);
  const k = out.marginals[0].length;
  let html = `<p>Best path: <b>${out.path.map(name).join(" ")}</b>, score ${out.score.toFixed(4)}, ` +
    `log Z ${out.log_partition.toFixed(4)}, probability ${out.probability.toFixed(4)}</p>`;
  html += "<table><tr><th>step</th>";
  for (let j = 0; j < k; j++) html += `<th>P(${name(j)})</th>`;
  html += "</tr>";
  out.marginals.forEach((row, t) => {
    html += `<tr><td>${t}</td>`;
    row.forEach((p, j) => {
      html += `<td class="${out.path[t] === j ? "best" : ""}">${p.toFixed(4)}</td>`;
    });
    html += "</tr>";
  });
  $("decode-out").innerHTML = html + "</table>";
}

await init();
$("load-sample").onclick = guarded("mine-error", loadSample);
$("mine").onclick = guarded("mine-error", runMine);
$("label").onclick = guarded("label-error", runLabel);
$("decode").onclick = guarded("decode-error", runDecode);
loadSample();
