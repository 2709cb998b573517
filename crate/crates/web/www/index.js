import init, { mallows_explorer, chain_explorer, market_compare } from "../pkg/menunet_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x, d = 4) => Number(x).toFixed(d);
const bar = (x, scale, alt = false) =>
  `<span class="bar${alt ? " alt" : ""}" style="width:${Math.max(0, x * scale).toFixed(1)}px"></span>`;

function call(fn, target) {
  const out = JSON.parse(fn());
  if (out.error) {
    $(target).innerHTML = `<p class="error">${out.error}</p>`;
    return null;
  }
  return out;
}

function runMallows() {
  const r = call(() => mallows_explorer(num("mal-m"), num("mal-phi"), num("mal-draws"), num("mal-seed")), "mal-out");
  if (!r) return;
  const rows = r.by_distance
    .map((d) => `<tr><td>${d.distance}</td><td>${d.permutations}</td><td>${fmt(d.exact)}</td>` +
      `<td>${fmt(d.empirical)}</td><td style="text-align:left">${bar(d.exact, 300)}<br>${bar(d.empirical, 300, true)}</td></tr>`)
    .join("");
  const tv = 0.5 * r.by_distance.reduce((s, d) => s + Math.abs(d.exact - d.empirical), 0);
  $("mal-out").innerHTML =
    `<table><tr><th>distance</th><th>#perms</th><th>exact</th><th>sampled</th><th></th></tr>${rows}</table>` +
    `<p>Z(φ) = ${fmt(r.partition)}; distance-level TV = ${fmt(tv, 5)}</p>` +
    `<p>first samples: ${r.examples.map((e) => e.join("")).join(" ")}</p>`;
}

function parseList(id) {
  return $(id).value.split(",").map((s) => Number(s.trim())).filter((x) => !Number.isNaN(x));
}

function runChain() {
  const menu = [1, ...parseList("ch-menu")];
  const util = [0, ...parseList("ch-util")];
  const r = call(() => chain_explorer(new Float64Array(menu), new Float64Array(util)), "ch-out");
  if (!r) return;
  const probs = r.probabilities
    .map((p, c) => `<tr><td>${c === 0 ? "outside" : "school " + c}</td><td>${fmt(p)}</td><td style="text-align:left">${bar(p, 300)}</td></tr>`)
    .join("");
  const swaps = r.swaps
    .map((s) => `<tr><td>${s.order.join(" > ")}</td><td>${fmt(s.expected_utility)}</td><td>${fmt(s.loss, 6)}</td></tr>`)
    .join("");
  $("ch-out").innerHTML =
    `<p>truthful order ${r.order.join(" > ")}, expected utility ${fmt(r.expected_utility)}</p>` +
    `<table><tr><th>outcome</th><th>probability</th><th></th></tr>${probs}</table>` +
    `<h3>adjacent swaps</h3><table><tr><th>reported order</th><th>expected utility</th><th>utility lost</th></tr>${swaps}</table>`;
}

async function runMarket() {
  const file = $("mk-model").files[0];
  const checkpoint = file ? await file.text() : "";
  const r = call(() => market_compare(num("mk-n"), num("mk-m"), num("mk-seed"), num("mk-draws"), checkpoint), "mk-out");
  if (!r) return;
  const rows = r.mechanisms
    .map((x) => `<tr><td>${x.mechanism}</td><td>${fmt(x.envy)}</td><td>${fmt(x.waste)}</td>` +
      `<td>${fmt(x.welfare)}</td><td>${fmt(x.overflow, 2)}</td></tr>`)
    .join("");
  const loads = r.capacities
    .map((q, c) => `<tr><td>${c + 1}</td><td>${q}</td>${r.mechanisms.map((x) => `<td>${fmt(x.loads[c], 2)}</td>`).join("")}</tr>`)
    .join("");
  $("mk-out").innerHTML =
    `<p>slack K = ${fmt(r.slack, 2)}</p>` +
    `<table><tr><th></th><th>envy</th><th>waste</th><th>welfare</th><th>overflow Ω</th></tr>${rows}</table>` +
    `<h3>expected load per school</h3><table><tr><th>school</th><th>capacity</th>` +
    `${r.mechanisms.map((x) => `<th>${x.mechanism}</th>`).join("")}</tr>${loads}</table>`;
}

await init();
$("mal-run").onclick = runMallows;
$("ch-run").onclick = runChain;
$("mk-run").onclick = runMarket;
runMallows();
runChain();
