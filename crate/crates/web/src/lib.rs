//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every exported function returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use menunet::autodiff::Checkpoint;
use menunet::baselines::{run_baseline, Mechanism};
use menunet::evaluation::{MetricRow, MENUNET};
use menunet::losses::LossWeights;
use menunet::market::{
    generate_instance, kendall_tau, mallows_partition, rim_sample, GenerationConfig, MallowsConfig,
};
use menunet::mechanism::{assign, expected_utility, generate_menus, survival_chain, MenuNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

const MAX_DRAWS: usize = 200_000;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Empirical vs exact Mallows probabilities, grouped by Kendall distance
/// from the reference ranking.
pub fn mallows(m: usize, phi: f64, draws: usize, seed: u64) -> Result<Value, String> {
    if !(1..=12).contains(&m) {
        return Err("m must be between 1 and 12".into());
    }
    if draws == 0 || draws > MAX_DRAWS {
        return Err(format!("draws must be between 1 and {MAX_DRAWS}"));
    }
    let config = MallowsConfig::identity(m, phi);
    config.validate().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference: Vec<usize> = (0..m).collect();
    let max_d = m * (m.saturating_sub(1)) / 2;
    let mut hits = vec![0usize; max_d + 1];
    let mut examples = Vec::new();
    for i in 0..draws {
        let r = rim_sample(&config, &mut rng).map_err(|e| e.to_string())?;
        hits[kendall_tau(&r, &reference).map_err(|e| e.to_string())? as usize] += 1;
        if i < 8 {
            examples.push(r);
        }
    }
    // number of permutations at each distance (Mahonian numbers)
    let mut counts = vec![1u64];
    for i in 1..m {
        let mut next = vec![0u64; counts.len() + i];
        for (d, c) in counts.iter().enumerate() {
            for k in 0..=i {
                next[d + k] += c;
            }
        }
        counts = next;
    }
    let z = mallows_partition(phi, m);
    let rows: Vec<Value> = (0..=max_d)
        .map(|d| {
            json!({
                "distance": d,
                "permutations": counts.get(d).copied().unwrap_or(0),
                "exact": counts.get(d).copied().unwrap_or(0) as f64 * phi.powi(d as i32) / z,
                "empirical": hits[d] as f64 / draws as f64,
            })
        })
        .collect();
    Ok(
        json!({ "m": m, "phi": phi, "draws": draws, "partition": z, "by_distance": rows, "examples": examples }),
    )
}

/// Assignment probabilities of one student walking down `utilities` (index
/// 0 is the outside option) against `menu`, plus the effect of swapping
/// each adjacent pair of the truthful order.
pub fn chain(menu: &[f64], utilities: &[f64]) -> Result<Value, String> {
    if menu.len() != utilities.len() || menu.len() < 2 {
        return Err(
            "menu and utilities need the same length, at least 2 (outside option first)".into(),
        );
    }
    if menu[1..].iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err("menu probabilities must lie in [0, 1]".into());
    }
    let mut row = menu.to_vec();
    row[0] = 1.0;
    let order = menunet::market::preference_order(utilities);
    let probs = survival_chain(&row, &order);
    let truthful = expected_utility(&row, utilities, &order);
    let swaps: Vec<Value> = (0..order.len().saturating_sub(1))
        .map(|j| {
            let mut lie = order.clone();
            lie.swap(j, j + 1);
            let value = expected_utility(&row, utilities, &lie);
            json!({ "position": j, "order": lie, "expected_utility": value, "loss": truthful - value })
        })
        .collect();
    Ok(
        json!({ "order": order, "probabilities": probs, "expected_utility": truthful, "swaps": swaps }),
    )
}

fn row_json(r: &MetricRow, loads: &[f64]) -> Value {
    json!({
        "mechanism": r.mechanism,
        "envy": r.envy_mean,
        "envy_max": r.envy_max,
        "waste": r.waste_mean,
        "waste_max": r.waste_max,
        "welfare": r.welfare,
        "overflow": r.overflow,
        "loads": loads,
    })
}

/// One sampled market under RSD, DA with slack and, when a checkpoint is
/// supplied, a trained menu network.
pub fn market(
    n: usize,
    m: usize,
    seed: u64,
    draws: usize,
    checkpoint: &str,
) -> Result<Value, String> {
    if !(2..=200).contains(&n) || !(1..=20).contains(&m) {
        return Err("need 2 ≤ n ≤ 200 and 1 ≤ m ≤ 20".into());
    }
    if draws == 0 || draws > 2_000 {
        return Err("draws must be between 1 and 2000".into());
    }
    let cfg = GenerationConfig {
        n_students: n,
        n_schools: m,
        top_k_acceptable: m.min(5),
        ..Default::default()
    };
    let inst = generate_instance(&cfg, seed).map_err(|e| e.to_string())?;
    let weights = LossWeights::default();
    let mut rows = Vec::new();
    for mech in [Mechanism::Rsd, Mechanism::Da] {
        let run = run_baseline(mech, &inst, draws, seed).map_err(|e| e.to_string())?;
        let p = run.marginals(&inst).map_err(|e| e.to_string())?;
        let row = MetricRow::from_assignment(mech.tag(), 0, &p, &inst, &weights)
            .map_err(|e| e.to_string())?;
        rows.push(row_json(&row, &p.loads()));
    }
    if !checkpoint.trim().is_empty() {
        let ck: Checkpoint<menunet::mechanism::NetworkMetadata> =
            serde_json::from_str(checkpoint).map_err(|e| format!("checkpoint: {e}"))?;
        let net = MenuNetwork::from_checkpoint(&ck).map_err(|e| e.to_string())?;
        let p = assign(
            &generate_menus(&net, &inst).map_err(|e| e.to_string())?,
            &inst,
        )
        .map_err(|e| e.to_string())?;
        let row = MetricRow::from_assignment(MENUNET, 0, &p, &inst, &weights)
            .map_err(|e| e.to_string())?;
        rows.push(row_json(&row, &p.loads()));
    }
    Ok(json!({
        "n": n,
        "m": m,
        "capacities": inst.capacities,
        "slack": inst.slack,
        "mechanisms": rows,
    }))
}

#[wasm_bindgen]
pub fn mallows_explorer(m: usize, phi: f64, draws: usize, seed: u32) -> String {
    respond(mallows(m, phi, draws, seed as u64))
}

#[wasm_bindgen]
pub fn chain_explorer(menu: &[f64], utilities: &[f64]) -> String {
    respond(chain(menu, utilities))
}

#[wasm_bindgen]
pub fn market_compare(n: usize, m: usize, seed: u32, draws: usize, checkpoint: &str) -> String {
    respond(market(n, m, seed as u64, draws, checkpoint))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mallows_rows_sum_to_one() {
        let v = mallows(4, 0.5, 20_000, 1).unwrap();
        let rows = v["by_distance"].as_array().unwrap();
        assert_eq!(rows.len(), 7);
        let exact: f64 = rows.iter().map(|r| r["exact"].as_f64().unwrap()).sum();
        let empirical: f64 = rows.iter().map(|r| r["empirical"].as_f64().unwrap()).sum();
        assert!((exact - 1.0).abs() < 1e-12);
        assert!((empirical - 1.0).abs() < 1e-12);
        let perms: u64 = rows
            .iter()
            .map(|r| r["permutations"].as_u64().unwrap())
            .sum();
        assert_eq!(perms, 24);
        for r in rows {
            assert!((r["exact"].as_f64().unwrap() - r["empirical"].as_f64().unwrap()).abs() < 0.02);
        }
    }

    #[test]
    fn chain_hand_example() {
        let v = chain(&[1.0, 0.5, 1.0], &[0.0, 0.9, 0.5]).unwrap();
        assert!((v["expected_utility"].as_f64().unwrap() - 0.7).abs() < 1e-15);
        let swap = &v["swaps"][0];
        assert!((swap["loss"].as_f64().unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn market_without_checkpoint_has_two_rows() {
        let v = market(30, 4, 2, 50, "").unwrap();
        assert_eq!(v["mechanisms"].as_array().unwrap().len(), 2);
        assert_eq!(v["capacities"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn market_with_checkpoint_adds_menunet() {
        let ck = MenuNetwork::new(8, 0).to_checkpoint(None, None, Value::Null);
        let text = serde_json::to_string(&ck).unwrap();
        let v = market(20, 3, 1, 20, &text).unwrap();
        assert_eq!(v["mechanisms"][2]["mechanism"], "MenuNet");
    }

    #[test]
    fn errors_become_json() {
        let text = mallows_explorer(4, 2.0, 10, 0);
        assert!(text.contains("error"));
        assert!(chain_explorer(&[1.0], &[0.0, 0.5]).contains("error"));
        assert!(market_compare(20, 3, 0, 10, "{not json").contains("error"));
    }
}
