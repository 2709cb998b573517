#![allow(dead_code)]

use menunet::autodiff::gradcheck::{relative_error, FD_STEP};
use menunet::losses::{LossWeights, PriorityMode};
use menunet::market::{generate_instance, GenerationConfig, MarketInstance};
use menunet::mechanism::MenuNetwork;
use menunet::training::{probe_component, LossComponent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_market(n: usize, m: usize, seed: u64) -> MarketInstance {
    let cfg = GenerationConfig {
        n_students: n,
        n_schools: m,
        top_k_acceptable: m.min(3),
        ..Default::default()
    };
    generate_instance(&cfg, seed).unwrap()
}

#[derive(Debug, Default)]
pub struct FdOutcome {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Compares the backward pass of `component` with central differences at
/// `coords` random parameter coordinates. Coordinates whose ±h evaluations
/// land in a different piece of any piecewise-linear node are skipped and
/// replaced by fresh draws.
pub fn finite_difference_check(
    net: &MenuNetwork,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
    component: LossComponent,
    coords: usize,
    seed: u64,
) -> FdOutcome {
    let base = probe_component(net, inst, weights, mode, component).unwrap();
    let sizes: Vec<usize> = net.params.iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FdOutcome::default();
    let mut tries = 0;
    while out.checked < coords && tries < 20 * coords {
        tries += 1;
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let eval = |delta: f64| {
            let mut moved = net.clone();
            moved.params[k].value.data_mut()[flat] += delta;
            let pr = probe_component(&moved, inst, weights, mode, component).unwrap();
            (pr.value, pr.kink_signature)
        };
        let (up, sig_up) = eval(FD_STEP);
        let (down, sig_down) = eval(-FD_STEP);
        if sig_up != base.kink_signature || sig_down != base.kink_signature {
            out.skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * FD_STEP);
        let analytic = base.grads[k].data()[flat];
        out.worst = out.worst.max(relative_error(analytic, fd));
        out.checked += 1;
    }
    out
}

/// An instance whose slack puts a fresh network's overflow on the requested
/// side of the barrier kink.
pub fn with_slack_around(
    net: &MenuNetwork,
    inst: &MarketInstance,
    weights: &LossWeights,
    above: bool,
) -> MarketInstance {
    let probe = probe_component(
        net,
        inst,
        weights,
        PriorityMode::Smooth(weights.tau_priority),
        LossComponent::Barrier,
    )
    .unwrap();
    let mut out = inst.clone();
    out.slack = if above {
        0.5 * probe.overflow
    } else {
        2.0 * probe.overflow + 0.5
    };
    out
}
