//! Offline training of the menu network over sampled markets.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::losses::{loss_graph, LossBreakdown, LossTerms, LossWeights, PriorityMode};
use crate::market::{generate_split, GenerationConfig, MarketInstance, Split};
use crate::mechanism::{assign_graph, MenuNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub hidden_width: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Where the best network is written whenever it improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Print a progress line every this many batches; 0 is silent.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            clip_norm: 1.0,
            hidden_width: crate::mechanism::DEFAULT_HIDDEN,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_path: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if self.hidden_width < 2 {
            return Err(Error::Config("hidden_width must be at least 2".into()));
        }
        self.weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..Default::default()
        }
    }

    fn mode(&self) -> PriorityMode {
        PriorityMode::Smooth(self.weights.tau_priority)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub seconds: f64,
    /// Largest gradient norm of the epoch, before and after clipping.
    pub max_grad_norm: f64,
    pub max_clipped_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// Training curve, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,seconds");
        for split in ["train", "val"] {
            for f in LossBreakdown::FIELDS {
                out.push_str(&format!(",{split}_{f}"));
            }
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{}", e.epoch, e.seconds));
            for v in e.train.values().iter().chain(&e.val.values()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_shapes(net_input: &[MarketInstance], n: usize, m: usize) -> Result<()> {
    if let Some(bad) = net_input
        .iter()
        .find(|i| i.n_students != n || i.n_schools != m)
    {
        return Err(Error::shape(
            "train",
            format!(
                "instance {}×{} differs from {n}×{m}",
                bad.n_students, bad.n_schools
            ),
        ));
    }
    Ok(())
}

/// Loss of one instance, without gradients.
pub fn instance_loss(
    net: &MenuNetwork,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let menus = net.menu_graph(&mut g, &bound, inst)?;
    let p = assign_graph(&mut g, menus, inst)?;
    let terms = loss_graph(&mut g, p, inst, weights, mode)?;
    Ok(LossBreakdown::read(&g, &terms))
}

/// A scalar term of the composite objective that can be differentiated on
/// its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossComponent {
    Welfare,
    Barrier,
    Envy,
    Waste,
    EnvyMse,
    EnvyMax,
    EnvyVar,
    WasteMse,
    WasteMax,
    WasteVar,
    Stability,
    Total,
}

impl LossComponent {
    pub const ALL: [LossComponent; 12] = [
        LossComponent::Welfare,
        LossComponent::Barrier,
        LossComponent::Envy,
        LossComponent::Waste,
        LossComponent::EnvyMse,
        LossComponent::EnvyMax,
        LossComponent::EnvyVar,
        LossComponent::WasteMse,
        LossComponent::WasteMax,
        LossComponent::WasteVar,
        LossComponent::Stability,
        LossComponent::Total,
    ];

    fn pick(self, t: &LossTerms) -> Var {
        match self {
            LossComponent::Welfare => t.welfare,
            LossComponent::Barrier => t.barrier,
            LossComponent::Envy => t.stability.envy,
            LossComponent::Waste => t.stability.waste,
            LossComponent::EnvyMse => t.stability.envy_mse,
            LossComponent::EnvyMax => t.stability.envy_max,
            LossComponent::EnvyVar => t.stability.envy_var,
            LossComponent::WasteMse => t.stability.waste_mse,
            LossComponent::WasteMax => t.stability.waste_max,
            LossComponent::WasteVar => t.stability.waste_var,
            LossComponent::Stability => t.stability.total,
            LossComponent::Total => t.total,
        }
    }
}

/// Value and parameter gradient of one loss component through the full
/// menus → assignment → loss pipeline, with the graph's kink signature.
#[derive(Clone, Debug)]
pub struct ComponentProbe {
    pub value: f64,
    pub grads: Vec<Matrix>,
    pub overflow: f64,
    pub kink_signature: u64,
}

pub fn probe_component(
    net: &MenuNetwork,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
    component: LossComponent,
) -> Result<ComponentProbe> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let menus = net.menu_graph(&mut g, &bound, inst)?;
    let p = assign_graph(&mut g, menus, inst)?;
    let terms = loss_graph(&mut g, p, inst, weights, mode)?;
    let root = component.pick(&terms);
    g.backward(root)?;
    let grads = bound
        .0
        .iter()
        .zip(&net.params)
        .map(|(&v, p)| {
            g.take_grad(v)
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
        })
        .collect();
    Ok(ComponentProbe {
        value: g.value(root).item(),
        grads,
        overflow: g.value(terms.overflow).item(),
        kink_signature: g.kink_signature(),
    })
}

/// Loss of one instance and its gradient for every network parameter.
pub fn instance_gradients(
    net: &MenuNetwork,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let menus = net.menu_graph(&mut g, &bound, inst)?;
    let p = assign_graph(&mut g, menus, inst)?;
    let terms = loss_graph(&mut g, p, inst, weights, mode)?;
    let loss = LossBreakdown::read(&g, &terms);
    if !loss.total.is_finite() {
        return Ok((loss, Vec::new()));
    }
    g.backward(terms.total)?;
    let grads = bound
        .0
        .iter()
        .zip(&net.params)
        .map(|(&v, p)| {
            g.take_grad(v)
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
        })
        .collect();
    Ok((loss, grads))
}

pub(crate) fn map_instances<T: Send>(
    items: &[&MarketInstance],
    f: impl Fn(&MarketInstance) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(|i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|i| f(i)).collect()
    }
}

/// Sum of gradient lists by pairwise halving in a fixed order, so the result
/// does not depend on how the per-instance work was scheduled.
fn pairwise_sum(mut grads: Vec<Vec<Matrix>>) -> Vec<Matrix> {
    while grads.len() > 1 {
        let mut next = Vec::with_capacity(grads.len().div_ceil(2));
        let mut it = grads.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.add_assign(y);
                }
            }
            next.push(a);
        }
        grads = next;
    }
    grads.pop().unwrap_or_default()
}

/// Mean smooth-mode loss over a set of instances.
pub fn mean_loss(
    net: &MenuNetwork,
    set: &[MarketInstance],
    weights: &LossWeights,
    mode: PriorityMode,
) -> Result<LossBreakdown> {
    let refs: Vec<&MarketInstance> = set.iter().collect();
    let losses = map_instances(&refs, |i| instance_loss(net, i, weights, mode))?;
    Ok(LossBreakdown::mean(&losses))
}

/// Trains `net` and returns the parameters with the lowest validation loss.
///
/// If a batch loss turns non-finite, training stops with an error; the best
/// network so far has already been written to `checkpoint_path` if one is
/// configured.
pub fn train(
    mut net: MenuNetwork,
    train_set: &[MarketInstance],
    val_set: &[MarketInstance],
    config: &TrainConfig,
) -> Result<(MenuNetwork, TrainReport)> {
    config.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let (n, m) = (first.n_students, first.n_schools);
    check_shapes(train_set, n, m)?;
    check_shapes(val_set, n, m)?;

    let adam = config.adam();
    let mode = config.mode();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MenuNetwork)> = None;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        let mut max_norm: f64 = 0.0;
        let mut max_clipped: f64 = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&MarketInstance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let results = map_instances(&batch, |i| {
                instance_gradients(&net, i, &config.weights, mode)
            })?;
            let (losses, grads): (Vec<LossBreakdown>, Vec<Vec<Matrix>>) =
                results.into_iter().unzip();
            let loss = LossBreakdown::mean(&losses);
            if !loss.total.is_finite() {
                return Err(Error::numeric(
                    "train",
                    format!("non-finite loss at epoch {epoch}, batch {b}; best network kept at its checkpoint"),
                ));
            }
            let mut grad = pairwise_sum(grads);
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| g.scale_in_place(scale));
            let norm = adam_step(&mut net.params, &grad, &adam)?;
            max_norm = max_norm.max(norm);
            max_clipped = max_clipped.max(adam.clip_norm.map_or(norm, |c| norm.min(c)));
            batch_losses.push(loss);
            if config.log_every > 0 && (b + 1) % config.log_every == 0 {
                eprintln!("epoch {epoch} batch {}: loss {:.6}", b + 1, loss.total);
            }
        }
        let train_loss = LossBreakdown::mean(&batch_losses);
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(&net, val_set, &config.weights, mode)?
        };
        let seconds = start.elapsed().as_secs_f64();
        if config.log_every > 0 {
            eprintln!(
                "epoch {epoch}: train {:.6} val {:.6} overflow {:.3} ({seconds:.1}s)",
                train_loss.total, val_loss.total, val_loss.overflow
            );
        }
        records.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val_loss,
            seconds,
            max_grad_norm: max_norm,
            max_clipped_norm: max_clipped,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_loss.total < *v) {
            if let Some(path) = &config.checkpoint_path {
                save_network(&net, path, n, m, config)?;
            }
            best = Some((val_loss.total, epoch, net.clone()));
        }
    }
    let (_, best_epoch, best_net) = best.expect("at least one epoch");
    Ok((
        best_net,
        TrainReport {
            epochs: records,
            best_epoch,
        },
    ))
}

/// Writes `net` with the training configuration as checkpoint metadata.
pub fn save_network(
    net: &MenuNetwork,
    path: &std::path::Path,
    n: usize,
    m: usize,
    config: &TrainConfig,
) -> Result<()> {
    let hyper = serde_json::to_value(config)?;
    net.save(path, Some(n), Some(m), hyper)
}

/// Parameters of a timing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub generation: GenerationConfig,
    pub train: TrainConfig,
    pub instances: usize,
    pub master_seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            generation: GenerationConfig::default(),
            train: TrainConfig {
                epochs: 2,
                ..Default::default()
            },
            instances: 16,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_students: usize,
    pub seconds_per_epoch: f64,
}

/// Seconds per training epoch at each market size, everything else fixed.
/// The fastest epoch of each run is reported, which is the least noisy
/// estimate of the work per epoch.
pub fn measure_scaling(template: &ScalingConfig, sizes: &[usize]) -> Result<Vec<ScalingRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "scaling sizes must be strictly ascending".into(),
        ));
    }
    if template.instances == 0 {
        return Err(Error::Config("scaling needs at least one instance".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let gen = GenerationConfig {
            n_students: n,
            ..template.generation.clone()
        };
        let set = generate_split(&gen, template.master_seed, Split::Train, template.instances)?;
        let net = MenuNetwork::new(template.train.hidden_width, template.train.seed);
        let (_, report) = train(net, &set, &[], &template.train)?;
        let seconds = report
            .epochs
            .iter()
            .map(|e| e.seconds)
            .fold(f64::INFINITY, f64::min);
        rows.push(ScalingRow {
            n_students: n,
            seconds_per_epoch: seconds,
        });
    }
    Ok(rows)
}
