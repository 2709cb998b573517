//! Mallows distributions over rankings, sampled with the repeated
//! insertion model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Mallows model: `P(π) ∝ φ^{d_τ(π, reference)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MallowsConfig {
    pub dispersion: f64,
    /// Reference ranking, best first.
    pub reference: Vec<usize>,
}

impl MallowsConfig {
    /// Reference ranking `0, 1, …, len-1`.
    pub fn identity(len: usize, dispersion: f64) -> Self {
        MallowsConfig {
            dispersion,
            reference: (0..len).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dispersion(self.dispersion)
    }
}

pub(crate) fn check_dispersion(phi: f64) -> Result<()> {
    if phi > 0.0 && phi <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "Mallows dispersion must lie in (0, 1], got {phi}"
        )))
    }
}

/// Exact Mallows sample via repeated insertion.
///
/// The `i`-th reference item (1-based) is inserted at position
/// `k ∈ {1..i}` of the partial ranking with probability proportional to
/// `φ^{i-k}`, so inserting at the end (keeping reference order) is the most
/// likely move. `O(m²)`.
pub fn rim_sample<R: Rng + ?Sized>(config: &MallowsConfig, rng: &mut R) -> Result<Vec<usize>> {
    config.validate()?;
    let phi = config.dispersion;
    let mut ranking: Vec<usize> = Vec::with_capacity(config.reference.len());
    let mut weights: Vec<f64> = Vec::with_capacity(config.reference.len());
    for (idx, &item) in config.reference.iter().enumerate() {
        let i = idx + 1;
        // weights[d] = φ^d for displacement d = i - k from the end.
        weights.push(if idx == 0 {
            1.0
        } else {
            weights[idx - 1] * phi
        });
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut displacement = i - 1;
        for (d, w) in weights.iter().enumerate() {
            if u < *w {
                displacement = d;
                break;
            }
            u -= w;
        }
        ranking.insert(i - 1 - displacement, item);
    }
    Ok(ranking)
}

/// Number of item pairs ordered differently by `a` and `b`.
pub fn kendall_tau(a: &[usize], b: &[usize]) -> Result<u64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "kendall_tau",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let max_item = a.iter().chain(b).copied().max().map_or(0, |x| x + 1);
    let mut pos_in_b = vec![usize::MAX; max_item];
    for (p, &item) in b.iter().enumerate() {
        pos_in_b[item] = p;
    }
    if a.iter().any(|&item| pos_in_b[item] == usize::MAX) {
        return Err(Error::shape(
            "kendall_tau",
            "rankings are over different items",
        ));
    }
    let mut discordant = 0u64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if pos_in_b[a[i]] > pos_in_b[a[j]] {
                discordant += 1;
            }
        }
    }
    Ok(discordant)
}

/// Normalizing constant `Z(φ) = Π_{i=1}^{m} Σ_{j=0}^{i-1} φ^j`.
pub fn mallows_partition(phi: f64, m: usize) -> f64 {
    (1..=m)
        .map(|i| (0..i).map(|j| phi.powi(j as i32)).sum::<f64>())
        .product()
}
