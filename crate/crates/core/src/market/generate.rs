use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::instance::MarketInstance;
use super::mallows::{check_dispersion, rim_sample, MallowsConfig};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Parameters of the synthetic market distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub n_students: usize,
    pub n_schools: usize,
    /// Total capacity as a fraction of the number of students.
    pub capacity_ratio: f64,
    /// Standard deviation of school capacities relative to their mean.
    pub capacity_std_fraction: f64,
    /// Global slack as a fraction of the number of students.
    pub slack_fraction: f64,
    pub phi_student: f64,
    pub phi_school: f64,
    pub top_k_acceptable: usize,
    pub utility_noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_students: 100,
            n_schools: 10,
            capacity_ratio: 0.6,
            capacity_std_fraction: 0.1,
            slack_fraction: 0.05,
            phi_student: 0.7,
            phi_school: 0.7,
            top_k_acceptable: 5,
            utility_noise: 0.01,
            n_train: 1000,
            n_val: 200,
            n_test: 100,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_students < 1 || self.n_schools < 1 {
            return Err(Error::Config(
                "need at least one student and one school".into(),
            ));
        }
        check_dispersion(self.phi_student)?;
        check_dispersion(self.phi_school)?;
        if self.top_k_acceptable < 1 {
            return Err(Error::Config("top_k_acceptable must be at least 1".into()));
        }
        for (name, v) in [
            ("capacity_ratio", self.capacity_ratio),
            ("capacity_std_fraction", self.capacity_std_fraction),
            ("slack_fraction", self.slack_fraction),
            ("utility_noise", self.utility_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn slack(&self) -> f64 {
        self.slack_fraction * self.n_students as f64
    }

    pub fn total_capacity(&self) -> u32 {
        (self.capacity_ratio * self.n_students as f64).round() as u32
    }
}

/// Which dataset split an instance belongs to; mixed into its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of instance `index` of `split`, independent of generation order.
pub fn instance_seed(master_seed: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ splitmix64(split.tag())) ^ index)
}

/// Samples one market. A pure function of `(config, seed)`.
pub fn generate_instance(config: &GenerationConfig, seed: u64) -> Result<MarketInstance> {
    config.validate()?;
    let (n, m) = (config.n_students, config.n_schools);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut utilities = Matrix::zeros(n, m + 1);
    let student_model = MallowsConfig {
        dispersion: config.phi_student,
        reference: (1..=m).collect(),
    };
    let top_k = config.top_k_acceptable.min(m);
    for s in 0..n {
        let ranking = rim_sample(&student_model, &mut rng)?;
        for (r, &c) in ranking.iter().enumerate() {
            let v = if r < top_k {
                // rank r+1 scores (m - r)/m, plus noise in (0, utility_noise]
                let noise = config.utility_noise * (1.0 - rng.random::<f64>());
                ((m - r) as f64 / m as f64 + noise).min(1.0)
            } else {
                -1.0
            };
            utilities.set(s, c, v);
        }
    }

    let mut priorities = Matrix::zeros(n, m + 1);
    let school_model = MallowsConfig::identity(n, config.phi_school);
    for c in 1..=m {
        let ranking = rim_sample(&school_model, &mut rng)?;
        let mut raw = vec![0.0; n];
        for (r, &s) in ranking.iter().enumerate() {
            // Noise stays below half the rank spacing, so order is preserved.
            let noise = 0.5 * rng.random::<f64>() / n as f64;
            raw[s] = (n - r) as f64 / n as f64 + noise;
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (s, x) in raw.iter().enumerate() {
            let u = if hi > lo { (x - lo) / (hi - lo) } else { 1.0 };
            priorities.set(s, c, u);
        }
    }

    let capacities = sample_capacities(config, &mut rng)?;
    let inst = MarketInstance {
        n_students: n,
        n_schools: m,
        utilities,
        priorities,
        capacities,
        slack: config.slack(),
        seed,
    };
    inst.validate()?;
    Ok(inst)
}

/// Gaussian capacities rounded to integers, then nudged one seat at a time
/// in largest-remainder order until they sum to the target exactly.
fn sample_capacities<R: Rng + ?Sized>(config: &GenerationConfig, rng: &mut R) -> Result<Vec<u32>> {
    let m = config.n_schools;
    let target = config.total_capacity() as i64;
    let mean = config.capacity_ratio * config.n_students as f64 / m as f64;
    let std = config.capacity_std_fraction * mean;
    let normal = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
    let raw: Vec<f64> = (0..m).map(|_| normal.sample(rng)).collect();
    let mut caps: Vec<i64> = raw.iter().map(|x| x.round().max(0.0) as i64).collect();
    // positive remainder: the school was rounded down and deserves a seat first
    let remainder: Vec<f64> = raw.iter().zip(&caps).map(|(x, &q)| x - q as f64).collect();
    let mut by_remainder: Vec<usize> = (0..m).collect();
    by_remainder.sort_by(|&a, &b| remainder[b].total_cmp(&remainder[a]).then(a.cmp(&b)));

    let mut diff = target - caps.iter().sum::<i64>();
    while diff > 0 {
        for &c in &by_remainder {
            if diff == 0 {
                break;
            }
            caps[c] += 1;
            diff -= 1;
        }
    }
    while diff < 0 {
        let before = diff;
        for &c in by_remainder.iter().rev() {
            if diff == 0 {
                break;
            }
            if caps[c] > 0 {
                caps[c] -= 1;
                diff += 1;
            }
        }
        debug_assert!(diff > before, "total capacity is non-negative");
    }
    Ok(caps.into_iter().map(|q| q as u32).collect())
}

/// All instances of one split, in index order.
pub fn generate_split(
    config: &GenerationConfig,
    master_seed: u64,
    split: Split,
    count: usize,
) -> Result<Vec<MarketInstance>> {
    let gen = |i: usize| generate_instance(config, instance_seed(master_seed, split, i as u64));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(gen).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(gen).collect()
    }
}
