use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{encode_all, encode_features, FEATURE_COUNT, FEATURE_VERSION};
use crate::autodiff::{Checkpoint, Graph, Matrix, Parameter, TensorRecord, Var};
use crate::error::{Error, Result};
use crate::market::MarketInstance;

/// Hidden width of both hidden layers.
pub const DEFAULT_HIDDEN: usize = 256;

/// Menu probabilities for real schools are clamped into this interval.
pub const MENU_FLOOR: f64 = 1e-6;
pub const MENU_CEIL: f64 = 1.0 - 1e-6;

const PARAM_NAMES: [&str; 10] = [
    "layer1.weight",
    "layer1.bias",
    "norm1.gain",
    "norm1.bias",
    "layer2.weight",
    "layer2.bias",
    "norm2.gain",
    "norm2.bias",
    "layer3.weight",
    "layer3.bias",
];

/// Shared three-layer perceptron mapping one (student, school) feature row
/// to an availability probability. Hidden layers are followed by layer
/// normalization and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct MenuNetwork {
    pub params: Vec<Parameter>,
    hidden: usize,
}

/// Metadata stored next to the parameters in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkMetadata {
    pub feature_version: String,
    pub input_width: usize,
    pub hidden_width: usize,
    pub n_students: Option<usize>,
    pub n_schools: Option<usize>,
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

/// Graph handles of the network parameters, in [`MenuNetwork::params`]
/// order.
pub struct BoundParams(pub Vec<Var>);

impl MenuNetwork {
    /// He-initialized weights (`N(0, 2/fan_in)`), zero biases, unit
    /// normalization gains.
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("positive std");
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Matrix::from_vec(rows, cols, data).expect("shape")
        };
        let values = [
            gaussian(FEATURE_COUNT, hidden),
            Matrix::zeros(1, hidden),
            Matrix::filled(1, hidden, 1.0),
            Matrix::zeros(1, hidden),
            gaussian(hidden, hidden),
            Matrix::zeros(1, hidden),
            Matrix::filled(1, hidden, 1.0),
            Matrix::zeros(1, hidden),
            gaussian(hidden, 1),
            Matrix::zeros(1, 1),
        ];
        let params = PARAM_NAMES
            .iter()
            .zip(values)
            .map(|(name, v)| Parameter::new(*name, v))
            .collect();
        MenuNetwork { params, hidden }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Places the parameters on `g` as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| g.parameter(p.value.clone()))
                .collect(),
        )
    }

    /// Availability probability for every feature row: rows × 1, clamped
    /// into `[MENU_FLOOR, MENU_CEIL]`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, features: Var) -> Result<Var> {
        let p = &bound.0;
        let h = g.matmul(features, p[0])?;
        let h = g.add(h, p[1])?;
        let h = g.layer_norm(h, p[2], p[3])?;
        let h = g.relu(h);
        let h = g.matmul(h, p[4])?;
        let h = g.add(h, p[5])?;
        let h = g.layer_norm(h, p[6], p[7])?;
        let h = g.relu(h);
        let logits = g.matmul(h, p[8])?;
        let logits = g.add(logits, p[9])?;
        let probs = g.sigmoid(logits);
        let probs = g.clamp(probs, MENU_FLOOR, MENU_CEIL);
        if !g.value(probs).is_finite() {
            return Err(Error::numeric("menu network", "non-finite activation"));
        }
        Ok(probs)
    }

    /// Menus of every student as an n × m graph node (real schools only).
    pub fn menu_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        inst: &MarketInstance,
    ) -> Result<Var> {
        let x = g.constant(encode_all(inst));
        let probs = self.forward(g, bound, x)?;
        g.reshape(probs, inst.n_students, inst.n_schools)
    }

    pub fn to_checkpoint(
        &self,
        n_students: Option<usize>,
        n_schools: Option<usize>,
        hyperparameters: serde_json::Value,
    ) -> Checkpoint<NetworkMetadata> {
        let parameters: BTreeMap<String, TensorRecord> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), TensorRecord::from_matrix(&p.value)))
            .collect();
        Checkpoint {
            metadata: NetworkMetadata {
                feature_version: FEATURE_VERSION.to_string(),
                input_width: FEATURE_COUNT,
                hidden_width: self.hidden,
                n_students,
                n_schools,
                hyperparameters,
            },
            parameters,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<NetworkMetadata>) -> Result<Self> {
        let meta = &ck.metadata;
        if meta.feature_version != FEATURE_VERSION {
            return Err(Error::Format(format!(
                "checkpoint uses feature encoding `{}`, this build uses `{FEATURE_VERSION}`",
                meta.feature_version
            )));
        }
        if meta.input_width != FEATURE_COUNT {
            return Err(Error::Format(
                "checkpoint input width does not match".into(),
            ));
        }
        let mut net = MenuNetwork::new(meta.hidden_width, 0);
        for p in &mut net.params {
            let rec = ck
                .parameters
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{}`", p.name)))?;
            let value = rec.to_matrix()?;
            if value.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint shape mismatch for `{}`",
                    p.name
                )));
            }
            *p = Parameter::new(p.name.clone(), value);
        }
        if ck.parameters.len() != net.params.len() {
            return Err(Error::Format("checkpoint has unexpected parameters".into()));
        }
        Ok(net)
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        n_students: Option<usize>,
        n_schools: Option<usize>,
        hyperparameters: serde_json::Value,
    ) -> Result<()> {
        self.to_checkpoint(n_students, n_schools, hyperparameters)
            .save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, NetworkMetadata)> {
        let ck = Checkpoint::<NetworkMetadata>::load(path)?;
        let net = MenuNetwork::from_checkpoint(&ck)?;
        Ok((net, ck.metadata))
    }
}

/// Per-student availability probabilities: n × (m+1), column 0 (the
/// outside option) is identically 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MenuMatrix(pub Matrix);

impl MenuMatrix {
    /// Wraps real-school menus (n × m) by prepending the outside option.
    pub fn from_real(real: &Matrix) -> Self {
        let (n, m) = real.shape();
        let mut out = Matrix::filled(n, m + 1, 1.0);
        for s in 0..n {
            out.row_mut(s)[1..].copy_from_slice(real.row(s));
        }
        MenuMatrix(out)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    /// The real-school block, n × m.
    pub fn real(&self) -> Matrix {
        let (n, cols) = self.0.shape();
        let mut out = Matrix::zeros(n, cols - 1);
        for s in 0..n {
            out.row_mut(s).copy_from_slice(&self.0.row(s)[1..]);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for s in 0..self.0.rows() {
            let row = self.0.row(s);
            if row[0] != 1.0 {
                return Err(Error::numeric(
                    "menu",
                    "outside option must always be available",
                ));
            }
            if row[1..].iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::numeric("menu", "probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Menus for every student of `inst`.
pub fn generate_menus(net: &MenuNetwork, inst: &MarketInstance) -> Result<MenuMatrix> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let menus = net.menu_graph(&mut g, &bound, inst)?;
    Ok(MenuMatrix::from_real(g.value(menus)))
}

/// Menu of a single student, length m+1 with entry 0 equal to 1. Only
/// student `s`'s features are evaluated.
pub fn menu_row(net: &MenuNetwork, inst: &MarketInstance, s: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let x = g.constant(encode_features(inst, s));
    let probs = net.forward(&mut g, &bound, x)?;
    let mut row = Vec::with_capacity(inst.n_schools + 1);
    row.push(1.0);
    row.extend_from_slice(g.value(probs).data());
    Ok(row)
}
