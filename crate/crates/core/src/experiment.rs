//! One config for a whole run: data, training, evaluation, routing, harness
//! and sweep settings, plus the stock presets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autoencoder::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::harness::HarnessConfig;
use crate::numerics::AdamConfig;
use crate::routing::WeightTable;
use crate::synthgen::{GeneratorConfig, ThoughtGroup};

/// Sweep dimensions used at desk scale.
pub const DESK_DIMS: [usize; 3] = [8, 16, 32];
/// Large-scale sweep dimensions, evenly spaced from 124 to 1024.
pub const LARGE_DIMS: [usize; 8] = [124, 253, 381, 510, 638, 767, 895, 1024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightScheme {
    /// `alpha / n_agents`.
    Proportional,
    Uniform { weight: f64 },
    Table { weights: BTreeMap<usize, f64> },
}

impl WeightScheme {
    pub fn table(&self, n_agents: usize) -> Result<WeightTable> {
        let t = match self {
            WeightScheme::Proportional => WeightTable::proportional(n_agents),
            WeightScheme::Uniform { weight } => WeightTable::uniform(n_agents, *weight),
            WeightScheme::Table { weights } => WeightTable(weights.clone()),
        };
        t.validate(n_agents)?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub weights: WeightScheme,
    pub prefix_len: usize,
    pub embed_dim: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            weights: WeightScheme::Proportional,
            prefix_len: 2,
            embed_dim: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// `n_z = n_h` for each entry.
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Training epochs per dimension; dimensions not listed use `training.epochs`.
    pub epochs: BTreeMap<usize, usize>,
    /// Training restarts per setting.
    pub restarts: usize,
    /// Penalty weight for the sweep; `None` keeps `training.lambda_sparse`.
    pub lambda_sparse: Option<f64>,
    /// Likelihood weight for the sweep; `None` keeps `training.lambda_likelihood`.
    pub lambda_likelihood: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dims: DESK_DIMS.to_vec(),
            seeds: vec![1, 2, 3],
            epochs: BTreeMap::from([(8, 300), (16, 300), (32, 300)]),
            restarts: 3,
            lambda_sparse: Some(0.003),
            lambda_likelihood: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub routing: RoutingConfig,
    pub harness: HarnessConfig,
    pub sweep: SweepConfig,
    /// Seeds data generation and, through [`ExperimentConfig::resolved`], training.
    pub seed: u64,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            training: default_training(),
            evaluation: EvalConfig::default(),
            routing: RoutingConfig::default(),
            harness: HarnessConfig::default(),
            sweep: SweepConfig::default(),
            seed: 1,
            output_dir: "runs/default".into(),
        }
    }
}

/// Training settings used by the presets.
pub fn default_training() -> TrainConfig {
    TrainConfig {
        lambda_sparse: 0.01,
        lambda_likelihood: 0.3,
        epochs: 300,
        restarts: 3,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.training.validate()?;
        self.evaluation.validate()?;
        self.harness.validate()?;
        self.routing.weights.table(self.generator.block_dims.len().max(self.harness.n_agents))?;
        if self.routing.prefix_len == 0 || self.routing.embed_dim == 0 {
            return Err(Error::InvalidArgument("prefix_len and embed_dim must be positive".into()));
        }
        if self.sweep.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument("sweep dimensions must be at least 2".into()));
        }
        if self.sweep.restarts == 0 {
            return Err(Error::InvalidArgument("sweep restarts must be at least 1".into()));
        }
        let bad = |w: Option<f64>| w.is_some_and(|l| !(l.is_finite() && l >= 0.0));
        if bad(self.sweep.lambda_sparse) || bad(self.sweep.lambda_likelihood) {
            return Err(Error::InvalidArgument("sweep weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Copy with the training seed tied to `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.training.seed = c.seed;
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Two agents with three state coordinates each; two private thoughts per
/// agent and two shared ones.
pub fn preset_basic(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        output_dir: format!("runs/basic-seed{seed}"),
        ..ExperimentConfig::default()
    }
    .resolved()
}

/// Generator for `n_z = n_h = dim`: two agents up to dim 8, four above.
/// Four agents get a private group each, one group per adjacent pair and
/// one held by all; two agents get two private groups and a shared one.
pub fn sweep_generator(dim: usize) -> Result<GeneratorConfig> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("sweep dimension {dim} is below 2")));
    }
    let n_agents = if dim <= 8 { 2 } else { 4 };
    let block_dims: Vec<usize> = (0..n_agents).map(|k| dim / n_agents + usize::from(k < dim % n_agents)).collect();
    let all: Vec<usize> = (0..n_agents).collect();
    let shared_all = (dim / 4).clamp(1, 4);
    let mut groups = vec![ThoughtGroup::new(&all, shared_all)];
    let mut used = shared_all;
    if n_agents > 2 {
        let per_pair = (dim / 16).max(1);
        for k in 0..n_agents {
            groups.push(ThoughtGroup::new(&[k, (k + 1) % n_agents], per_pair));
            used += per_pair;
        }
    }
    let rest = dim.saturating_sub(used);
    for k in 0..n_agents {
        let count = rest / n_agents + usize::from(k < rest % n_agents);
        if count > 0 {
            groups.push(ThoughtGroup::new(&[k], count));
        }
    }
    let cfg = GeneratorConfig {
        block_dims,
        groups,
        ..GeneratorConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One config per `(dim, seed)`, dims in the given order.
pub fn preset_mcc_sweep(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let mut out = Vec::with_capacity(base.sweep.dims.len() * base.sweep.seeds.len());
    for &dim in &base.sweep.dims {
        for &seed in &base.sweep.seeds {
            let mut c = base.clone();
            c.generator = GeneratorConfig {
                n_samples: base.generator.n_samples,
                mixing: base.generator.mixing,
                ..sweep_generator(dim)?
            };
            if let Some(&e) = base.sweep.epochs.get(&dim) {
                c.training.epochs = e;
            }
            c.training.restarts = base.sweep.restarts;
            if let Some(l) = base.sweep.lambda_sparse {
                c.training.lambda_sparse = l;
            }
            if let Some(l) = base.sweep.lambda_likelihood {
                c.training.lambda_likelihood = l;
            }
            c.seed = seed;
            c.output_dir = format!("{}/dim{dim}-seed{seed}", base.output_dir);
            out.push(c.resolved());
        }
    }
    Ok(out)
}
