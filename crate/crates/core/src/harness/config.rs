use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::construct::{default_lr, Beta1, ConstructionConfig};
use crate::context::ContextLayout;
use crate::error::{Error, Result};
use crate::hmm::{HmmDocument, LowRankHmm, Mixture, MixtureConfig};
use crate::rng::{stream_rng, streams};

/// Where the task HMM comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HmmSource {
    Random {
        num_hidden: usize,
        num_obs: usize,
        rank: usize,
        #[serde(default = "one")]
        concentration: f64,
        seed: u64,
    },
    /// One task drawn from the mixture with the experiment seed.
    Mixture(MixtureConfig),
    Inline(HmmDocument),
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl HmmSource {
    /// The task HMM, and for mixtures the index of the drawn task.
    pub fn resolve(&self, experiment_seed: u64) -> Result<(LowRankHmm, Option<usize>)> {
        match self {
            HmmSource::Random { num_hidden, num_obs, rank, concentration, seed } => {
                Ok((LowRankHmm::new_low_rank(*num_hidden, *num_obs, *rank, *concentration, *seed)?, None))
            }
            HmmSource::Mixture(cfg) => {
                let mixture = Mixture::new(cfg.clone())?;
                let task = mixture.sample_task(&mut stream_rng(experiment_seed, streams::TASK_DRAW));
                Ok((mixture.tasks()[task].clone(), Some(task)))
            }
            HmmSource::Inline(doc) => Ok((LowRankHmm::from_document(doc)?, None)),
            HmmSource::File { path } => Ok((LowRankHmm::from_json(&std::fs::read_to_string(path)?)?, None)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSpec {
    #[serde(default = "hard")]
    pub beta1: Beta1,
    /// Defaults to `2000 n k`.
    #[serde(default)]
    pub beta2: Option<f64>,
    pub steps: usize,
    /// Defaults to `1 / (2 n R)`.
    #[serde(default)]
    pub lr: Option<f64>,
}

fn hard() -> Beta1 {
    Beta1::Hard
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hmm: HmmSource,
    pub n: usize,
    pub l: usize,
    pub k: usize,
    #[serde(default = "one_usize")]
    pub m: usize,
    /// Embedding width; the layout default when absent.
    #[serde(default)]
    pub width: Option<usize>,
    pub construction: ConstructionSpec,
    #[serde(default = "default_mc")]
    pub num_mc: usize,
    #[serde(default)]
    pub alpha_floor: f64,
    pub seed: u64,
    /// Sample size of the large-sample linear reference.
    #[serde(default = "default_reference")]
    pub linear_reference_samples: usize,
    /// Run the constructed Transformer on every test prompt. When off, the
    /// total error uses the oracle iterate `W_T z` instead of the read-out.
    #[serde(default = "yes")]
    pub evaluate_stack: bool,
}

fn one_usize() -> usize {
    1
}
fn default_mc() -> usize {
    200
}
fn default_reference() -> usize {
    100_000
}
fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > self.l && self.l > self.m && self.m >= 1) {
            return Err(Error::InvalidConfig(format!(
                "need k > L > m >= 1, got k={}, L={}, m={}",
                self.k, self.l, self.m
            )));
        }
        if self.n == 0 || self.num_mc == 0 || self.linear_reference_samples == 0 {
            return Err(Error::InvalidConfig("n, num_mc and linear_reference_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self, p: usize) -> Result<ContextLayout> {
        match self.width {
            Some(d) => ContextLayout::with_width(self.n, self.l, self.k, p, self.m, d),
            None => ContextLayout::new(self.n, self.l, self.k, p, self.m),
        }
    }

    /// The construction parameters. `steps = 0` is passed through (the
    /// harness then measures the zero predictor without building a stack);
    /// everything else is validated.
    pub fn construction_config(&self, layout: ContextLayout) -> Result<ConstructionConfig> {
        let c = &self.construction;
        let cfg = ConstructionConfig {
            layout,
            beta1: c.beta1,
            beta2: c.beta2.unwrap_or(2000.0 * layout.n as f64 * layout.k as f64),
            steps: c.steps.max(1),
            lr: c.lr.unwrap_or_else(|| default_lr(&layout)),
        };
        cfg.validate()?;
        Ok(ConstructionConfig { steps: c.steps, ..cfg })
    }
}
