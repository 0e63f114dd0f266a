//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! eval_triples = 5000
//! val_fraction = 0.2
//!
//! [population]
//! weights = [0.5, 0.3, 0.2]   # or explicit [[population.groups]] tables
//! spread = 0.0
//! annotators_per_group = 1
//!
//! [generation]
//! num_prompts = 2000
//! annotators_per_comparison = 10
//! embedding_dim = 16
//!
//! [train]
//! k_max = 8
//!
//! [prune]
//! beta = 3.0
//! ```
//!
//! A single top-level `seed` drives every random stream. Unknown keys are rejected.

use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fsam::TrainConfig;
use crate::metrics::DEFAULT_EVAL_TRIPLES;
use crate::model::ComparisonTriple;
use crate::population::{
    random_groups, sample_population, sample_triples, AnnotatorGroup, GenerationConfig,
    SyntheticPopulation,
};

/// Stream offsets so that population, data and evaluation triples never share a stream.
const POPULATION_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const TRIPLE_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    /// Explicit groups; overrides `weights`.
    pub groups: Option<Vec<AnnotatorGroup>>,
    /// Group weights for randomly drawn centers.
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub spread: f64,
    #[serde(default = "one")]
    pub annotators_per_group: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    pub beta: f64,
}

impl Default for PruneSpec {
    fn default() -> Self {
        Self { beta: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub population: PopulationSpec,
    pub generation: GenerationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneSpec,
    #[serde(default = "default_eval_triples")]
    pub eval_triples: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub output_dir: Option<PathBuf>,
}

fn default_eval_triples() -> usize {
    DEFAULT_EVAL_TRIPLES
}

fn default_val_fraction() -> f64 {
    0.2
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population.groups.is_none() && self.population.weights.is_none() {
            return Err(Error::Config(
                "population: one of `groups` or `weights` is required".into(),
            ));
        }
        self.generation
            .validate()
            .map_err(|e| Error::Config(format!("generation: {e}")))?;
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        if !(self.prune.beta > 1.0) {
            return Err(Error::Config("prune.beta must exceed 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.eval_triples == 0 {
            return Err(Error::Config("eval_triples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn population(&self) -> Result<SyntheticPopulation> {
        let seed = derive_seed(self.seed, POPULATION_STREAM);
        let groups = match (&self.population.groups, &self.population.weights) {
            (Some(groups), _) => groups.clone(),
            (None, Some(weights)) => random_groups(
                weights,
                self.generation.embedding_dim,
                self.population.spread,
                seed,
            ),
            (None, None) => unreachable!("validated"),
        };
        sample_population(&groups, self.population.annotators_per_group, seed)
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            seed: derive_seed(self.seed, DATA_STREAM),
            ..self.generation.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, TRAIN_STREAM),
            ..self.train.clone()
        }
    }

    /// Held-out Monte-Carlo triples for population-level metrics.
    pub fn eval_triples(
        &self,
        pop: &SyntheticPopulation,
        count: Option<usize>,
    ) -> Result<Vec<ComparisonTriple>> {
        sample_triples(
            pop,
            count.unwrap_or(self.eval_triples),
            self.generation.embedding_scale,
            derive_seed(self.seed, TRIPLE_STREAM),
        )
    }
}
