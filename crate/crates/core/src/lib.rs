//! Pairwise-calibrated ensembles of reward functions.
//!
//! An ensemble of reward models is pairwise calibrated when, for a random comparison, the
//! weighted fraction of its members preferring the first response matches the fraction of
//! annotators who do. This crate learns such ensembles from soft-label preference data by
//! forward stagewise additive modeling, evaluates and prunes them, and provides synthetic
//! annotator populations and exact small-instance tournament decompositions as
//! ground-truth oracles.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diversity;
pub mod error;
pub mod fsam;
pub mod io;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod population;
pub mod prune;
pub mod tournament;
pub mod weights;

pub use error::{Error, Result};
pub use fsam::{fsam_train, TrainConfig, TrainReport};
pub use model::{
    ComparisonTriple, Embedding, Ensemble, LinearRewardModel, PreferenceDataset, PreferenceRecord,
};
pub use population::{GenerationConfig, SyntheticPopulation};
