//! Domain types and elementary scoring operations.
//!
//! A reward model scores a context-response embedding by a dot product. Pairwise
//! preferences are strict comparisons of two such scores; an ensemble's preference
//! probability is the mixture-weighted fraction of members preferring the first
//! response.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numeric::{dot, sigmoid};

/// Tolerance on the sum of ensemble weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Tolerance on `p * n` being a whole number of votes.
pub const VOTE_FRACTION_TOL: f64 = 1e-9;

static TIE_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of exact reward ties observed by [`LinearRewardModel::prefers`] since process
/// start (or the last [`reset_tie_warnings`]).
pub fn tie_warnings() -> u64 {
    TIE_WARNINGS.load(Ordering::Relaxed)
}

pub fn reset_tie_warnings() {
    TIE_WARNINGS.store(0, Ordering::Relaxed);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "embedding entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// The two responses of a comparison, as embeddings of (context, response).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTriple {
    pub id: String,
    phi_a: Embedding,
    phi_b: Embedding,
}

impl ComparisonTriple {
    pub fn new(id: impl Into<String>, phi_a: Embedding, phi_b: Embedding) -> Result<Self> {
        Error::check_dim(phi_a.dim(), phi_b.dim())?;
        if phi_a == phi_b {
            return Err(Error::InvalidData(
                "identical response embeddings in one comparison".into(),
            ));
        }
        Ok(Self {
            id: id.into(),
            phi_a,
            phi_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi_a.dim()
    }

    pub fn phi_a(&self) -> &Embedding {
        &self.phi_a
    }

    pub fn phi_b(&self) -> &Embedding {
        &self.phi_b
    }

    /// `phi_a - phi_b`.
    pub fn difference(&self) -> Vec<f64> {
        self.phi_a
            .as_slice()
            .iter()
            .zip(self.phi_b.as_slice())
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// One aggregated comparison: `p` is the fraction of `n` annotators preferring the first response.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub triple: ComparisonTriple,
    pub p: f64,
    pub n: u32,
}

impl PreferenceRecord {
    pub fn new(triple: ComparisonTriple, p: f64, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidData("annotator count n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidData(format!("p = {p} outside [0, 1]")));
        }
        let votes = p * n as f64;
        if (votes - votes.round()).abs() > VOTE_FRACTION_TOL {
            return Err(Error::InvalidData(format!(
                "p = {p} is not a vote fraction of n = {n}"
            )));
        }
        Ok(Self { triple, p, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    dim: usize,
}

impl PreferenceDataset {
    pub fn new(dim: usize, records: Vec<PreferenceRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            Error::check_dim(dim, r.triple.dim())?;
            if !seen.insert(r.triple.id.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate record id {:?}",
                    r.triple.id
                )));
            }
        }
        Ok(Self { records, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p).collect()
    }

    pub fn triples(&self) -> impl Iterator<Item = &ComparisonTriple> {
        self.records.iter().map(|r| &r.triple)
    }

    /// Splits off the trailing `count` records.
    pub fn split_tail(mut self, count: usize) -> (Self, Self) {
        let at = self.records.len().saturating_sub(count);
        let tail = self.records.split_off(at);
        let dim = self.dim;
        (
            Self {
                records: self.records,
                dim,
            },
            Self { records: tail, dim },
        )
    }
}

/// `r(e) = theta . e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRewardModel {
    theta: Vec<f64>,
}

impl LinearRewardModel {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("theta entry {i} is not finite")));
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn reward(&self, e: &Embedding) -> Result<f64> {
        Error::check_dim(self.dim(), e.dim())?;
        Ok(dot(&self.theta, e.as_slice()))
    }

    /// Strict preference for the first response. An exact tie yields `false` and bumps
    /// the global tie counter.
    pub fn prefers(&self, t: &ComparisonTriple) -> Result<bool> {
        Error::check_dim(self.dim(), t.dim())?;
        Ok(self.prefers_unchecked(t))
    }

    pub(crate) fn prefers_unchecked(&self, t: &ComparisonTriple) -> bool {
        let ra = dot(&self.theta, t.phi_a.as_slice());
        let rb = dot(&self.theta, t.phi_b.as_slice());
        if ra == rb {
            TIE_WARNINGS.fetch_add(1, Ordering::Relaxed);
        }
        ra > rb
    }

    /// Preference probability of the KL-regularized optimal policy induced by this reward:
    /// `sigmoid((r(a) - r(b)) / beta + log_ref_ratio)`. Tends to the strict indicator as
    /// `beta -> 0`.
    pub fn soft_preference_prob(
        &self,
        t: &ComparisonTriple,
        beta: f64,
        log_ref_ratio: f64,
    ) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Error::check_dim(self.dim(), t.dim())?;
        let gap = dot(&self.theta, t.phi_a.as_slice()) - dot(&self.theta, t.phi_b.as_slice());
        Ok(sigmoid(gap / beta + log_ref_ratio))
    }
}

/// A mixture of reward models with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    models: Vec<LinearRewardModel>,
    weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(models: Vec<LinearRewardModel>, weights: Vec<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("ensemble needs at least one model"));
        }
        if models.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} models but {} weights",
                models.len(),
                weights.len()
            )));
        }
        let dim = models[0].dim();
        for m in &models {
            Error::check_dim(dim, m.dim())?;
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("negative or non-finite weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { models, weights })
    }

    /// Uniform weights over `models`.
    pub fn uniform(models: Vec<LinearRewardModel>) -> Result<Self> {
        let k = models.len().max(1);
        Self::new(models, vec![1.0 / k as f64; k])
    }

    pub fn single(model: LinearRewardModel) -> Self {
        Self {
            models: vec![model],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[LinearRewardModel] {
        &self.models
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `p_hat(t) = sum_j alpha_j * 1[r_j(a) > r_j(b)]`.
    pub fn preference_prob(&self, t: &ComparisonTriple) -> Result<f64> {
        Error::check_dim(self.dim(), t.dim())?;
        Ok(self.preference_prob_unchecked(t))
    }

    pub(crate) fn preference_prob_unchecked(&self, t: &ComparisonTriple) -> f64 {
        weighted_vote(
            &self.weights,
            self.models.iter().map(|m| m.prefers_unchecked(t)),
        )
    }
}

/// Sequential weighted vote count. Shared by ensembles and populations so that an ensemble
/// made of a population's own annotators reproduces its vote fraction bit-for-bit.
pub(crate) fn weighted_vote(weights: &[f64], votes: impl Iterator<Item = bool>) -> f64 {
    let mut acc = 0.0;
    for (w, v) in weights.iter().zip(votes) {
        if v {
            acc += w;
        }
    }
    acc
}

/// Free-function forms of the elementary operations.
pub fn reward(model: &LinearRewardModel, e: &Embedding) -> Result<f64> {
    model.reward(e)
}

pub fn prefers(model: &LinearRewardModel, t: &ComparisonTriple) -> Result<bool> {
    model.prefers(t)
}

pub fn ensemble_preference_prob(ens: &Ensemble, t: &ComparisonTriple) -> Result<f64> {
    ens.preference_prob(t)
}

pub fn soft_preference_prob(
    model: &LinearRewardModel,
    t: &ComparisonTriple,
    beta: f64,
    log_ref_ratio: f64,
) -> Result<f64> {
    model.soft_preference_prob(t, beta, log_ref_ratio)
}
