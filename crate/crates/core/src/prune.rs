//! Disagreement scores and outlier pruning.
//!
//! A model's disagreement with a preference target is the mean absolute gap between its
//! binary vote and the target fraction. Pruning ranks ensemble members by disagreement
//! with the ensemble's own `p_hat`, removes the most disagreeing members while their total
//! weight stays within `1 / (beta - 1)`, and renormalizes. It never looks at `p*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::population_calibration_mse;
use crate::model::{ComparisonTriple, Ensemble, LinearRewardModel};
use crate::numeric::compensated_mean;
use crate::population::SyntheticPopulation;

fn check_triples(dim: usize, triples: &[ComparisonTriple]) -> Result<()> {
    if triples.is_empty() {
        return Err(Error::invalid("disagreement needs at least one triple"));
    }
    triples
        .iter()
        .try_for_each(|t| Error::check_dim(dim, t.dim()))
}

fn vote(model: &LinearRewardModel, t: &ComparisonTriple) -> f64 {
    if model.prefers_unchecked(t) {
        1.0
    } else {
        0.0
    }
}

/// `mean |1[model prefers a] - p*|` over `triples`.
pub fn disagreement_score(
    model: &LinearRewardModel,
    pop: &SyntheticPopulation,
    triples: &[ComparisonTriple],
) -> Result<f64> {
    check_triples(model.dim(), triples)?;
    Error::check_dim(pop.dim(), model.dim())?;
    Ok(compensated_mean(
        triples
            .iter()
            .map(|t| (vote(model, t) - pop.true_preference_fraction_unchecked(t)).abs()),
    )
    .unwrap())
}

/// `mean |1[model prefers a] - p_hat|` over `triples`, `p_hat` from `ens`.
pub fn ensemble_disagreement(
    model: &LinearRewardModel,
    ens: &Ensemble,
    triples: &[ComparisonTriple],
) -> Result<f64> {
    check_triples(model.dim(), triples)?;
    Error::check_dim(ens.dim(), model.dim())?;
    Ok(compensated_mean(
        triples
            .iter()
            .map(|t| (vote(model, t) - ens.preference_prob_unchecked(t)).abs()),
    )
    .unwrap())
}

/// `phi_model > beta * phi_min + gamma`.
pub fn is_outlier(beta: f64, gamma: f64, phi_model: f64, phi_min: f64) -> Result<bool> {
    if !(beta >= 1.0) || !(gamma >= 0.0) {
        return Err(Error::invalid(format!(
            "outlier test needs beta >= 1 and gamma >= 0, got beta = {beta}, gamma = {gamma}"
        )));
    }
    Ok(phi_model > beta * phi_min + gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub removed_mass: f64,
    /// Disagreement of each original member with the original `p_hat`.
    pub disagreements: Vec<f64>,
    /// Smallest disagreement over the candidate set (members plus any extra candidates).
    /// An estimate of the infimum over all reward functions, not the infimum itself.
    pub phi_hat_min: f64,
    /// Calibration MSE before and after pruning, when a reference was supplied.
    pub pre_mse: Option<f64>,
    pub post_mse: Option<f64>,
    /// What `pre_mse` / `post_mse` were measured against.
    pub mse_source: Option<String>,
    pub beta: f64,
    /// `(beta + 1) * sqrt(pre_mse)` with the measured MSE standing in for the true one.
    pub gamma: Option<f64>,
    /// Set when `beta < 2`, outside the range the removal guarantee is stated for.
    pub beta_below_two: bool,
    /// Set when the removal rule would have emptied the ensemble.
    pub kept_minimum_model: bool,
}

impl PruneReport {
    pub fn mass_budget(&self) -> f64 {
        1.0 / (self.beta - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalSelection {
    /// Removed indices, ascending.
    pub removed: Vec<usize>,
    pub removed_mass: f64,
    pub kept_minimum_model: bool,
}

/// The removal rule on precomputed disagreements: visit members from most to least
/// disagreeing (equal scores: higher index first), removing each while the cumulative
/// removed weight including it stays `<= 1 / (beta - 1)`. If that would remove every
/// member, the last one visited is kept.
pub fn select_removals(disagreements: &[f64], weights: &[f64], beta: f64) -> RemovalSelection {
    let budget = 1.0 / (beta - 1.0);
    let mut order: Vec<usize> = (0..disagreements.len()).collect();
    order.sort_by(|&a, &b| {
        disagreements[b]
            .total_cmp(&disagreements[a])
            .then(b.cmp(&a))
    });
    let mut removed = Vec::new();
    let mut prefix_mass = vec![0.0];
    for &j in &order {
        let next = prefix_mass[removed.len()] + weights[j];
        if next > budget {
            break;
        }
        removed.push(j);
        prefix_mass.push(next);
    }
    let mut kept_minimum_model = false;
    if !removed.is_empty() && removed.len() == disagreements.len() {
        removed.pop();
        kept_minimum_model = true;
    }
    let removed_mass = prefix_mass[removed.len()];
    removed.sort_unstable();
    RemovalSelection {
        removed,
        removed_mass,
        kept_minimum_model,
    }
}

/// Prunes the members with the largest disagreement against the ensemble's own `p_hat`.
///
/// Members are visited from most to least disagreeing (equal scores: higher index first)
/// and removed while the cumulative removed weight, including the candidate, stays
/// `<= 1 / (beta - 1)`. At least one model is always kept.
pub fn prune(
    ens: &Ensemble,
    beta: f64,
    triples: &[ComparisonTriple],
) -> Result<(Ensemble, PruneReport)> {
    prune_with_candidates(ens, beta, triples, &[])
}

/// [`prune`], with extra candidate models that only contribute to the `phi_hat_min` estimate.
pub fn prune_with_candidates(
    ens: &Ensemble,
    beta: f64,
    triples: &[ComparisonTriple],
    extra_candidates: &[LinearRewardModel],
) -> Result<(Ensemble, PruneReport)> {
    if !(beta > 1.0) {
        return Err(Error::invalid(format!("beta must exceed 1, got {beta}")));
    }
    check_triples(ens.dim(), triples)?;
    let d: Vec<f64> = ens
        .models()
        .iter()
        .map(|m| ensemble_disagreement(m, ens, triples))
        .collect::<Result<_>>()?;
    let extra: Vec<f64> = extra_candidates
        .iter()
        .map(|m| ensemble_disagreement(m, ens, triples))
        .collect::<Result<_>>()?;
    let phi_hat_min = d
        .iter()
        .chain(&extra)
        .copied()
        .fold(f64::INFINITY, f64::min);

    let selection = select_removals(&d, ens.weights(), beta);
    let weights = ens.weights();
    let removed = selection.removed;
    let removed_mass = selection.removed_mass;
    let kept_minimum_model = selection.kept_minimum_model;
    let kept: Vec<usize> = (0..ens.len()).filter(|j| !removed.contains(j)).collect();

    let kept_total: f64 = kept.iter().map(|&j| weights[j]).sum();
    let pruned = if removed.is_empty() {
        ens.clone()
    } else if kept_total > 0.0 {
        let models = kept.iter().map(|&j| ens.models()[j].clone()).collect();
        let mut w: Vec<f64> = kept.iter().map(|&j| weights[j] / kept_total).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ensemble::new(models, w)?
    } else {
        let models: Vec<_> = kept.iter().map(|&j| ens.models()[j].clone()).collect();
        Ensemble::uniform(models)?
    };

    let report = PruneReport {
        kept,
        removed,
        removed_mass,
        disagreements: d,
        phi_hat_min,
        pre_mse: None,
        post_mse: None,
        mse_source: None,
        beta,
        gamma: None,
        beta_below_two: beta < 2.0,
        kept_minimum_model,
    };
    Ok((pruned, report))
}

impl PruneReport {
    /// Fills in calibration error before and after pruning against a known population.
    pub fn with_population_mse(
        mut self,
        original: &Ensemble,
        pruned: &Ensemble,
        pop: &SyntheticPopulation,
        triples: &[ComparisonTriple],
    ) -> Result<Self> {
        let pre = population_calibration_mse(original, pop, triples)?;
        let post = population_calibration_mse(pruned, pop, triples)?;
        self.pre_mse = Some(pre);
        self.post_mse = Some(post);
        self.gamma = Some((self.beta + 1.0) * pre.sqrt());
        self.mse_source = Some("population".into());
        Ok(self)
    }

    /// Fills in calibration error against observed vote fractions (an empirical stand-in
    /// for the population error).
    pub fn with_empirical_mse(
        mut self,
        original: &Ensemble,
        pruned: &Ensemble,
        ds: &crate::model::PreferenceDataset,
    ) -> Result<Self> {
        let pre = crate::metrics::empirical_calibration_mse(original, ds)?;
        let post = crate::metrics::empirical_calibration_mse(pruned, ds)?;
        self.pre_mse = Some(pre);
        self.post_mse = Some(post);
        self.gamma = Some((self.beta + 1.0) * pre.sqrt());
        self.mse_source = Some("empirical".into());
        Ok(self)
    }
}
