//! Calibration metrics.
//!
//! - population MSE: `E[(p_hat - p*)^2]` over held-out triples, with `p*` exact from a
//!   synthetic population;
//! - empirical MSE (Brier score): `mean (p_hat - p)^2` over a dataset of observed vote
//!   fractions;
//! - irreducible bias: `mean p*(1 - p*) / n`, the expected gap between the two above that
//!   comes from polling only `n` annotators;
//! - single-model floor: `mean min(p^2, (1 - p)^2)`, the best any deterministic single
//!   reward can do on a dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComparisonTriple, Ensemble, PreferenceDataset};
use crate::numeric::compensated_mean;
use crate::population::SyntheticPopulation;

/// Default number of Monte-Carlo triples for population-level metrics.
pub const DEFAULT_EVAL_TRIPLES: usize = 5000;

pub fn population_calibration_mse(
    ens: &Ensemble,
    pop: &SyntheticPopulation,
    triples: &[ComparisonTriple],
) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::invalid("population MSE needs at least one triple"));
    }
    Error::check_dim(pop.dim(), ens.dim())?;
    for t in triples {
        Error::check_dim(ens.dim(), t.dim())?;
    }
    Ok(compensated_mean(triples.iter().map(|t| {
        let d = ens.preference_prob_unchecked(t) - pop.true_preference_fraction_unchecked(t);
        d * d
    }))
    .unwrap())
}

pub fn empirical_calibration_mse(ens: &Ensemble, ds: &PreferenceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("empirical MSE needs a nonempty dataset"));
    }
    Error::check_dim(ens.dim(), ds.dim())?;
    Ok(compensated_mean(ds.records().iter().map(|r| {
        let d = ens.preference_prob_unchecked(&r.triple) - r.p;
        d * d
    }))
    .unwrap())
}

/// Brier score of the ensemble's preference probability against observed fractions.
/// Identical to [`empirical_calibration_mse`].
pub fn brier_score(ens: &Ensemble, ds: &PreferenceDataset) -> Result<f64> {
    empirical_calibration_mse(ens, ds)
}

/// `mean p*(1 - p*) / n`: the variance of a `Bin(n, p*) / n` vote fraction, averaged.
pub fn irreducible_bias(pstars: &[f64], n: u32) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if pstars.is_empty() {
        return Err(Error::invalid("irreducible bias needs at least one p*"));
    }
    if let Some(p) = pstars.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p* = {p} outside [0, 1]")));
    }
    let n = n as f64;
    Ok(compensated_mean(pstars.iter().map(|p| p * (1.0 - p) / n)).unwrap())
}

pub fn single_model_floor(ds: &PreferenceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("floor needs a nonempty dataset"));
    }
    Ok(compensated_mean(ds.records().iter().map(|r| {
        let p = r.p;
        (p * p).min((1.0 - p) * (1.0 - p))
    }))
    .unwrap())
}

/// Excess 0-1 error of a hard decision over the Bayes-optimal one. `choose_first` picks y1.
pub fn regret(choose_first: bool, p: f64) -> f64 {
    let err = if choose_first { 1.0 - p } else { p };
    err - p.min(1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub population_mse: Option<f64>,
    pub empirical_mse: f64,
    /// Alias of `empirical_mse`.
    pub brier_score: f64,
    pub bias_c: Option<f64>,
    pub floor: f64,
    pub mean_regret: f64,
    pub record_count: usize,
    pub eval_triples: Option<usize>,
}

/// Full metric report for an ensemble on a dataset. When a population and held-out
/// triples are given, also reports the population MSE and the bias constant implied by the
/// dataset's annotator counts.
pub fn evaluate(
    ens: &Ensemble,
    ds: &PreferenceDataset,
    population: Option<(&SyntheticPopulation, &[ComparisonTriple])>,
) -> Result<MetricReport> {
    let empirical_mse = empirical_calibration_mse(ens, ds)?;
    let floor = single_model_floor(ds)?;
    // The ensemble's hard decision is y1 whenever p_hat >= 1/2.
    let mean_regret = compensated_mean(
        ds.records()
            .iter()
            .map(|r| regret(ens.preference_prob_unchecked(&r.triple) >= 0.5, r.p)),
    )
    .unwrap();
    let (population_mse, bias_c, eval_triples) = match population {
        Some((pop, triples)) => {
            Error::check_dim(pop.dim(), ds.dim())?;
            let mse = population_calibration_mse(ens, pop, triples)?;
            let bias = compensated_mean(ds.records().iter().map(|r| {
                let ps = pop.true_preference_fraction_unchecked(&r.triple);
                ps * (1.0 - ps) / r.n as f64
            }))
            .unwrap();
            (Some(mse), Some(bias), Some(triples.len()))
        }
        None => (None, None, None),
    };
    Ok(MetricReport {
        population_mse,
        empirical_mse,
        brier_score: empirical_mse,
        bias_c,
        floor,
        mean_regret,
        record_count: ds.len(),
        eval_triples,
    })
}
