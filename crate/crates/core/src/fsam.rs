//! Forward stagewise additive construction of a calibrated ensemble.
//!
//! Iteration 1 fits a reward model to the soft labels `p`. Iteration `j > 1` fits a new
//! model to the residual `p - p_hat` of the current ensemble, using
//! `sigmoid(r(a) - r(b))` as a differentiable stand-in for the binary vote. After each fit
//! the mixture weights of all `j` models are re-optimized on the simplex against the
//! training MSE.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::empirical_calibration_mse;
use crate::model::{Ensemble, LinearRewardModel, PreferenceDataset};
use crate::numeric::{compensated_mean, dot, sigmoid};
use crate::population::{gaussian_vec, substream};
use crate::weights::{reoptimize_weights, IndicatorMatrix, WeightOptConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k_max: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set from the experiment seed, never from a config section.
    #[serde(skip)]
    pub seed: u64,
    pub weight_opt_iters: usize,
    pub weight_opt_tol: f64,
    pub patience: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            lr: 0.5,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            weight_opt_iters: 2000,
            weight_opt_tol: 1e-10,
            patience: 3,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "k_max, epochs, batch_size and patience must be >= 1",
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(self.init_scale >= 0.0)
            || !self.weight_opt_tol.is_finite()
            || self.weight_opt_tol < 0.0
        {
            return Err(Error::invalid(
                "init_scale and weight_opt_tol must be nonnegative",
            ));
        }
        Ok(())
    }

    fn weight_opt(&self) -> WeightOptConfig {
        WeightOptConfig {
            iters: self.weight_opt_iters,
            tol: self.weight_opt_tol,
        }
    }
}

/// Squared-error objective `mean (target - sigmoid(theta . d))^2` over response differences
/// `d = phi_a - phi_b`.
#[derive(Debug, Clone)]
pub struct SoftLabelObjective {
    diffs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl SoftLabelObjective {
    pub fn new(diffs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if diffs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: diffs.len(),
                found: targets.len(),
            });
        }
        if let Some(d) = diffs.first() {
            for x in &diffs {
                Error::check_dim(d.len(), x.len())?;
            }
        }
        Ok(Self { diffs, targets })
    }

    pub fn from_dataset(ds: &PreferenceDataset, targets: &[f64]) -> Result<Self> {
        Self::new(
            ds.triples().map(|t| t.difference()).collect(),
            targets.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.diffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diffs.is_empty()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.loss_on(theta, 0..self.len())
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.gradient_on(theta, 0..self.len())
    }

    fn loss_on(&self, theta: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
        compensated_mean(idx.map(|i| {
            let e = self.targets[i] - sigmoid(dot(theta, &self.diffs[i]));
            e * e
        }))
        .unwrap_or(0.0)
    }

    /// Per record: `2 (s - target) s (1 - s) d` with `s = sigmoid(theta . d)`, averaged.
    fn gradient_on(&self, theta: &[f64], idx: impl Iterator<Item = usize>) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let mut count = 0usize;
        for i in idx {
            let d = &self.diffs[i];
            let s = sigmoid(dot(theta, d));
            let coef = 2.0 * (s - self.targets[i]) * s * (1.0 - s);
            for (gk, dk) in g.iter_mut().zip(d) {
                *gk += coef * dk;
            }
            count += 1;
        }
        if count > 0 {
            g.iter_mut().for_each(|x| *x /= count as f64);
        }
        g
    }
}

/// Mini-batch gradient descent on the soft-label objective, starting from `init`.
pub fn fit_soft_label_model(
    ds: &PreferenceDataset,
    targets: &[f64],
    cfg: &TrainConfig,
    init: LinearRewardModel,
) -> Result<LinearRewardModel> {
    if targets.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            found: targets.len(),
        });
    }
    Error::check_dim(ds.dim(), init.dim())?;
    let objective = SoftLabelObjective::from_dataset(ds, targets)?;
    fit_objective(&objective, cfg, init, cfg.seed)
}

fn fit_objective(
    objective: &SoftLabelObjective,
    cfg: &TrainConfig,
    init: LinearRewardModel,
    stream_seed: u64,
) -> Result<LinearRewardModel> {
    cfg.validate()?;
    let mut rng = substream(stream_seed, 0x5348_5546);
    let mut order: Vec<usize> = (0..objective.len()).collect();
    let mut theta = init.theta().to_vec();
    let mut last_finite = init;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = objective.gradient_on(&theta, batch.iter().copied());
            for (t, gk) in theta.iter_mut().zip(g) {
                *t -= cfg.lr * gk;
            }
        }
        let loss = objective.loss(&theta);
        if !loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, last_finite });
        }
        last_finite = LinearRewardModel::new(theta.clone())?;
    }
    Ok(last_finite)
}

/// `p - p_hat` per record. Values may fall outside `[0, 1]`.
pub fn residuals(ens: &Ensemble, ds: &PreferenceDataset) -> Result<Vec<f64>> {
    Error::check_dim(ens.dim(), ds.dim())?;
    Ok(ds
        .records()
        .iter()
        .map(|r| r.p - ens.preference_prob_unchecked(&r.triple))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Ensemble size after this iteration (for rejected iterations, the attempted size).
    pub k: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub accepted: bool,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxModels,
    EarlyStopped,
    TrainMseIncreased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    /// Every accepted model, in insertion order.
    pub models: Vec<LinearRewardModel>,
    /// Ensemble size of the snapshot with the lowest validation MSE.
    pub best_k: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(|it| it.accepted)
    }

    /// The accepted ensemble of size `k`, if training reached it.
    pub fn snapshot(&self, k: usize) -> Option<Ensemble> {
        let rec = self.accepted().find(|it| it.k == k)?;
        Ensemble::new(self.models[..k].to_vec(), rec.weights.clone()).ok()
    }

    pub fn train_mse_nonincreasing(&self, tol: f64) -> bool {
        let mses: Vec<f64> = self.accepted().map(|it| it.train_mse).collect();
        mses.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

fn votes_of(model: &LinearRewardModel, ds: &PreferenceDataset) -> Vec<bool> {
    ds.triples().map(|t| model.prefers_unchecked(t)).collect()
}

/// Builds an ensemble stagewise and returns the snapshot with the best validation MSE.
pub fn fsam_train(
    train: &PreferenceDataset,
    val: &PreferenceDataset,
    cfg: &TrainConfig,
) -> Result<(Ensemble, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    Error::check_dim(train.dim(), val.dim())?;
    let dim = train.dim();
    let p = train.targets();
    let diffs: Vec<Vec<f64>> = train.triples().map(|t| t.difference()).collect();

    let mut models: Vec<LinearRewardModel> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut votes = IndicatorMatrix::new(train.len());
    let mut iterations = Vec::new();
    let mut prev_train = f64::INFINITY;
    let mut best: Option<(usize, f64)> = None;
    let mut since_best = 0usize;
    let mut stop_reason = StopReason::MaxModels;

    for j in 1..=cfg.k_max {
        let targets = if models.is_empty() {
            p.clone()
        } else {
            let mix = votes.mix(&weights);
            p.iter().zip(mix).map(|(pi, m)| pi - m).collect()
        };
        let objective = SoftLabelObjective::new(diffs.clone(), targets)?;
        let iter_seed = cfg.seed.wrapping_add(j as u64);
        let mut init_rng = substream(iter_seed, 0x494e_4954);
        let init = LinearRewardModel::new(gaussian_vec(&mut init_rng, dim, cfg.init_scale))?;
        let model = fit_objective(&objective, cfg, init, iter_seed)?;

        let mut candidate_votes = votes.clone();
        candidate_votes.push_column(votes_of(&model, train))?;
        let warm: Vec<f64> = weights
            .iter()
            .copied()
            .chain(std::iter::once(0.0))
            .collect();
        let fit = reoptimize_weights(&candidate_votes, &p, &cfg.weight_opt(), Some(&warm))?;

        let mut candidate_models = models.clone();
        candidate_models.push(model);
        let candidate = Ensemble::new(candidate_models.clone(), fit.weights.clone())?;
        let val_mse = empirical_calibration_mse(&candidate, val)?;
        let accepted = fit.objective <= prev_train;
        iterations.push(IterationRecord {
            k: j,
            train_mse: fit.objective,
            val_mse,
            accepted,
            weights: fit.weights.clone(),
        });
        if !accepted {
            stop_reason = StopReason::TrainMseIncreased;
            break;
        }
        models = candidate_models;
        weights = fit.weights;
        votes = candidate_votes;
        prev_train = fit.objective;

        match best {
            Some((_, b)) if val_mse >= b => since_best += 1,
            _ => {
                best = Some((j, val_mse));
                since_best = 0;
            }
        }
        if since_best >= cfg.patience && j < cfg.k_max {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let best_k = best
        .map(|(k, _)| k)
        .expect("first iteration is always accepted");
    let report = TrainReport {
        iterations,
        models,
        best_k,
        stop_reason,
    };
    let ensemble = report.snapshot(best_k).expect("best snapshot exists");
    Ok((ensemble, report))
}
