//! Mixture-weight optimization on the probability simplex.
//!
//! Minimizes `(1/N) ||V a - p||^2` over `a` in the simplex, where `V` is the N x j matrix
//! of binary votes (record i, model j) and `p` the observed vote fractions. Solved by
//! projected gradient descent with step `1 / L`, `L` the Lipschitz constant of the
//! gradient, and an exact Euclidean projection onto the simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_mean;

/// Column-major binary vote matrix: `column(j)[i]` is 1 iff model `j` prefers the first
/// response of record `i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndicatorMatrix {
    rows: usize,
    columns: Vec<Vec<bool>>,
}

impl IndicatorMatrix {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            columns: Vec::new(),
        }
    }

    /// From an N x j row-major matrix with entries in {0, 1}.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let j = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(n); j];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {j}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 | 1 => columns[c].push(v == 1),
                    _ => {
                        return Err(Error::invalid(format!(
                            "entry ({i}, {c}) = {v} is not binary"
                        )))
                    }
                }
            }
        }
        Ok(Self { rows: n, columns })
    }

    pub fn push_column(&mut self, column: Vec<bool>) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: column.len(),
            });
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[bool] {
        &self.columns[j]
    }

    /// `(V a)_i` accumulated in model order, matching [`crate::model::Ensemble`]'s vote sum.
    pub fn mix(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (col, &w) in self.columns.iter().zip(weights) {
            for (o, &v) in out.iter_mut().zip(col) {
                if v {
                    *o += w;
                }
            }
        }
        out
    }

    /// `(1/N) ||V a - p||^2`, evaluated record by record.
    pub fn objective(&self, weights: &[f64], targets: &[f64]) -> f64 {
        compensated_mean(
            self.mix(weights)
                .iter()
                .zip(targets)
                .map(|(m, p)| (m - p) * (m - p)),
        )
        .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptConfig {
    pub iters: usize,
    pub tol: f64,
}

impl Default for WeightOptConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection of `v` onto `{x : x >= 0, sum x = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - tau).max(0.0)).collect();
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= s);
    }
    x
}

/// Simplex-constrained least squares fit of mixture weights.
///
/// The returned objective never exceeds that of uniform weights, nor that of `warm_start`
/// when one is supplied.
pub fn reoptimize_weights(
    votes: &IndicatorMatrix,
    targets: &[f64],
    cfg: &WeightOptConfig,
    warm_start: Option<&[f64]>,
) -> Result<WeightFit> {
    let j = votes.cols();
    if j == 0 {
        return Err(Error::invalid(
            "weight optimization needs at least one model",
        ));
    }
    if targets.len() != votes.rows() {
        return Err(Error::DimensionMismatch {
            expected: votes.rows(),
            found: targets.len(),
        });
    }
    if let Some(p) = targets.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("target {p} outside [0, 1]")));
    }
    let uniform = vec![1.0 / j as f64; j];
    if j == 1 {
        return Ok(WeightFit {
            objective: votes.objective(&uniform, targets),
            weights: uniform,
            iterations: 0,
        });
    }
    let n = votes.rows().max(1) as f64;

    // Normal equations: objective = a'Ga - 2h'a + c.
    let mut gram = DMatrix::<f64>::zeros(j, j);
    let mut h = DVector::<f64>::zeros(j);
    for a in 0..j {
        let ca = votes.column(a);
        h[a] = ca
            .iter()
            .zip(targets)
            .filter(|(v, _)| **v)
            .map(|(_, p)| p)
            .sum::<f64>()
            / n;
        for b in a..j {
            let cb = votes.column(b);
            let both = ca.iter().zip(cb).filter(|(x, y)| **x && **y).count() as f64 / n;
            gram[(a, b)] = both;
            gram[(b, a)] = both;
        }
    }
    let lipschitz = 2.0 * gram.clone().symmetric_eigenvalues().max();
    let step = if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1.0
    };
    let quad = |a: &DVector<f64>| (a.transpose() * &gram * a)[(0, 0)] - 2.0 * h.dot(a);

    let start: Vec<f64> = match warm_start {
        Some(w) if w.len() == j => project_to_simplex(w),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: j,
                found: w.len(),
            })
        }
        None => uniform.clone(),
    };
    let mut alpha = DVector::from_vec(start.clone());
    let mut value = quad(&alpha);
    let mut iterations = 0;
    for it in 0..cfg.iters {
        iterations = it + 1;
        let grad = (&gram * &alpha - &h) * 2.0;
        let next = DVector::from_vec(project_to_simplex((&alpha - grad * step).as_slice()));
        let next_value = quad(&next);
        let change = (value - next_value).abs();
        alpha = next;
        value = next_value;
        if change < cfg.tol {
            break;
        }
    }

    let mut best = WeightFit {
        objective: votes.objective(alpha.as_slice(), targets),
        weights: alpha.as_slice().to_vec(),
        iterations,
    };
    for fallback in [start, uniform] {
        let obj = votes.objective(&fallback, targets);
        if obj < best.objective {
            best = WeightFit {
                weights: fallback,
                objective: obj,
                iterations,
            };
        }
    }
    Ok(best)
}
