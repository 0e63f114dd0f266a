//! Rankings, tournament graphs and mixtures of linear orders over `m` responses.
//!
//! Pairs `(i, j)` with `i < j` are indexed lexicographically:
//! `(0,1), (0,2), ..., (0,m-1), (1,2), ...`. A graph entry is the fraction preferring
//! response `i` to response `j`.
//!
//! A graph is realizable by some mixture of rankings iff it lies in the convex hull of
//! ranking incidence vectors. [`exact_decompose`] decides this for small `m` by enumerating
//! all `m!` rankings and solving the feasibility LP; a basic solution uses at most
//! `C(m, 2) + 1` rankings.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::phase_one;
use crate::numeric::compensated_mean;
use crate::population::substream;

/// Largest `m` accepted by [`exact_decompose`] (7! = 5040 columns).
pub const DEFAULT_M_GUARD: usize = 7;

/// Default feasibility tolerance for [`exact_decompose`].
pub const DEFAULT_DECOMPOSE_TOL: f64 = 1e-9;

pub fn num_pairs(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Lexicographic index of pair `(i, j)`, `i < j < m`.
pub fn pair_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

/// Iterator over pairs `(i, j)`, `i < j`, in index order.
pub fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// A linear order, most-preferred first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ranking {
    order: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Ranking {
    type Error = Error;
    fn try_from(order: Vec<usize>) -> Result<Self> {
        Ranking::new(order)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Self {
        r.order
    }
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let m = order.len();
        let mut seen = vec![false; m];
        for &x in &order {
            if x >= m || seen[x] {
                return Err(Error::InvalidData(format!(
                    "{order:?} is not a permutation of 0..{m}"
                )));
            }
            seen[x] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            order: (0..m).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `positions()[item]` is the rank of `item` (0 = top).
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (rank, &item) in self.order.iter().enumerate() {
            pos[item] = rank;
        }
        pos
    }

    pub fn reversed(&self) -> Self {
        Self {
            order: self.order.iter().rev().copied().collect(),
        }
    }

    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(rng);
        Self { order }
    }
}

/// Entry `(i, j)` is 1 iff `i` precedes `j`.
pub fn incidence_vector(r: &Ranking) -> Vec<u8> {
    let m = r.len();
    let pos = r.positions();
    pairs(m).map(|(i, j)| u8::from(pos[i] < pos[j])).collect()
}

/// All `m!` rankings in lexicographic order.
pub fn all_rankings(m: usize) -> Vec<Ranking> {
    let mut perm: Vec<usize> = (0..m).collect();
    let mut out = Vec::new();
    loop {
        out.push(Ranking {
            order: perm.clone(),
        });
        // next lexicographic permutation
        let Some(i) = (1..m).rev().find(|&i| perm[i - 1] < perm[i]) else {
            break;
        };
        let j = (i..m).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentGraph {
    m: usize,
    p: Vec<f64>,
}

impl TournamentGraph {
    pub fn new(m: usize, p: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("a tournament needs m >= 2"));
        }
        if p.len() != num_pairs(m) {
            return Err(Error::DimensionMismatch {
                expected: num_pairs(m),
                found: p.len(),
            });
        }
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidData(format!(
                "graph entry {x} outside [0, 1]"
            )));
        }
        Ok(Self { m, p })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entries(&self) -> &[f64] {
        &self.p
    }

    /// Fraction preferring `i` over `j` (any order of `i != j`).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.p[pair_index(i, j, self.m)]
        } else {
            1.0 - self.p[pair_index(j, i, self.m)]
        }
    }

    pub fn linf_distance(&self, other: &TournamentGraph) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDistribution {
    support: Vec<(Ranking, f64)>,
}

impl RankingDistribution {
    pub fn new(support: Vec<(Ranking, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("distribution needs nonempty support"));
        }
        let m = support[0].0.len();
        let mut seen = std::collections::HashSet::new();
        for (r, w) in &support {
            Error::check_dim(m, r.len())?;
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidData(format!(
                    "ranking probability {w} must be positive"
                )));
            }
            if !seen.insert(r.clone()) {
                return Err(Error::InvalidData(format!(
                    "duplicate ranking {:?}",
                    r.order()
                )));
            }
        }
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { support })
    }

    /// Empirical distribution of a multiset of rankings.
    pub fn from_samples(samples: &[Ranking]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        let mut counts: BTreeMap<&Ranking, usize> = BTreeMap::new();
        for r in samples {
            *counts.entry(r).or_default() += 1;
        }
        let k = samples.len() as f64;
        Self::new(
            counts
                .into_iter()
                .map(|(r, c)| (r.clone(), c as f64 / k))
                .collect(),
        )
    }

    pub fn point_mass(r: Ranking) -> Self {
        Self {
            support: vec![(r, 1.0)],
        }
    }

    pub fn m(&self) -> usize {
        self.support[0].0.len()
    }

    pub fn support(&self) -> &[(Ranking, f64)] {
        &self.support
    }

    /// One draw by inverse CDF.
    pub fn sample(&self, rng: &mut impl Rng) -> &Ranking {
        let u: f64 = rng.random::<f64>() * self.support.iter().map(|(_, w)| w).sum::<f64>();
        let mut acc = 0.0;
        for (r, w) in &self.support {
            acc += w;
            if u < acc {
                return r;
            }
        }
        &self.support.last().unwrap().0
    }
}

/// `sum_sigma p_sigma x^sigma`.
pub fn graph_from_distribution(d: &RankingDistribution) -> TournamentGraph {
    let m = d.m();
    let mut p = vec![0.0; num_pairs(m)];
    for (r, w) in d.support() {
        for (e, x) in p.iter_mut().zip(incidence_vector(r)) {
            if x == 1 {
                *e += w;
            }
        }
    }
    // Rounding can push a sum of probabilities a hair past 1.
    p.iter_mut().for_each(|e| *e = e.clamp(0.0, 1.0));
    TournamentGraph { m, p }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    Feasible {
        distribution: RankingDistribution,
        /// L-infinity gap between the input graph and the reconstruction.
        reconstruction_error: f64,
    },
    /// The phase-one residual is nonzero but within the boundary band; no verdict.
    Boundary {
        residual: f64,
    },
    Infeasible {
        residual: f64,
    },
}

impl Decomposition {
    pub fn verdict(&self) -> &'static str {
        match self {
            Decomposition::Feasible { .. } => "feasible",
            Decomposition::Boundary { .. } => "boundary",
            Decomposition::Infeasible { .. } => "infeasible",
        }
    }
}

pub fn exact_decompose(g: &TournamentGraph, tol: f64) -> Result<Decomposition> {
    exact_decompose_with_guard(g, tol, DEFAULT_M_GUARD)
}

/// Decides whether `g` is a mixture of rankings and, if so, returns a mixture with at most
/// `C(m, 2) + 1` rankings that reproduces it.
///
/// Verdicts: feasible when the phase-one residual is `<= tol` (and the recovered mixture
/// reconstructs `g` within `tol`), infeasible when it exceeds `sqrt(tol)`, boundary between.
pub fn exact_decompose_with_guard(
    g: &TournamentGraph,
    tol: f64,
    m_guard: usize,
) -> Result<Decomposition> {
    let m = g.m();
    if m > m_guard {
        return Err(Error::TooLarge { m, guard: m_guard });
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let rankings = all_rankings(m);
    let pair_count = num_pairs(m);
    let rows = pair_count + 1;
    let mut a = DMatrix::<f64>::zeros(rows, rankings.len());
    for (c, r) in rankings.iter().enumerate() {
        for (row, x) in incidence_vector(r).into_iter().enumerate() {
            a[(row, c)] = x as f64;
        }
        a[(pair_count, c)] = 1.0;
    }
    let mut b = g.entries().to_vec();
    b.push(1.0);

    let out = phase_one(&a, &b);
    let residual = out.artificial_sum;
    if residual > tol.sqrt() {
        return Ok(Decomposition::Infeasible { residual });
    }
    if residual > tol {
        return Ok(Decomposition::Boundary { residual });
    }

    let support: Vec<(Ranking, f64)> = out
        .x
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(c, &x)| (rankings[c].clone(), x))
        .collect();
    let total: f64 = support.iter().map(|(_, w)| w).sum();
    let support = support.into_iter().map(|(r, w)| (r, w / total)).collect();
    let distribution = RankingDistribution::new(support)?;
    let reconstruction_error = graph_from_distribution(&distribution).linf_distance(g);
    if reconstruction_error > tol {
        return Ok(Decomposition::Boundary {
            residual: reconstruction_error,
        });
    }
    Ok(Decomposition::Feasible {
        distribution,
        reconstruction_error,
    })
}

/// Ensemble size guaranteeing expected calibration error `<= epsilon`: `ceil(1 / (4 epsilon))`.
pub fn calibrated_ensemble_size(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 0.25) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 0.25], got {epsilon}"
        )));
    }
    // Guard against 1/(4 eps) landing a few ulps above an integer.
    let raw = 1.0 / (4.0 * epsilon);
    let k = if (raw - raw.round()).abs() <= 1e-9 * raw {
        raw.round()
    } else {
        raw.ceil()
    };
    Ok(k as usize)
}

/// Draws `ceil(1 / (4 epsilon))` rankings i.i.d. from `population` and returns their
/// uniform mixture.
pub fn sample_calibrated_ensemble(
    population: &RankingDistribution,
    epsilon: f64,
    seed: u64,
) -> Result<RankingDistribution> {
    let k = calibrated_ensemble_size(epsilon)?;
    let mut rng = substream(seed, 0x5448_4d32);
    let samples: Vec<Ranking> = (0..k)
        .map(|_| population.sample(&mut rng).clone())
        .collect();
    RankingDistribution::from_samples(&samples)
}

/// Mean over pairs of the squared gap between the two induced graphs.
pub fn tournament_calibration_mse(
    candidate: &RankingDistribution,
    truth: &RankingDistribution,
) -> Result<f64> {
    Error::check_dim(truth.m(), candidate.m())?;
    let a = graph_from_distribution(candidate);
    let b = graph_from_distribution(truth);
    Ok(compensated_mean(a.p.iter().zip(&b.p).map(|(x, y)| (x - y) * (x - y))).unwrap_or(0.0))
}

/// Uniform mixture of `count` rankings drawn uniformly at random (duplicates merged).
pub fn random_ranking_population(count: usize, m: usize, seed: u64) -> Result<RankingDistribution> {
    let mut rng = substream(seed, 0x504f_5055);
    let samples: Vec<Ranking> = (0..count).map(|_| Ranking::random(m, &mut rng)).collect();
    RankingDistribution::from_samples(&samples)
}

/// Random mixture of `size` rankings with Dirichlet-like (normalized uniform) weights.
pub fn random_mixture(size: usize, m: usize, rng: &mut impl Rng) -> Result<RankingDistribution> {
    let mut merged: BTreeMap<Ranking, f64> = BTreeMap::new();
    for _ in 0..size {
        let w: f64 = rng.random::<f64>() + 1e-3;
        *merged.entry(Ranking::random(m, rng)).or_default() += w;
    }
    let total: f64 = merged.values().sum();
    RankingDistribution::new(merged.into_iter().map(|(r, w)| (r, w / total)).collect())
}
