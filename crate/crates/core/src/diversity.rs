//! Best-of-N rankings per ensemble member and Kendall rank correlation between them.

use crate::error::{Error, Result};
use crate::model::{Embedding, LinearRewardModel};
use crate::numeric::{compensated_mean, dot};
use crate::tournament::Ranking;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptCandidates {
    pub prompt_id: String,
    candidates: Vec<Embedding>,
}

impl PromptCandidates {
    pub fn new(prompt_id: impl Into<String>, candidates: Vec<Embedding>) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::invalid("a prompt needs at least two candidates"));
        }
        let dim = candidates[0].dim();
        for c in &candidates {
            Error::check_dim(dim, c.dim())?;
        }
        Ok(Self {
            prompt_id: prompt_id.into(),
            candidates,
        })
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].dim()
    }

    pub fn candidates(&self) -> &[Embedding] {
        &self.candidates
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRanking {
    pub ranking: Ranking,
    /// True if any two candidates received exactly the same reward.
    pub had_ties: bool,
}

/// Candidates sorted by reward, highest first; equal rewards keep ascending index order.
pub fn rank_candidates(
    model: &LinearRewardModel,
    pc: &PromptCandidates,
) -> Result<CandidateRanking> {
    Error::check_dim(model.dim(), pc.dim())?;
    let rewards: Vec<f64> = pc
        .candidates
        .iter()
        .map(|c| dot(model.theta(), c.as_slice()))
        .collect();
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    let had_ties = order.windows(2).any(|w| rewards[w[0]] == rewards[w[1]]);
    Ok(CandidateRanking {
        ranking: Ranking::new(order)?,
        had_ties,
    })
}

/// Kendall's tau-a: `(concordant - discordant) / C(N, 2)`.
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("Kendall tau needs at least two items"));
    }
    let pa = a.positions();
    let pb = b.positions();
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let sa = pa[i] < pa[j];
            let sb = pb[i] < pb[j];
            score += if sa == sb { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Symmetric k x k matrix of mean Kendall tau between members' rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix {
    size: usize,
    values: Vec<f64>,
    /// Number of (model, prompt) rankings that needed tie-breaking.
    pub tie_flags: usize,
}

impl TauMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size + b]
    }

    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).flat_map(move |a| {
            (0..self.size)
                .filter(move |&b| b != a)
                .map(move |b| self.get(a, b))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for b in 0..self.size {
            out.push_str(&format!(",m{b}"));
        }
        out.push('\n');
        for a in 0..self.size {
            out.push_str(&format!("m{a}"));
            for b in 0..self.size {
                out.push_str(&format!(",{}", self.get(a, b)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn tau_matrix(models: &[LinearRewardModel], prompts: &[PromptCandidates]) -> Result<TauMatrix> {
    if models.len() < 2 {
        return Err(Error::invalid("tau matrix needs at least two models"));
    }
    if prompts.is_empty() {
        return Err(Error::invalid("tau matrix needs at least one prompt"));
    }
    let mut tie_flags = 0;
    let rankings: Vec<Vec<Ranking>> = models
        .iter()
        .map(|m| {
            prompts
                .iter()
                .map(|pc| {
                    let r = rank_candidates(m, pc)?;
                    tie_flags += usize::from(r.had_ties);
                    Ok(r.ranking)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let k = models.len();
    let mut values = vec![0.0; k * k];
    for a in 0..k {
        values[a * k + a] = 1.0;
        for b in a + 1..k {
            let taus = rankings[a]
                .iter()
                .zip(&rankings[b])
                .map(|(x, y)| kendall_tau(x, y))
                .collect::<Result<Vec<_>>>()?;
            let mean = compensated_mean(taus).unwrap();
            values[a * k + b] = mean;
            values[b * k + a] = mean;
        }
    }
    Ok(TauMatrix {
        size: k,
        values,
        tie_flags,
    })
}
