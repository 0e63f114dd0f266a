//! Synthetic annotator populations with exactly computable preference fractions.
//!
//! A population is a finite list of annotators, each a linear reward vector with a
//! probability mass. Annotators are drawn around group centers with isotropic Gaussian
//! noise. Datasets are produced by drawing Gaussian response embeddings per prompt and
//! polling `n` annotators (with replacement, by mass) on every candidate pair.
//!
//! Every random draw comes from a ChaCha substream keyed by `(seed, index)`, so a given
//! prompt or annotator is reproducible independently of how many others are generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    weighted_vote, ComparisonTriple, Embedding, Ensemble, LinearRewardModel, PreferenceDataset,
    PreferenceRecord, WEIGHT_SUM_TOL,
};
use crate::numeric::dot;

/// Upper bound on tie-resampling attempts before giving up.
const MAX_TIE_RESAMPLES: usize = 1000;

/// ChaCha substream for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn gaussian_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorGroup {
    pub weight: f64,
    pub center: Vec<f64>,
    #[serde(default)]
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotator {
    pub model: LinearRewardModel,
    pub mass: f64,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    groups: Vec<AnnotatorGroup>,
    annotators: Vec<Annotator>,
    masses: Vec<f64>,
    seed: u64,
    dim: usize,
}

/// Group centers drawn as standard Gaussians, one substream per group.
pub fn random_groups(weights: &[f64], dim: usize, spread: f64, seed: u64) -> Vec<AnnotatorGroup> {
    weights
        .iter()
        .enumerate()
        .map(|(g, &weight)| {
            let mut rng = substream(seed, 0x6772_0000 + g as u64);
            AnnotatorGroup {
                weight,
                center: gaussian_vec(&mut rng, dim, 1.0),
                spread,
            }
        })
        .collect()
}

/// Realizes `annotators_per_group` annotators per group:
/// `theta_i = center_g + spread_g * N(0, I)`, each with mass `weight_g / annotators_per_group`.
pub fn sample_population(
    groups: &[AnnotatorGroup],
    annotators_per_group: usize,
    seed: u64,
) -> Result<SyntheticPopulation> {
    if groups.is_empty() {
        return Err(Error::invalid("population needs at least one group"));
    }
    if annotators_per_group == 0 {
        return Err(Error::invalid("annotators_per_group must be >= 1"));
    }
    let dim = groups[0].center.len();
    if dim == 0 {
        return Err(Error::invalid("group centers must be nonempty"));
    }
    for g in groups {
        Error::check_dim(dim, g.center.len())?;
        if !(g.weight > 0.0 && g.weight <= 1.0) {
            return Err(Error::invalid(format!(
                "group weight {} outside (0, 1]",
                g.weight
            )));
        }
        if !(g.spread >= 0.0) || !g.spread.is_finite() {
            return Err(Error::invalid(format!(
                "group spread {} is invalid",
                g.spread
            )));
        }
    }
    let total: f64 = groups.iter().map(|g| g.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!(
            "group weights sum to {total}, not 1"
        )));
    }

    let mut annotators = Vec::with_capacity(groups.len() * annotators_per_group);
    for (gi, g) in groups.iter().enumerate() {
        let mass = g.weight / annotators_per_group as f64;
        for a in 0..annotators_per_group {
            let idx = (gi * annotators_per_group + a) as u64;
            let theta = if g.spread == 0.0 {
                g.center.clone()
            } else {
                let mut rng = substream(seed, idx);
                let noise = gaussian_vec(&mut rng, dim, g.spread);
                g.center.iter().zip(noise).map(|(c, e)| c + e).collect()
            };
            annotators.push(Annotator {
                model: LinearRewardModel::new(theta)?,
                mass,
                group: gi,
            });
        }
    }
    Ok(SyntheticPopulation {
        groups: groups.to_vec(),
        masses: annotators.iter().map(|a| a.mass).collect(),
        annotators,
        seed,
        dim,
    })
}

impl SyntheticPopulation {
    /// Population built directly from annotator vectors and masses.
    pub fn from_annotators(annotators: Vec<(LinearRewardModel, f64)>) -> Result<Self> {
        if annotators.is_empty() {
            return Err(Error::invalid("population needs at least one annotator"));
        }
        let dim = annotators[0].0.dim();
        let mut out = Vec::with_capacity(annotators.len());
        for (i, (model, mass)) in annotators.into_iter().enumerate() {
            Error::check_dim(dim, model.dim())?;
            if !(mass >= 0.0) {
                return Err(Error::invalid(format!("annotator mass {mass} is negative")));
            }
            out.push(Annotator {
                model,
                mass,
                group: i,
            });
        }
        let total: f64 = out.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "annotator masses sum to {total}, not 1"
            )));
        }
        Ok(Self {
            groups: Vec::new(),
            masses: out.iter().map(|a| a.mass).collect(),
            annotators: out,
            seed: 0,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn groups(&self) -> &[AnnotatorGroup] {
        &self.groups
    }

    pub fn annotators(&self) -> &[Annotator] {
        &self.annotators
    }

    /// Exact fraction (by mass) of annotators strictly preferring the first response.
    pub fn true_preference_fraction(&self, t: &ComparisonTriple) -> Result<f64> {
        Error::check_dim(self.dim, t.dim())?;
        Ok(self.true_preference_fraction_unchecked(t))
    }

    pub(crate) fn true_preference_fraction_unchecked(&self, t: &ComparisonTriple) -> f64 {
        weighted_vote(
            &self.masses,
            self.annotators.iter().map(|a| a.model.prefers_unchecked(t)),
        )
    }

    /// The ensemble made of exactly this population's annotators, weighted by mass.
    pub fn oracle_ensemble(&self) -> Ensemble {
        Ensemble::new(
            self.annotators.iter().map(|a| a.model.clone()).collect(),
            self.masses.clone(),
        )
        .expect("population masses form a valid simplex")
    }

    fn ties_for_anyone(&self, a: &[f64], b: &[f64]) -> bool {
        self.annotators
            .iter()
            .any(|ann| dot(ann.model.theta(), a) == dot(ann.model.theta(), b))
    }

    /// Polls `n` annotators drawn with replacement by mass; returns the fraction preferring `t`'s first response.
    pub fn poll(&self, t: &ComparisonTriple, n: u32, rng: &mut impl Rng) -> f64 {
        let sampler = MassSampler::new(&self.masses);
        let votes = (0..n)
            .filter(|_| {
                self.annotators[sampler.draw(rng)]
                    .model
                    .prefers_unchecked(t)
            })
            .count();
        votes as f64 / n as f64
    }
}

pub fn true_preference_fraction(pop: &SyntheticPopulation, t: &ComparisonTriple) -> Result<f64> {
    pop.true_preference_fraction(t)
}

/// Inverse-CDF sampler over a finite mass vector.
struct MassSampler {
    cumulative: Vec<f64>,
}

impl MassSampler {
    fn new(masses: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u: f64 = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub num_prompts: usize,
    #[serde(default = "default_candidates")]
    pub candidates_per_prompt: usize,
    pub annotators_per_comparison: u32,
    pub embedding_dim: usize,
    #[serde(default = "default_scale")]
    pub embedding_scale: f64,
    /// Set from the experiment seed, never from a config section.
    #[serde(skip)]
    pub seed: u64,
}

fn default_candidates() -> usize {
    2
}

fn default_scale() -> f64 {
    1.0
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts == 0 || self.annotators_per_comparison == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("generation counts must be >= 1"));
        }
        if self.candidates_per_prompt < 2 {
            return Err(Error::invalid("candidates_per_prompt must be >= 2"));
        }
        if !(self.embedding_scale > 0.0) || !self.embedding_scale.is_finite() {
            return Err(Error::invalid("embedding_scale must be positive"));
        }
        Ok(())
    }

    pub fn records_per_prompt(&self) -> usize {
        self.candidates_per_prompt * (self.candidates_per_prompt - 1) / 2
    }
}

/// Draws `count` Gaussian candidate embeddings, redrawing the whole set until no pair is
/// an exact tie for any annotator of `pop` (when given).
fn sample_candidates(
    rng: &mut impl Rng,
    count: usize,
    dim: usize,
    scale: f64,
    pop: Option<&SyntheticPopulation>,
) -> Result<Vec<Vec<f64>>> {
    for _ in 0..MAX_TIE_RESAMPLES {
        let cands: Vec<Vec<f64>> = (0..count).map(|_| gaussian_vec(rng, dim, scale)).collect();
        let tied = (0..count).any(|i| {
            (i + 1..count).any(|j| {
                cands[i] == cands[j] || pop.is_some_and(|p| p.ties_for_anyone(&cands[i], &cands[j]))
            })
        });
        if !tied {
            return Ok(cands);
        }
    }
    Err(Error::InvalidData(
        "could not draw tie-free candidates; the population ranks every pair equally".into(),
    ))
}

/// Candidate embeddings for each of `num_prompts` prompts; prompt `i` is drawn from
/// substream `(seed, i)`.
pub fn sample_prompt_candidates(
    num_prompts: usize,
    candidates_per_prompt: usize,
    dim: usize,
    scale: f64,
    seed: u64,
    pop: Option<&SyntheticPopulation>,
) -> Result<Vec<Vec<Embedding>>> {
    (0..num_prompts)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            sample_candidates(&mut rng, candidates_per_prompt, dim, scale, pop)?
                .into_iter()
                .map(Embedding::new)
                .collect()
        })
        .collect()
}

/// Fresh comparison triples (one pair per prompt), tie-free for every annotator.
pub fn sample_triples(
    pop: &SyntheticPopulation,
    count: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<ComparisonTriple>> {
    sample_prompt_candidates(count, 2, pop.dim(), scale, seed, Some(pop))?
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            let b = c.pop().unwrap();
            let a = c.pop().unwrap();
            ComparisonTriple::new(format!("t{i:06}"), a, b)
        })
        .collect()
}

/// Generates a soft-label dataset: every candidate pair of every prompt becomes one record
/// whose `p` is the vote fraction of `n` annotators drawn by mass.
pub fn generate_dataset(
    pop: &SyntheticPopulation,
    cfg: &GenerationConfig,
) -> Result<PreferenceDataset> {
    cfg.validate()?;
    Error::check_dim(pop.dim(), cfg.embedding_dim)?;
    let sampler = MassSampler::new(&pop.masses);
    let n = cfg.annotators_per_comparison;
    let mut records = Vec::with_capacity(cfg.num_prompts * cfg.records_per_prompt());
    for prompt in 0..cfg.num_prompts {
        let mut rng = substream(cfg.seed, prompt as u64);
        let cands = sample_candidates(
            &mut rng,
            cfg.candidates_per_prompt,
            cfg.embedding_dim,
            cfg.embedding_scale,
            Some(pop),
        )?;
        for i in 0..cands.len() {
            for j in i + 1..cands.len() {
                let triple = ComparisonTriple::new(
                    format!("p{prompt:06}-{i}-{j}"),
                    Embedding::new(cands[i].clone())?,
                    Embedding::new(cands[j].clone())?,
                )?;
                let votes = (0..n)
                    .filter(|_| {
                        pop.annotators[sampler.draw(&mut rng)]
                            .model
                            .prefers_unchecked(&triple)
                    })
                    .count() as u32;
                records.push(PreferenceRecord::new(triple, votes as f64 / n as f64, n)?);
            }
        }
    }
    PreferenceDataset::new(cfg.embedding_dim, records)
}

/// Re-polls fresh annotator votes on fixed triples.
pub fn resample_votes(
    pop: &SyntheticPopulation,
    triples: &[ComparisonTriple],
    n: u32,
    seed: u64,
) -> Result<PreferenceDataset> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let mut rng = substream(seed, u64::MAX);
    let records = triples
        .iter()
        .map(|t| {
            let p = pop.poll(t, n, &mut rng);
            PreferenceRecord::new(t.clone(), p, n)
        })
        .collect::<Result<Vec<_>>>()?;
    PreferenceDataset::new(pop.dim(), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(weight: f64, center: &[f64], spread: f64) -> AnnotatorGroup {
        AnnotatorGroup {
            weight,
            center: center.to_vec(),
            spread,
        }
    }

    fn triple(a: &[f64], b: &[f64]) -> ComparisonTriple {
        ComparisonTriple::new(
            "t",
            Embedding::new(a.to_vec()).unwrap(),
            Embedding::new(b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_spread_annotators_equal_center() {
        let pop = sample_population(&[group(1.0, &[1.0, -2.0], 0.0)], 5, 3).unwrap();
        assert_eq!(pop.annotators().len(), 5);
        for a in pop.annotators() {
            assert_eq!(a.model.theta(), &[1.0, -2.0]);
        }
    }

    #[test]
    fn masses_split_uniformly_within_groups() {
        let pop =
            sample_population(&[group(0.5, &[1.0], 0.1), group(0.5, &[-1.0], 0.1)], 2, 3).unwrap();
        for a in pop.annotators() {
            assert_eq!(a.mass, 0.25);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let groups = random_groups(&[0.6, 0.4], 4, 0.3, 42);
        let a = sample_population(&groups, 7, 42).unwrap();
        let b = sample_population(&groups, 7, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_population(&groups, 7, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(sample_population(
            &[group(1.0, &[1.0], 0.0), group(0.5, &[1.0, 2.0], 0.0)],
            1,
            0
        )
        .is_err());
        assert!(sample_population(&[group(0.7, &[1.0], 0.0)], 1, 0).is_err());
        assert!(sample_population(&[], 1, 0).is_err());
    }

    #[test]
    fn true_fraction_examples() {
        let t = triple(&[1.0], &[0.0]);
        let one = SyntheticPopulation::from_annotators(vec![(
            LinearRewardModel::new(vec![1.0]).unwrap(),
            1.0,
        )])
        .unwrap();
        assert_eq!(one.true_preference_fraction(&t).unwrap(), 1.0);

        let opposed = SyntheticPopulation::from_annotators(vec![
            (LinearRewardModel::new(vec![1.0]).unwrap(), 0.5),
            (LinearRewardModel::new(vec![-1.0]).unwrap(), 0.5),
        ])
        .unwrap();
        assert_eq!(opposed.true_preference_fraction(&t).unwrap(), 0.5);

        let four = SyntheticPopulation::from_annotators(
            [1.0, 2.0, 3.0, -1.0]
                .iter()
                .map(|&v| (LinearRewardModel::new(vec![v]).unwrap(), 0.25))
                .collect(),
        )
        .unwrap();
        assert_eq!(four.true_preference_fraction(&t).unwrap(), 0.75);
    }

    #[test]
    fn single_annotator_votes_are_exact() {
        let groups = random_groups(&[1.0], 3, 0.0, 1);
        let pop = sample_population(&groups, 1, 1).unwrap();
        let cfg = GenerationConfig {
            num_prompts: 50,
            candidates_per_prompt: 2,
            annotators_per_comparison: 7,
            embedding_dim: 3,
            embedding_scale: 1.0,
            seed: 9,
        };
        let ds = generate_dataset(&pop, &cfg).unwrap();
        assert_eq!(ds.len(), 50);
        for r in ds.records() {
            assert!(r.p == 0.0 || r.p == 1.0);
            assert_eq!(r.p, pop.true_preference_fraction(&r.triple).unwrap());
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let groups = random_groups(&[0.5, 0.5], 4, 0.2, 5);
        let pop = sample_population(&groups, 3, 5).unwrap();
        let cfg = GenerationConfig {
            num_prompts: 20,
            candidates_per_prompt: 3,
            annotators_per_comparison: 5,
            embedding_dim: 4,
            embedding_scale: 2.0,
            seed: 11,
        };
        let a = generate_dataset(&pop, &cfg).unwrap();
        let b = generate_dataset(&pop, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
    }

    #[test]
    fn large_n_concentrates_on_true_fraction() {
        let groups = random_groups(&[0.5, 0.3, 0.2], 6, 0.0, 17);
        let pop = sample_population(&groups, 1, 17).unwrap();
        let triples = sample_triples(&pop, 1, 1.0, 3).unwrap();
        let t = &triples[0];
        let p_star = pop.true_preference_fraction(t).unwrap();
        let n = 10_000u32;
        let band = 3.0 * (p_star * (1.0 - p_star) / n as f64).sqrt();
        let trials = 200;
        let inside = (0..trials)
            .filter(|&s| {
                let mut rng = substream(1000 + s, 0);
                (pop.poll(t, n, &mut rng) - p_star).abs() <= band + 1e-12
            })
            .count();
        assert!(inside * 100 >= 99 * trials as usize, "{inside}/{trials}");
    }
}
