use calibrated_ensembles::diversity::{kendall_tau, rank_candidates, tau_matrix, PromptCandidates};
use calibrated_ensembles::fsam::{fsam_train, SoftLabelObjective, TrainConfig};
use calibrated_ensembles::io;
use calibrated_ensembles::metrics::{
    brier_score, empirical_calibration_mse, population_calibration_mse, single_model_floor,
};
use calibrated_ensembles::model::{
    ComparisonTriple, Embedding, Ensemble, LinearRewardModel, PreferenceDataset, PreferenceRecord,
};
use calibrated_ensembles::population::{
    generate_dataset, sample_population, sample_triples, substream, AnnotatorGroup,
    GenerationConfig, SyntheticPopulation,
};
use calibrated_ensembles::prune::{prune, select_removals};
use calibrated_ensembles::tournament::{
    exact_decompose, graph_from_distribution, incidence_vector, num_pairs, pair_index,
    random_mixture, Decomposition, Ranking, RankingDistribution, TournamentGraph,
};
use calibrated_ensembles::weights::{
    project_to_simplex, reoptimize_weights, IndicatorMatrix, WeightOptConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let k = w.len();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    w
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(normalized)
}

fn models(rng: &mut impl Rng, k: usize, dim: usize) -> Vec<LinearRewardModel> {
    (0..k)
        .map(|_| LinearRewardModel::new(gaussian(rng, dim)).unwrap())
        .collect()
}

fn triple(rng: &mut impl Rng, dim: usize, id: usize) -> ComparisonTriple {
    ComparisonTriple::new(
        format!("t{id}"),
        Embedding::new(gaussian(rng, dim)).unwrap(),
        Embedding::new(gaussian(rng, dim)).unwrap(),
    )
    .unwrap()
}

fn population(seed: u64, dim: usize) -> SyntheticPopulation {
    let mut rng = substream(seed, 1);
    let g = rng.random_range(1..=4);
    let weights = normalized((0..g).map(|_| rng.random::<f64>() + 0.1).collect());
    let groups: Vec<AnnotatorGroup> = weights
        .into_iter()
        .map(|weight| AnnotatorGroup {
            weight,
            center: gaussian(&mut rng, dim),
            spread: rng.random_range(0.0..0.6),
        })
        .collect();
    sample_population(&groups, rng.random_range(1..=4), seed).unwrap()
}

fn dataset(pop: &SyntheticPopulation, prompts: usize, n: u32, seed: u64) -> PreferenceDataset {
    generate_dataset(
        pop,
        &GenerationConfig {
            num_prompts: prompts,
            candidates_per_prompt: 3,
            annotators_per_comparison: n,
            embedding_dim: pop.dim(),
            embedding_scale: 1.0,
            seed,
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preference_prob_is_affine_in_weights(
        seed in any::<u64>(),
        w1 in simplex(4),
        w2 in simplex(4),
        lambda in 0.0f64..=1.0,
    ) {
        let mut rng = substream(seed, 0);
        let ms = models(&mut rng, 4, 5);
        let mixed: Vec<f64> = normalized(w1.iter().zip(&w2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect());
        let e1 = Ensemble::new(ms.clone(), w1).unwrap();
        let e2 = Ensemble::new(ms.clone(), w2).unwrap();
        let em = Ensemble::new(ms, mixed).unwrap();
        for i in 0..20 {
            let t = triple(&mut rng, 5, i);
            let expect = lambda * e1.preference_prob(&t).unwrap() + (1.0 - lambda) * e2.preference_prob(&t).unwrap();
            prop_assert!((em.preference_prob(&t).unwrap() - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn prefers_invariant_under_positive_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = substream(seed, 0);
        let theta = gaussian(&mut rng, 6);
        let m = LinearRewardModel::new(theta.clone()).unwrap();
        let scaled = LinearRewardModel::new(theta.iter().map(|x| x * scale).collect()).unwrap();
        for i in 0..20 {
            let t = triple(&mut rng, 6, i);
            let gap = m.reward(t.phi_a()).unwrap() - m.reward(t.phi_b()).unwrap();
            prop_assume!(gap.abs() > 1e-9);
            prop_assert_eq!(m.prefers(&t).unwrap(), scaled.prefers(&t).unwrap());
        }
    }

    #[test]
    fn soft_preference_approaches_hard_as_beta_vanishes(seed in any::<u64>()) {
        let mut rng = substream(seed, 0);
        let m = LinearRewardModel::new(gaussian(&mut rng, 4)).unwrap();
        let t = triple(&mut rng, 4, 0);
        let gap = m.reward(t.phi_a()).unwrap() - m.reward(t.phi_b()).unwrap();
        prop_assume!(gap.abs() > 1e-6);
        let soft = m.soft_preference_prob(&t, 1e-9, 0.0).unwrap();
        let hard = if m.prefers(&t).unwrap() { 1.0 } else { 0.0 };
        prop_assert!((soft - hard).abs() < 1e-12);
    }

    #[test]
    fn preference_prob_in_unit_interval(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = substream(seed, 0);
        let ms = models(&mut rng, k, 3);
        let single = Ensemble::single(ms[0].clone());
        let ens = Ensemble::uniform(ms).unwrap();
        for i in 0..20 {
            let t = triple(&mut rng, 3, i);
            let p = ens.preference_prob(&t).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let p1 = single.preference_prob(&t).unwrap();
            prop_assert!(p1 == 0.0 || p1 == 1.0);
        }
    }

    #[test]
    fn true_fraction_invariant_under_rescaling(seed in any::<u64>(), scale in 1e-2f64..1e2) {
        let pop = population(seed, 4);
        let scaled = SyntheticPopulation::from_annotators(
            pop.annotators()
                .iter()
                .map(|a| (LinearRewardModel::new(a.model.theta().iter().map(|x| x * scale).collect()).unwrap(), a.mass))
                .collect(),
        )
        .unwrap();
        let mut rng = substream(seed, 2);
        for i in 0..20 {
            let t = triple(&mut rng, 4, i);
            let ties = pop.annotators().iter().any(|a| {
                (a.model.reward(t.phi_a()).unwrap() - a.model.reward(t.phi_b()).unwrap()).abs() < 1e-9
            });
            prop_assume!(!ties);
            prop_assert_eq!(pop.true_preference_fraction(&t).unwrap(), scaled.true_preference_fraction(&t).unwrap());
        }
    }

    #[test]
    fn oracle_ensemble_is_exactly_calibrated(seed in any::<u64>(), dim in 1usize..8) {
        let pop = population(seed, dim);
        let triples = sample_triples(&pop, 200, 1.0, seed).unwrap();
        let mse = population_calibration_mse(&pop.oracle_ensemble(), &pop, &triples).unwrap();
        prop_assert!(mse <= 1e-15);
    }

    #[test]
    fn generated_records_have_integral_vote_counts(seed in any::<u64>(), n in 1u32..25) {
        let pop = population(seed, 3);
        let ds = dataset(&pop, 10, n, seed);
        prop_assert_eq!(ds.len(), 30);
        for r in ds.records() {
            let votes = r.p * r.n as f64;
            prop_assert!((votes - votes.round()).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&r.p));
        }
    }

    #[test]
    fn floor_bounds_every_single_model(seed in any::<u64>()) {
        let pop = population(seed, 4);
        let ds = dataset(&pop, 30, 5, seed);
        let floor = single_model_floor(&ds).unwrap();
        let mut rng = substream(seed, 3);
        for m in models(&mut rng, 5, 4).into_iter().chain(pop.annotators().iter().map(|a| a.model.clone())) {
            let ens = Ensemble::single(m);
            let mse = empirical_calibration_mse(&ens, &ds).unwrap();
            prop_assert!(floor <= mse + 1e-15);
            prop_assert_eq!(brier_score(&ens, &ds).unwrap(), mse);
        }
    }

    #[test]
    fn majority_matching_model_attains_floor(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0u32..=8), 1..30),
    ) {
        let mut records = Vec::new();
        for (i, (a, b, votes)) in rows.into_iter().enumerate() {
            prop_assume!(a != b);
            // The majority prefers the larger embedding, which theta = 1 also prefers.
            let v = if (a > b) == (votes >= 4) { votes } else { 8 - votes };
            let t = ComparisonTriple::new(format!("r{i}"), Embedding::new(vec![a]).unwrap(), Embedding::new(vec![b]).unwrap()).unwrap();
            records.push(PreferenceRecord::new(t, v as f64 / 8.0, 8).unwrap());
        }
        let ds = PreferenceDataset::new(1, records).unwrap();
        let ens = Ensemble::single(LinearRewardModel::new(vec![1.0]).unwrap());
        let mse = empirical_calibration_mse(&ens, &ds).unwrap();
        prop_assert!((mse - single_model_floor(&ds).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn simplex_projection_is_nearest_point(v in prop::collection::vec(-3.0f64..3.0, 1..8), seed in any::<u64>()) {
        let p = project_to_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let dist = |q: &[f64]| v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut rng = substream(seed, 0);
        for _ in 0..20 {
            let q = normalized((0..v.len()).map(|_| rng.random::<f64>()).collect());
            prop_assert!(dist(&p) <= dist(&q) + 1e-12);
        }
    }

    #[test]
    fn reoptimized_weights_are_feasible_and_no_worse(
        rows in 1usize..60,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = substream(seed, 0);
        let bits: Vec<Vec<u8>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0..2)).collect()).collect();
        let votes = IndicatorMatrix::from_rows(&bits).unwrap();
        let targets: Vec<f64> = (0..rows).map(|_| rng.random()).collect();
        let warm = normalized((0..cols).map(|_| rng.random::<f64>() + 1e-3).collect());
        let fit = reoptimize_weights(&votes, &targets, &WeightOptConfig::default(), Some(&warm)).unwrap();
        prop_assert!(fit.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(fit.objective <= votes.objective(&warm, &targets));
        prop_assert!(fit.objective <= votes.objective(&vec![1.0 / cols as f64; cols], &targets));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(seed in any::<u64>(), dim in 1usize..10, rows in 1usize..40) {
        let mut rng = substream(seed, 0);
        let diffs: Vec<Vec<f64>> = (0..rows).map(|_| gaussian(&mut rng, dim)).collect();
        let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = gaussian(&mut rng, dim).into_iter().map(|x| 0.5 * x).collect();
        let obj = SoftLabelObjective::new(diffs, targets).unwrap();
        let g = obj.gradient(&theta);
        let h = 1e-5;
        for k in 0..dim {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-5 * g[k].abs().max(fd.abs()).max(1e-4));
        }
    }

    #[test]
    fn removal_rule_invariants(
        d in prop::collection::vec(0.0f64..1.0, 1..10),
        seed in any::<u64>(),
        beta in 1.5f64..20.0,
    ) {
        let mut rng = substream(seed, 0);
        let w = normalized((0..d.len()).map(|_| rng.random::<f64>() + 1e-3).collect());
        let sel = select_removals(&d, &w, beta);
        prop_assert!(sel.removed_mass <= 1.0 / (beta - 1.0));
        prop_assert!(sel.removed.len() < d.len());
        let kept: Vec<usize> = (0..d.len()).filter(|j| !sel.removed.contains(j)).collect();
        for &r in &sel.removed {
            for &k in &kept {
                prop_assert!(d[k] <= d[r]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pruning_guarantees(seed in any::<u64>(), beta in prop::sample::select(vec![2.0, 3.0, 5.0, 10.0])) {
        let dim = 5;
        let pop = population(seed, dim);
        let mut rng = substream(seed, 4);
        let k = rng.random_range(1..=7);
        let ens = Ensemble::new(models(&mut rng, k, dim), normalized((0..k).map(|_| rng.random::<f64>() + 1e-3).collect())).unwrap();
        let triples = sample_triples(&pop, 150, 1.0, seed).unwrap();
        let budget = 1.0 / (beta - 1.0);
        let (pruned, rep) = prune(&ens, beta, &triples).unwrap();
        let rep = rep.with_population_mse(&ens, &pruned, &pop, &triples).unwrap();
        prop_assert!(rep.removed_mass <= budget);
        prop_assert!(!pruned.is_empty());
        prop_assert!((pruned.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for t in &triples {
            prop_assert!((pruned.preference_prob(t).unwrap() - ens.preference_prob(t).unwrap()).abs() <= budget + 1e-12);
        }
        let (pre, post) = (rep.pre_mse.unwrap(), rep.post_mse.unwrap());
        prop_assert!(post <= (pre.sqrt() + budget).powi(2) + 1e-9);
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let pop = population(seed, 3);
        let train = dataset(&pop, 30, 5, seed);
        let val = dataset(&pop, 10, 5, seed ^ 1);
        let cfg = TrainConfig { k_max: 3, epochs: 5, seed, ..TrainConfig::default() };
        let (e1, r1) = fsam_train(&train, &val, &cfg).unwrap();
        let (e2, r2) = fsam_train(&train, &val, &cfg).unwrap();
        prop_assert_eq!(e1, e2);
        prop_assert_eq!(&r1, &r2);
        for it in r1.accepted() {
            prop_assert!((it.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(it.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn decomposition_round_trips(seed in any::<u64>(), m in 3usize..=5, size in 1usize..8) {
        let mut rng = substream(seed, 0);
        let g = graph_from_distribution(&random_mixture(size, m, &mut rng).unwrap());
        match exact_decompose(&g, 1e-9).unwrap() {
            Decomposition::Feasible { distribution, .. } => {
                prop_assert!(graph_from_distribution(&distribution).linf_distance(&g) <= 1e-8);
                prop_assert!(distribution.support().len() <= num_pairs(m) + 1);
            }
            other => prop_assert!(false, "verdict {}", other.verdict()),
        }
    }

    #[test]
    fn single_coordinate_extremes_are_realizable(m in 3usize..=5, i in 0usize..5, j in 0usize..5, high in any::<bool>()) {
        prop_assume!(i < j && j < m);
        let mut p = vec![0.5; num_pairs(m)];
        p[pair_index(i, j, m)] = if high { 1.0 } else { 0.0 };
        let g = TournamentGraph::new(m, p).unwrap();
        prop_assert_eq!(exact_decompose(&g, 1e-9).unwrap().verdict(), "feasible");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn point_mass_graph_is_incidence_vector(seed in any::<u64>(), m in 2usize..7) {
        let mut rng = substream(seed, 0);
        let r = Ranking::random(m, &mut rng);
        let g = graph_from_distribution(&RankingDistribution::point_mass(r.clone()));
        let inc: Vec<f64> = incidence_vector(&r).into_iter().map(f64::from).collect();
        prop_assert_eq!(g.entries(), &inc[..]);
    }

    #[test]
    fn kendall_tau_symmetric_and_relabeling_invariant(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = substream(seed, 0);
        let a = Ranking::random(n, &mut rng);
        let b = Ranking::random(n, &mut rng);
        let mut sigma: Vec<usize> = (0..n).collect();
        sigma.shuffle(&mut rng);
        let relabel = |r: &Ranking| Ranking::new(r.order().iter().map(|&x| sigma[x]).collect()).unwrap();
        let tab = kendall_tau(&a, &b).unwrap();
        prop_assert_eq!(tab, kendall_tau(&b, &a).unwrap());
        prop_assert_eq!(tab, kendall_tau(&relabel(&a), &relabel(&b)).unwrap());
        prop_assert!((-1.0..=1.0).contains(&tab));
    }

    #[test]
    fn ranking_invariant_under_positive_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = substream(seed, 0);
        let theta = gaussian(&mut rng, 4);
        let pc = PromptCandidates::new("p", (0..12).map(|_| Embedding::new(gaussian(&mut rng, 4)).unwrap()).collect()).unwrap();
        let a = rank_candidates(&LinearRewardModel::new(theta.clone()).unwrap(), &pc).unwrap();
        let b = rank_candidates(&LinearRewardModel::new(theta.iter().map(|x| x * scale).collect()).unwrap(), &pc).unwrap();
        prop_assert_eq!(a.ranking, b.ranking);
    }

    #[test]
    fn tau_matrix_is_symmetric_with_unit_diagonal(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = substream(seed, 0);
        let ms = models(&mut rng, k, 3);
        let prompts: Vec<PromptCandidates> = (0..4)
            .map(|i| PromptCandidates::new(format!("p{i}"), (0..6).map(|_| Embedding::new(gaussian(&mut rng, 3)).unwrap()).collect()).unwrap())
            .collect();
        let t = tau_matrix(&ms, &prompts).unwrap();
        for a in 0..k {
            prop_assert_eq!(t.get(a, a), 1.0);
            for b in 0..k {
                prop_assert!((t.get(a, b) - t.get(b, a)).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&t.get(a, b)));
            }
        }
    }

    #[test]
    fn dataset_round_trip_is_exact(seed in any::<u64>(), n in 1u32..12) {
        let pop = population(seed, 3);
        let ds = dataset(&pop, 5, n, seed);
        let mut buf = Vec::new();
        io::write_dataset(&mut buf, &ds).unwrap();
        prop_assert_eq!(io::read_dataset(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn ensemble_round_trip_is_exact(seed in any::<u64>(), k in 1usize..6, w in simplex(6)) {
        let mut rng = substream(seed, 0);
        let ms: Vec<LinearRewardModel> = (0..k)
            .map(|_| LinearRewardModel::new(gaussian(&mut rng, 4).into_iter().map(|x| x * 1e-7 + x.powi(3)).collect()).unwrap())
            .collect();
        let ens = Ensemble::new(ms, normalized(w[..k].to_vec())).unwrap();
        prop_assert_eq!(io::ensemble_from_json(&io::ensemble_to_json(&ens)).unwrap(), ens);
    }

    #[test]
    fn graph_and_distribution_round_trip_is_exact(seed in any::<u64>(), m in 2usize..6, size in 1usize..6) {
        let mut rng = substream(seed, 0);
        let d = random_mixture(size, m, &mut rng).unwrap();
        let g = graph_from_distribution(&d);
        prop_assert_eq!(io::graph_from_json(&io::graph_to_json(&g)).unwrap(), g);
        prop_assert_eq!(io::distribution_from_json(&io::distribution_to_json(&d)).unwrap(), d);
    }
}
