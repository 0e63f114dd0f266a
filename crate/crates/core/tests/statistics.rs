use calibrated_ensembles::population::{
    random_groups, resample_votes, sample_population, sample_triples,
};

/// Redrawn vote fractions average to the population fraction, within three exact
/// standard errors `sqrt(p*(1 - p*) / (n * draws))`.
#[test]
fn vote_fraction_is_unbiased_for_true_fraction() {
    let groups = random_groups(&[0.5, 0.3, 0.2], 6, 0.5, 3);
    let pop = sample_population(&groups, 6, 3).unwrap();
    let triples = sample_triples(&pop, 5, 1.0, 4).unwrap();
    let n = 7;
    let draws = 500;
    let mut sums = vec![0.0; triples.len()];
    for s in 0..draws {
        let ds = resample_votes(&pop, &triples, n, s).unwrap();
        for (acc, r) in sums.iter_mut().zip(ds.records()) {
            *acc += r.p;
        }
    }
    for (t, sum) in triples.iter().zip(sums) {
        let pstar = pop.true_preference_fraction(t).unwrap();
        let mean = sum / draws as f64;
        let se = (pstar * (1.0 - pstar) / (n as f64 * draws as f64)).sqrt();
        assert!(
            (mean - pstar).abs() <= 3.0 * se + 1e-12,
            "{}: mean {mean}, p* {pstar}, se {se}",
            t.id
        );
    }
}

#[test]
fn unanimous_population_gives_degenerate_fractions() {
    let groups = random_groups(&[1.0], 4, 0.0, 9);
    let pop = sample_population(&groups, 3, 9).unwrap();
    let triples = sample_triples(&pop, 50, 1.0, 10).unwrap();
    let ds = resample_votes(&pop, &triples, 5, 11).unwrap();
    for (r, t) in ds.records().iter().zip(&triples) {
        assert_eq!(r.p, pop.true_preference_fraction(t).unwrap());
        assert!(r.p == 0.0 || r.p == 1.0);
    }
}
