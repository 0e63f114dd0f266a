//! Held-out calibration MSE per ensemble size against the single-model floor.

use calibrated_ensembles::metrics::{empirical_calibration_mse, single_model_floor};
use calibrated_ensembles::population::{generate_dataset, random_groups, sample_population};
use calibrated_ensembles::{fsam_train, GenerationConfig, TrainConfig};

fn main() -> calibrated_ensembles::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let lr = args.first().copied().unwrap_or(0.5);
    let epochs = args.get(1).copied().unwrap_or(60.0) as usize;
    let seed = 7;
    let dim = 16;
    let groups = random_groups(&[0.5, 0.3, 0.2], dim, 0.0, seed);
    let pop = sample_population(&groups, 1, seed)?;
    let gen = |num_prompts, seed| GenerationConfig {
        num_prompts,
        candidates_per_prompt: 2,
        annotators_per_comparison: 10,
        embedding_dim: dim,
        embedding_scale: 1.0,
        seed,
    };
    let train = generate_dataset(&pop, &gen(2000, seed))?;
    let val = generate_dataset(&pop, &gen(500, seed + 1))?;
    let test = generate_dataset(&pop, &gen(500, seed + 2))?;
    let cfg = TrainConfig {
        k_max: 8,
        patience: 8,
        lr,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (_, report) = fsam_train(&train, &val, &cfg)?;
    println!("floor(test) = {:.4}", single_model_floor(&test)?);
    for it in report.accepted() {
        let ens = report.snapshot(it.k).unwrap();
        println!(
            "k={} train={:.4} val={:.4} test={:.4} weights={:?}",
            it.k,
            it.train_mse,
            it.val_mse,
            empirical_calibration_mse(&ens, &test)?,
            it.weights
                .iter()
                .map(|w| (w * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}
