//! `calens` command-line interface.
//!
//! Exit codes: 0 success, 2 input error, 3 I/O error, 4 training divergence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::diversity::{tau_matrix, PromptCandidates};
use crate::error::{Error, Result};
use crate::fsam::{fit_soft_label_model, fsam_train, IterationRecord, StopReason, TrainConfig};
use crate::io;
use crate::metrics::{evaluate, single_model_floor, MetricReport};
use crate::model::{tie_warnings, LinearRewardModel, PreferenceDataset};
use crate::population::{generate_dataset, sample_prompt_candidates};
use crate::prune::{prune_with_candidates, PruneReport};
use crate::tournament::{
    exact_decompose, sample_calibrated_ensemble, Decomposition, DEFAULT_DECOMPOSE_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "calens",
    version,
    about = "Learn, evaluate and prune pairwise-calibrated reward ensembles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Overrides the config's top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic population and write a soft-label dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write the ensemble made of the configured population's own annotators.
    OracleEnsemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fit an ensemble by forward stagewise additive modeling.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Validation set; defaults to the trailing `val_fraction` of `--data`.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Ensemble output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-iteration CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        k_max: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Calibration metrics of an ensemble on a dataset and on the configured population.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        triples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Remove the most disagreeing members within a `1 / (beta - 1)` weight budget.
    Prune {
        #[arg(long)]
        ensemble: PathBuf,
        /// Comparisons on which disagreement is measured.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
        /// Also report calibration against the configured population.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        triples: Option<usize>,
        /// Pruned ensemble output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Decompose a tournament graph into a mixture of rankings (m <= 7).
    Decompose {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DECOMPOSE_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a ceil(1 / (4 epsilon))-ranking ensemble from a ranking population.
    SampleEnsemble {
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean Kendall tau between members' Best-of-N rankings, as CSV.
    Diversity {
        #[arg(long)]
        ensemble: PathBuf,
        /// Line-delimited prompt candidates; generated from `--config` when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::TrainingDiverged { .. } => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<PreferenceDataset> {
    let f = File::open(path).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    io::read_dataset(BufReader::new(f)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn load_config(path: &Path, seed: &SeedArg) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(contents.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_or_print(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Serialize)]
pub struct TrainReportFile {
    pub train_records: usize,
    pub val_records: usize,
    pub train_floor: f64,
    pub val_floor: f64,
    pub best_k: usize,
    pub stop_reason: StopReason,
    pub train_mse_nonincreasing: bool,
    pub tie_warnings: u64,
    pub iterations: Vec<IterationRecord>,
}

fn iterations_csv(iterations: &[IterationRecord], train_floor: f64, val_floor: f64) -> String {
    let mut out = String::from("k,train_mse,val_mse,accepted,train_floor,val_floor\n");
    for it in iterations {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            it.k, it.train_mse, it.val_mse, it.accepted, train_floor, val_floor
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct DecomposeReport {
    verdict: &'static str,
    m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reconstruction_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distribution: Option<serde_json::Value>,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => {
            let cfg = load_config(&config, &seed)?;
            let pop = cfg.population()?;
            let ds = generate_dataset(&pop, &cfg.generation())?;
            let mut w = BufWriter::new(File::create(&out)?);
            io::write_dataset(&mut w, &ds)?;
            let mean_p = ds.records().iter().map(|r| r.p).sum::<f64>() / ds.len() as f64;
            println!("records: {}", ds.len());
            println!("mean p: {mean_p}");
            Ok(())
        }
        Command::OracleEnsemble { config, out, seed } => {
            let cfg = load_config(&config, &seed)?;
            let pop = cfg.population()?;
            write_file(&out, &io::ensemble_to_json(&pop.oracle_ensemble()))
        }
        Command::Train {
            config,
            data,
            val,
            out,
            report,
            csv,
            k_max,
            seed,
        } => {
            let cfg = load_config(&config, &seed)?;
            let mut tc: TrainConfig = cfg.train_config();
            if let Some(k) = k_max {
                tc.k_max = k;
            }
            tc.validate()?;
            let data = read_dataset(&data)?;
            let (train, val) = match val {
                Some(path) => (data, read_dataset(&path)?),
                None => {
                    let n_val = (data.len() as f64 * cfg.val_fraction).round() as usize;
                    if n_val == 0 || n_val >= data.len() {
                        (data.clone(), data)
                    } else {
                        data.split_tail(n_val)
                    }
                }
            };
            let (ens, rep) = fsam_train(&train, &val, &tc)?;
            let train_floor = single_model_floor(&train)?;
            let val_floor = single_model_floor(&val)?;
            let monotone = rep.train_mse_nonincreasing(1e-9);
            let file = TrainReportFile {
                train_records: train.len(),
                val_records: val.len(),
                train_floor,
                val_floor,
                best_k: rep.best_k,
                stop_reason: rep.stop_reason,
                train_mse_nonincreasing: monotone,
                tie_warnings: tie_warnings(),
                iterations: rep.iterations.clone(),
            };
            write_file(&out, &io::ensemble_to_json(&ens))?;
            write_file(&report, &to_json(&file))?;
            if let Some(csv) = csv {
                write_file(
                    &csv,
                    &iterations_csv(&rep.iterations, train_floor, val_floor),
                )?;
            }
            if !monotone {
                return Err(Error::InvalidData(
                    "train MSE increased across accepted iterations".into(),
                ));
            }
            Ok(())
        }
        Command::Evaluate {
            config,
            ensemble,
            data,
            triples,
            out,
            seed,
        } => {
            let cfg = load_config(&config, &seed)?;
            let ens = io::ensemble_from_json(&read_text(&ensemble)?)?;
            let ds = read_dataset(&data)?;
            let pop = cfg.population()?;
            Error::check_dim(pop.dim(), ens.dim())?;
            let eval = cfg.eval_triples(&pop, triples)?;
            let report: MetricReport = evaluate(&ens, &ds, Some((&pop, &eval)))?;
            write_or_print(out.as_deref(), &to_json(&report))
        }
        Command::Prune {
            ensemble,
            data,
            beta,
            config,
            triples,
            out,
            report,
            seed,
        } => {
            let ens = io::ensemble_from_json(&read_text(&ensemble)?)?;
            let ds = read_dataset(&data)?;
            Error::check_dim(ens.dim(), ds.dim())?;
            let cfg = config
                .as_deref()
                .map(|c| load_config(c, &seed))
                .transpose()?;
            let beta = beta
                .or(cfg.as_ref().map(|c| c.prune.beta))
                .ok_or_else(|| Error::invalid("--beta (or --config with [prune]) is required"))?;
            let cands: Vec<_> = ds.triples().cloned().collect();
            // A model fit to majority labels joins the candidate set for the phi_min estimate.
            let majority: Vec<f64> = ds
                .records()
                .iter()
                .map(|r| if r.p >= 0.5 { 1.0 } else { 0.0 })
                .collect();
            let train_cfg = cfg.as_ref().map(|c| c.train_config()).unwrap_or_default();
            let majority_model = fit_soft_label_model(
                &ds,
                &majority,
                &train_cfg,
                LinearRewardModel::zeros(ds.dim()),
            )?;
            let (pruned, mut rep): (_, PruneReport) =
                prune_with_candidates(&ens, beta, &cands, &[majority_model])?;
            rep = match &cfg {
                Some(c) => {
                    let pop = c.population()?;
                    Error::check_dim(pop.dim(), ens.dim())?;
                    let eval = c.eval_triples(&pop, triples)?;
                    rep.with_population_mse(&ens, &pruned, &pop, &eval)?
                }
                None => rep.with_empirical_mse(&ens, &pruned, &ds)?,
            };
            write_file(&out, &io::ensemble_to_json(&pruned))?;
            write_or_print(report.as_deref(), &to_json(&rep))
        }
        Command::Decompose { graph, tol, out } => {
            let g = io::graph_from_json(&read_text(&graph)?)?;
            let dec = exact_decompose(&g, tol)?;
            let mut rep = DecomposeReport {
                verdict: dec.verdict(),
                m: g.m(),
                residual: None,
                reconstruction_error: None,
                support_size: None,
                distribution: None,
            };
            match &dec {
                Decomposition::Feasible {
                    distribution,
                    reconstruction_error,
                } => {
                    rep.reconstruction_error = Some(*reconstruction_error);
                    rep.support_size = Some(distribution.support().len());
                    rep.distribution = Some(io::distribution_to_value(distribution));
                }
                Decomposition::Boundary { residual } | Decomposition::Infeasible { residual } => {
                    rep.residual = Some(*residual);
                }
            }
            write_or_print(out.as_deref(), &to_json(&rep))
        }
        Command::SampleEnsemble {
            population,
            epsilon,
            seed,
            out,
        } => {
            let pop = io::distribution_from_json(&read_text(&population)?)?;
            let ens = sample_calibrated_ensemble(&pop, epsilon, seed)?;
            write_file(&out, &io::distribution_to_json(&ens))
        }
        Command::Diversity {
            ensemble,
            candidates,
            config,
            out,
            seed,
        } => {
            let ens = io::ensemble_from_json(&read_text(&ensemble)?)?;
            let prompts: Vec<PromptCandidates> = match (candidates, config) {
                (Some(path), _) => {
                    let f = File::open(&path)
                        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
                    io::read_prompt_candidates(BufReader::new(f))?
                }
                (None, Some(c)) => {
                    let cfg = load_config(&c, &seed)?;
                    let g = cfg.generation();
                    sample_prompt_candidates(
                        g.num_prompts,
                        g.candidates_per_prompt,
                        g.embedding_dim,
                        g.embedding_scale,
                        g.seed,
                        None,
                    )?
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| PromptCandidates::new(format!("p{i:06}"), c))
                    .collect::<Result<_>>()?
                }
                (None, None) => {
                    return Err(Error::invalid(
                        "one of --candidates or --config is required",
                    ))
                }
            };
            for pc in &prompts {
                Error::check_dim(ens.dim(), pc.dim())?;
            }
            let tau = tau_matrix(ens.models(), &prompts)?;
            write_file(&out, &tau.to_csv())
        }
    }
}
