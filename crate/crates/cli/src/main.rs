use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csbss_core::data::{self, DatasetKind, SplitTag};
use csbss_core::experiment::{
    regenerate_tables, run_bss_experiment, verify_theorems, write_theorem_csv, ConfigDataset,
    ExperimentConfig, TheoremSweep,
};
use csbss_core::neural::train::{classifier_accuracy, SeparationDataset};
use csbss_core::neural::checkpoint;
use csbss_core::sensing::{rip_audit, SensingMatrix};
use csbss_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_THEOREM: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "csbss",
    about = "Compressive blind signal separation: training, evaluation, and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Additional `key=value` overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    sensing_rate: Option<f64>,
    #[arg(long)]
    parameter_budget: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, Error> {
        let file_text = match &self.config {
            Some(path) => Some(std::fs::read_to_string(path)?),
            None => None,
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::parameter(format!("--set `{s}`: expected KEY=VALUE")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(v) = &self.dataset {
            overrides.push(("dataset".into(), v.clone()));
        }
        if let Some(v) = self.sensing_rate {
            overrides.push(("sensing_rate".into(), v.to_string()));
        }
        if let Some(v) = self.parameter_budget {
            overrides.push(("parameter_budget".into(), v.to_string()));
        }
        if let Some(v) = self.epochs {
            overrides.push(("epochs".into(), v.to_string()));
        }
        if let Some(v) = &self.data_dir {
            overrides.push(("data_dir".into(), v.display().to_string()));
        }
        if let Some(v) = &self.output_dir {
            overrides.push(("output_dir".into(), v.display().to_string()));
        }
        ExperimentConfig::from_sources(file_text.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the separator and evaluation classifier end to end.
    Train(ConfigArgs),
    /// Re-evaluate a completed run from its persisted checkpoints.
    Evaluate {
        /// Run directory holding report.json and the checkpoints.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Run the exact-composition and error-bound verification sweeps.
    VerifyTheorems {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        signals: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        mixtures: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// CSV output path for the bound sweep.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lay completed runs out as the per-dataset results table.
    Tables {
        #[arg(long)]
        runs_root: PathBuf,
        #[arg(long, default_value = "mnist")]
        dataset: String,
        /// Budget scale relative to the full-size table (0.4 = desk scale).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Monte-Carlo near-isometry audit of a Bernoulli measurement matrix.
    RipAudit {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 784)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, default_value_t = 10)]
        sparsity: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Validate dataset files in a data directory.
    FetchCheck {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "mnist")]
        dataset: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut cause: &dyn std::error::Error = &err;
            while let Some(src) = cause.source() {
                eprintln!("  caused by: {src}");
                cause = src;
            }
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::BoundViolation { .. } => EXIT_THEOREM,
        Error::Stage { source, .. } => classify(source),
        _ => EXIT_CONFIG,
    }
}

fn parse_dataset(name: &str) -> Result<ConfigDataset, Error> {
    match name {
        "mnist" => Ok(ConfigDataset::Mnist),
        "emnist" => Ok(ConfigDataset::Emnist),
        "synthetic" => Ok(ConfigDataset::Synthetic),
        _ => Err(Error::parameter(format!("unknown dataset `{name}`"))),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train(args) => {
            let config = args.build()?;
            let report = run_bss_experiment(&config)?;
            println!(
                "accuracy {:.4}  parameters {}  best_val_loss {:.6}  wall_ms {}",
                report.accuracy, report.parameter_count, report.best_val_loss, report.wall_ms
            );
            println!("checkpoint {}", report.checkpoint_digest);
            println!("report written to {}", config.output_dir.join("report.json").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { run_dir } => {
            let report_text = std::fs::read_to_string(run_dir.join("report.json"))?;
            let report: csbss_core::experiment::RunReport = serde_json_from(&report_text)?;
            let config = report.config;
            let separator = checkpoint::load_separator(&run_dir.join("separator.csnn"))?;
            let classifier = checkpoint::load_classifier(&run_dir.join("classifier.csnn"))?;
            let test = build_test_dataset(&config)?;
            let accuracy = classifier_accuracy(&separator, &classifier, &test)?;
            println!("accuracy {accuracy:.4} over {} mixtures", test.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyTheorems {
            seed,
            signals,
            dim,
            mixtures,
            seeds,
            out,
        } => {
            let sweep = TheoremSweep {
                signal_count: signals,
                ambient_dim: dim,
                mixtures_per_seed: mixtures,
                seeds,
                ..TheoremSweep::default()
            };
            let outcome = verify_theorems(seed, &sweep)?;
            println!(
                "exact composition: {} mixtures, max abs error {:.3e}",
                outcome.exact_mixtures, outcome.exact_max_error
            );
            for &(eps, k, r) in &outcome.tightness_rows {
                println!("worst-case ratio (eps={eps}, k={k}): {r:.9}");
            }
            let max_bound = outcome
                .bound_rows
                .iter()
                .map(|&(_, _, _, r)| r)
                .fold(0.0f64, f64::max);
            println!(
                "bound sweep: {} rows, max ratio {:.9}, {} violations",
                outcome.bound_rows.len(),
                max_bound,
                outcome.violations
            );
            if let Some(path) = out {
                write_theorem_csv(&outcome, &path)?;
                println!("csv written to {}", path.display());
            }
            if outcome.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verification FAILED");
                Ok(ExitCode::from(EXIT_THEOREM))
            }
        }
        Command::Tables {
            runs_root,
            dataset,
            scale,
        } => {
            let dataset = parse_dataset(&dataset)?;
            let table = regenerate_tables(&runs_root, dataset, scale)?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Command::RipAudit {
            seed,
            dim,
            rate,
            sparsity,
            trials,
        } => {
            let phi = SensingMatrix::generate(seed, dim, rate)?;
            let report = rip_audit(&phi, sparsity, trials, seed ^ 0xA0D17)?;
            println!(
                "d={} D={} k={} trials={} max_distortion={:.6}",
                phi.rows(),
                phi.cols(),
                report.sparsity,
                report.trials,
                report.max_distortion
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::FetchCheck { data_dir, dataset } => {
            let dataset = parse_dataset(&dataset)?;
            let kind = match dataset {
                ConfigDataset::Mnist => DatasetKind::Mnist,
                ConfigDataset::Emnist => DatasetKind::Emnist,
                ConfigDataset::Synthetic => {
                    println!("synthetic data needs no files");
                    return Ok(ExitCode::SUCCESS);
                }
            };
            let mut ok = true;
            for split in [SplitTag::Train, SplitTag::Test] {
                match data::load_dataset(&data_dir, kind, split) {
                    Ok(ds) => {
                        let hist = ds.class_histogram();
                        println!(
                            "{split:?}: {} images, {} classes, histogram min {} max {}",
                            ds.len(),
                            ds.class_count,
                            hist.iter().min().unwrap(),
                            hist.iter().max().unwrap()
                        );
                        if kind == DatasetKind::Mnist && split == SplitTag::Test && ds.len() != 10_000 {
                            println!("  UNEXPECTED: MNIST test split should hold 10000 images");
                            ok = false;
                        }
                    }
                    Err(e) => {
                        println!("{split:?}: MISSING or invalid ({e})");
                        ok = false;
                    }
                }
            }
            if ok {
                Ok(ExitCode::SUCCESS)
            } else {
                println!("run scripts/fetch_data.sh to download and verify the files");
                Ok(ExitCode::from(EXIT_CONFIG))
            }
        }
    }
}

fn serde_json_from<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Error> {
    serde_json::from_str(text).map_err(|e| Error::parameter(format!("report.json: {e}")))
}

fn build_test_dataset(config: &ExperimentConfig) -> Result<SeparationDataset, Error> {
    use csbss_core::mixing::build_mixture_family;
    let test_images = match config.dataset {
        ConfigDataset::Synthetic => {
            data::synthetic_dataset(config.seed_data ^ 1, 800, 12, 10, SplitTag::Test)
        }
        ConfigDataset::Mnist => {
            data::load_dataset(&config.data_dir, DatasetKind::Mnist, SplitTag::Test)?
        }
        ConfigDataset::Emnist => {
            data::load_dataset(&config.data_dir, DatasetKind::Emnist, SplitTag::Test)?
        }
    };
    let set = test_images.to_signal_set()?;
    let phi = if config.sensing_rate < 1.0 {
        Some(SensingMatrix::generate(
            config.seed_matrix,
            test_images.feature_dim(),
            config.sensing_rate,
        )?)
    } else {
        None
    };
    let samples = build_mixture_family(
        &set,
        2,
        config.test_mixtures,
        config.seed_data ^ 0x33,
        phi.as_ref(),
    )?;
    SeparationDataset::from_samples(&samples)
}
