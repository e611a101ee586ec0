use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psbch_rff::classifier::{evaluate, train, ForestModel, LabeledDataset};
use psbch_rff::harness::{
    extract_features, generate_dataset, run_experiment, training_seed, Condition, ExperimentConfig, IqDataset,
};
use psbch_rff::impairments::validate_profile;
use psbch_rff::{Error, Result};

/// LTE-V2X PSBCH RF fingerprint simulation and identification.
#[derive(Parser)]
#[command(name = "psbch-rff", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Experiment config (TOML). Built-in defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set test.snr_db=[10,20]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set master_seed=N`.
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    /// Shorthand for `--set workers=N` (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate received subframes into an IQ dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Training condition, or the test grid.
        #[arg(long, value_enum, default_value = "train")]
        role: RoleArg,
        /// Test SNRs in dB; defaults to the config's test axis.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Vec<f64>,
        /// Test speeds in km/h; defaults to the config's test axis.
        #[arg(long, value_delimiter = ',')]
        speed: Vec<f64>,
    },
    /// Run the receiver and extractor over an IQ dataset, writing features as CSV.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip channel equalization.
        #[arg(long)]
        no_equalize: bool,
    },
    /// Train a random forest on a feature CSV.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a feature CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Write the confusion matrix here.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Train, then evaluate the full SNR and speed grid plus the ablation.
    Sweep {
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the EVM of every configured terminal and reject invalid ones.
    ValidateProfile,
}

fn load_config(g: &GlobalOpts) -> Result<ExperimentConfig> {
    let mut overrides = g.overrides.clone();
    if let Some(s) = g.master_seed {
        overrides.push(format!("master_seed={s}"));
    }
    if let Some(w) = g.workers {
        overrides.push(format!("workers={w}"));
    }
    match &g.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_toml("version = 1", &overrides),
    }
}

fn check_sync_rate(cfg: &ExperimentConfig, failures: usize, total: usize) -> Result<()> {
    if failures as f64 > cfg.max_sync_failure_rate * total as f64 {
        return Err(Error::SyncFailureRate {
            failures,
            total,
            limit: cfg.max_sync_failure_rate,
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Generate { out, role, snr, speed } => {
            let conditions = match role {
                RoleArg::Train => vec![Condition::train(&cfg)],
                RoleArg::Test => {
                    let snrs = if snr.is_empty() { cfg.test.snr_db.clone() } else { snr };
                    let speeds = if speed.is_empty() { cfg.test.speed_kmh.clone() } else { speed };
                    speeds
                        .iter()
                        .flat_map(|&v| snrs.iter().map(move |&s| Condition::test(s, v)))
                        .collect()
                }
            };
            let ds = generate_dataset(&cfg, &conditions, &out)?;
            println!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::Extract {
            dataset,
            out,
            no_equalize,
        } => {
            if no_equalize {
                cfg.extractor.equalize = false;
            }
            let ds = IqDataset::open(&dataset)?;
            let ex = extract_features(&ds, &cfg)?;
            ex.features.write_csv(&out)?;
            println!(
                "extracted {} of {} records ({} sync failures) to {}",
                ex.features.len(),
                ex.total,
                ex.sync_failures,
                out.display()
            );
            check_sync_rate(&cfg, ex.sync_failures, ex.total)?;
        }
        Command::Train { features, out } => {
            let data = LabeledDataset::read_csv(&features)?;
            let model = train(&data, &cfg.forest, training_seed(cfg.master_seed, cfg.extractor.equalize))?;
            model.save(&out)?;
            println!(
                "trained {} trees on {} rows, {} classes, to {}",
                model.n_trees(),
                data.len(),
                model.classes().len(),
                out.display()
            );
        }
        Command::Eval {
            model,
            features,
            confusion,
        } => {
            let model = ForestModel::load(&model)?;
            let data = LabeledDataset::read_csv(&features)?;
            let report = evaluate(&model, &data)?;
            if let Some(path) = confusion {
                report.write_confusion_csv(&path)?;
            }
            println!("label,accuracy");
            for (c, a) in report.classes.iter().zip(&report.per_class_accuracy) {
                println!("{c},{a:.4}");
            }
            println!("overall,{:.4}", report.overall_accuracy);
        }
        Command::Sweep { out } => {
            let res = run_experiment(&cfg, &out);
            if let Ok(r) = &res {
                println!("speed_kmh,snr_db,accuracy");
                for row in &r.accuracy {
                    println!("{},{},{:.4}", row.speed_kmh, row.snr_db, row.accuracy);
                }
                println!("results in {}", out.display());
            }
            res?;
        }
        Command::ValidateProfile => {
            let mut first_err = None;
            for t in &cfg.terminals {
                match validate_profile(&t.profile, &cfg.numerology, cfg.slss) {
                    Ok(evm) => println!("terminal {}: EVM {evm:.2}% ok", t.id),
                    Err(e) => {
                        println!("terminal {}: {e}", t.id);
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
