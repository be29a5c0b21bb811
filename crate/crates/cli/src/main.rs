use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use bases_core::harness::{
    build_fixture, records_from_logs, run_experiment, summarize, train_zoo, triangle_sweep,
    write_summary, write_sweep_csv, ExperimentConfig, FixtureSpec, HarnessError,
};
use bases_core::loss::AttackGoal;
use bases_core::oracle::{serve, LabelMode, OracleError, ServeConfig};
use bases_core::pm::{Budget, PmConfig};
use bases_core::search::AttackError;
use bases_core::zoo::{load_dataset, load_model, save_dataset, TrainConfig, Zoo, ZooError};

#[derive(Parser)]
#[command(
    name = "bases",
    version,
    about = "Surrogate-ensemble weight search attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and an untrained default zoo.
    ZooBuild {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 12)]
        side: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train every model in a manifest and record test accuracy.
    ZooTrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve one model over HTTP until interrupted.
    Serve {
        /// Model file (`.bem`).
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "soft")]
        mode: LabelMode,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Predictions allowed per client.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Run an experiment described by a JSON config.
    Attack {
        #[arg(long)]
        config: PathBuf,
    },
    /// Victim loss over the weight simplex of three surrogates.
    SweepTriangle {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        image: usize,
        /// Exactly three comma-separated surrogate ids.
        #[arg(long, value_delimiter = ',')]
        surrogates: Vec<String>,
        #[arg(long)]
        victim: String,
        /// Target class; untargeted when omitted.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, default_value_t = 10)]
        resolution: usize,
        /// ℓ∞ budget on the 0-255 scale.
        #[arg(long, default_value_t = 16.0)]
        epsilon: f32,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-image query logs into a summary.
    Summarize {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_queries: usize,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ZooBuild {
            out,
            classes,
            per_class,
            side,
            seed,
        } => {
            let fx = build_fixture(&FixtureSpec {
                num_classes: classes,
                per_class,
                side,
                seed,
            })?;
            fs::create_dir_all(&out)?;
            save_dataset(out.join("train.bds"), &fx.train)?;
            save_dataset(out.join("test.bds"), &fx.test)?;
            fx.zoo.save(&out)?;
            println!(
                "wrote {} models and {}+{} samples to {}",
                fx.zoo.members().len(),
                fx.train.len(),
                fx.test.len(),
                out.display()
            );
        }
        Command::ZooTrain {
            manifest,
            train,
            test,
            epochs,
            lr,
            batch_size,
            weight_decay,
            seed,
        } => {
            let zoo = Zoo::load(&manifest)?;
            let train_set = load_dataset(&train)?;
            let test_set = load_dataset(&test)?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
                weight_decay,
            };
            let trained = train_zoo(&zoo, &train_set, &test_set, &cfg)?;
            let dir = manifest
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            trained.save(&dir)?;
            for m in trained.members() {
                println!(
                    "{:<12} accuracy {:.3}",
                    m.id,
                    m.accuracy.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Serve {
            model,
            mode,
            bind,
            budget,
            threads,
        } => {
            let (id, model) = load_model(&model)?;
            let handle = serve(
                model,
                &ServeConfig {
                    mode,
                    bind,
                    budget,
                    threads,
                },
            )?;
            println!("serving {id} ({mode:?}) on {}", handle.url());
            std::io::stdout().flush()?;
            handle.join();
        }
        Command::Attack { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            println!(
                "attacked {} images: fooling rate {:.3}, {} failures; summary in {}",
                summary.attempted,
                summary.fooling_rate,
                summary.failures,
                cfg.output_dir.join("summary.json").display()
            );
        }
        Command::SweepTriangle {
            manifest,
            dataset,
            image,
            surrogates,
            victim,
            target,
            resolution,
            epsilon,
            steps,
            out,
        } => {
            if surrogates.len() != 3 {
                return Err(config_error(format!(
                    "expected 3 surrogates, got {}",
                    surrogates.len()
                )));
            }
            let zoo = Zoo::load(&manifest)?;
            let models = zoo.select(&surrogates)?;
            let victim_model = zoo
                .get(&victim)
                .ok_or_else(|| config_error(format!("unknown victim {victim:?}")))?;
            let data = load_dataset(&dataset)?;
            let x = data.images.get(image).ok_or_else(|| {
                config_error(format!(
                    "image {image} out of range ({} images)",
                    data.len()
                ))
            })?;
            let goal = match target {
                Some(t) => AttackGoal::targeted(t),
                None => AttackGoal::untargeted(data.labels[image]),
            };
            let mut pm = PmConfig::with_budget(Budget::linf(epsilon / 255.0));
            pm.steps = steps;
            pm.step_size = bases_core::pm::default_step(&pm.budget, steps);
            let rows = triangle_sweep(x, &goal, &models, victim_model, resolution, &pm)?;
            write_sweep_csv(&rows, fs::File::create(&out)?)?;
            println!("wrote {} grid points to {}", rows.len(), out.display());
        }
        Command::Summarize {
            logs,
            max_queries,
            out,
        } => {
            let records = records_from_logs(&logs)?;
            if records.is_empty() {
                bail!(config_error(format!("no query logs in {}", logs.display())));
            }
            let summary = summarize(&records, max_queries);
            match out {
                Some(path) => write_summary(&path, &summary)?,
                None => println!("{}", serde_json::to_string_pretty(&summary)?),
            }
        }
    }
    Ok(())
}

const CONFIG: u8 = 2;
const TRANSPORT: u8 = 3;

fn oracle_code(e: &OracleError) -> u8 {
    match e {
        OracleError::Transport(_)
        | OracleError::Protocol(_)
        | OracleError::Rejected { .. }
        | OracleError::BudgetExhausted => TRANSPORT,
        _ => CONFIG,
    }
}

fn zoo_code(e: &ZooError) -> u8 {
    match e {
        ZooError::Diverged { .. } => 1,
        _ => CONFIG,
    }
}

fn attack_code(e: &AttackError) -> u8 {
    match e {
        AttackError::Oracle { source, .. } => oracle_code(source),
        _ => CONFIG,
    }
}

/// 3 for victim transport failures, 2 for bad configuration or inputs, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return match e {
                HarnessError::Oracle(e) => oracle_code(e),
                HarnessError::Attack(e) => attack_code(e),
                HarnessError::Zoo(e) => zoo_code(e),
                HarnessError::Config(_) | HarnessError::Io(_) | HarnessError::Csv(_) => CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return oracle_code(e);
        }
        if let Some(e) = cause.downcast_ref::<AttackError>() {
            return attack_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ZooError>() {
            return zoo_code(e);
        }
        if cause.is::<ConfigError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
        {
            return CONFIG;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
