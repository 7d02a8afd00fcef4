use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use coarsefine::cli::{
    cmd_bench, cmd_estimate, cmd_evaluate, cmd_train, parse_bench_modes, parse_experiment,
    CliError, RunConfig, RunDir,
};
use coarsefine::dataset::{generate_synthetic_dim, save_csv, default_dim};
use coarsefine::seed;
use coarsefine::taxonomy::Taxonomy;

#[derive(Parser)]
#[command(
    name = "coarsefine",
    version,
    about = "Two-level coarse-to-fine cascaded classification: train node models, run the four inference schemes, estimate cascade accuracy, and time the cascade"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Taxonomy file utilities.
    Taxonomy {
        #[command(subcommand)]
        command: TaxonomyCommand,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train one coarse model, one model per coarse category, and one flat
    /// model, for every fold.
    Train {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's fold count.
        #[arg(long)]
        folds: Option<usize>,
        /// Directory that will hold the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Worker threads for per-fold training.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate trained folds under the selected experiments.
    Eval {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated subset of 1 (topdown), 2 (oracle), 3 (bottomup), flat.
        #[arg(long, value_delimiter = ',', default_values_t = ["1".to_string(), "2".to_string(), "3".to_string(), "flat".to_string()])]
        experiments: Vec<String>,
    },
    /// Cascade-accuracy estimate vs the empirical top-down result.
    Estimate {
        #[arg(long)]
        run: PathBuf,
        /// Monte-Carlo draws for the cross-check.
        #[arg(long, default_value_t = 100_000)]
        mc_draws: u64,
    },
    /// Batch timing of flat vs hierarchical inference.
    Bench {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 135)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// flat, topdown, bottomup or all.
        #[arg(long, default_value = "all")]
        mode: String,
    },
}

#[derive(Subcommand)]
enum TaxonomyCommand {
    /// Load, validate and summarize a taxonomy file.
    Validate {
        /// Path to a taxonomy JSON, or `nw45` for the bundled one.
        path: String,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a synthetic dataset CSV.
    Gen {
        /// Path to a taxonomy JSON, or `nw45` for the bundled one.
        #[arg(long)]
        taxonomy: String,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 15.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.0)]
        overlap: f64,
        /// Feature dimension; defaults to max(8, 2 * coarse count).
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_taxonomy(path: &str) -> Result<Taxonomy, CliError> {
    if path == "nw45" {
        Ok(Taxonomy::nw45())
    } else {
        Ok(Taxonomy::load(path)?)
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Taxonomy {
            command: TaxonomyCommand::Validate { path },
        } => {
            let taxonomy = load_taxonomy(&path)?;
            print!("{taxonomy}");
            if let Some(notes) = taxonomy.notes() {
                println!("notes: {notes}");
            }
            Ok(())
        }
        Command::Data {
            command:
                DataCommand::Gen {
                    taxonomy,
                    per_class,
                    separation,
                    overlap,
                    dim,
                    seed: data_seed,
                    out,
                },
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let d = dim.unwrap_or_else(|| default_dim(&taxonomy));
            let samples = generate_synthetic_dim(
                &taxonomy,
                per_class,
                separation,
                overlap,
                d,
                seed::derive(data_seed, "data"),
            )?;
            save_csv(&out, &samples, &taxonomy)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Train {
            config,
            seed: seed_override,
            folds,
            out,
            jobs,
        } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(s) = seed_override {
                config.seed = s;
            }
            if let Some(k) = folds {
                config.folds = k;
            }
            let run_dir = cmd_train(&config, &out, jobs)?;
            println!("trained {} folds into {}", config.folds, run_dir.display());
            Ok(())
        }
        Command::Eval { run, experiments } => {
            let modes: Vec<_> = experiments
                .iter()
                .map(|t| parse_experiment(t))
                .collect::<Result<_, _>>()?;
            let run = RunDir::open(&run)?;
            let reports = cmd_evaluate(&run, &modes)?;
            for report in &reports {
                println!("{:<9} {}", report.mode, report.rendered_overall());
            }
            Ok(())
        }
        Command::Estimate { run, mc_draws } => {
            let run = RunDir::open(&run)?;
            let report = cmd_estimate(&run, mc_draws)?;
            for fold in &report.folds {
                println!(
                    "fold {}: analytic {:.4}  mc {:.4}±{:.4}  empirical {:.4}  gap {:.4}",
                    fold.fold, fold.analytic_overall, fold.mc_mean, fold.mc_stderr,
                    fold.empirical_topdown, fold.gap
                );
            }
            println!(
                "mean: analytic {:.4}  empirical {:.4}  gap {:.4}",
                report.mean_analytic, report.mean_empirical, report.mean_gap
            );
            Ok(())
        }
        Command::Bench {
            run,
            batch_size,
            repeats,
            mode,
        } => {
            let modes = parse_bench_modes(&mode)?;
            let run = RunDir::open(&run)?;
            let (_, rendered) = cmd_bench(&run, batch_size, repeats, &modes)?;
            print!("{rendered}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
