use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use deepreflecs::datagen::{generate_dataset, GenSpec};
use deepreflecs::eval::{
    evaluate, fit, gradient_fidelity, run_ablation_file, run_benchmark_file, BenchmarkConfig, Method, Model,
};
use deepreflecs::preprocess::{read_dataset, trackwise_split, write_dataset};
use deepreflecs::{Error, Result};

/// Radar reflection list classification: data generation, training,
/// evaluation and benchmarking.
#[derive(Parser)]
#[command(name = "deepreflecs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSON lines.
    Generate {
        /// JSON generator settings; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset by track, train one method and save the model.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        /// JSON benchmark settings; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on every sample of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train and test all three methods on one split.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Add median inference times; makes the output run-dependent.
        #[arg(long)]
        timing: bool,
    },
    /// Train the network with and without the global context layer.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare backpropagation against central differences for both networks.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Exit nonzero when the worst relative error reaches this.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn emit(text: &str) -> Result<()> {
    writeln!(io::stdout().lock(), "{text}")?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { spec, seed, out } => {
            let spec = GenSpec {
                seed,
                ..read_json(spec.as_deref())?
            };
            let samples = generate_dataset(&spec);
            write_dataset(&samples, &out)?;
            print_json(&json!({ "samples": samples.len(), "out": out }))
        }
        Command::Train {
            method,
            data,
            config,
            seed,
            out,
        } => {
            let config: BenchmarkConfig = read_json(config.as_deref())?;
            let splits = trackwise_split(&read_dataset(&data)?, config.split, seed)?;
            let (model, training) = fit(method, &splits, &config, seed)?;
            if let Model::CraftedForest(forest) = &model {
                if forest.is_degenerate() {
                    eprintln!("warning: every tree is a single leaf");
                }
            }
            model.save(&out)?;
            let test = evaluate(&model, &splits.test, training.as_ref())?;
            print_json(&json!({ "training": training, "test": test }))
        }
        Command::Eval { model, data, json } => {
            let model = Model::load(&model)?;
            let report = evaluate(&model, &read_dataset(&data)?, None)?;
            if let Some(path) = json {
                fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)
        }
        Command::Benchmark {
            data,
            seed,
            config,
            timing,
        } => {
            let config: BenchmarkConfig = read_json(config.as_deref())?;
            emit(&run_benchmark_file(&data, seed, &config, timing)?.to_json())
        }
        Command::Ablate { data, seed, config } => {
            let config: BenchmarkConfig = read_json(config.as_deref())?;
            emit(&run_ablation_file(&data, seed, &config)?.to_json())
        }
        Command::Gradcheck {
            samples,
            seed,
            h,
            tolerance,
        } => {
            let report = gradient_fidelity(samples, seed, h)?;
            print_json(&report)?;
            let worst = report.max_relative_error();
            if worst >= tolerance {
                return Err(Error::Invalid(format!(
                    "max relative error {worst:.3e} is not below {tolerance:.1e}"
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
