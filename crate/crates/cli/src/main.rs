//! Command-line front end: synthetic data, partitioning, training,
//! evaluation and bundle inspection.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use koopres::bundle::ModelBundle;
use koopres::config::FedConfig;
use koopres::detect::ThresholdMode;
use koopres::pipeline::{self, SynthSpec};

#[derive(Parser, Debug)]
#[command(
    name = "koopres",
    version,
    about = "Federated reservoir-Koopman anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a labeled synthetic benchmark, one directory per node
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 2000)]
        len: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, default_value_t = 0.9)]
        rho_a: f64,
        #[arg(long, default_value_t = 0.05)]
        noise_std: f64,
        #[arg(long, default_value_t = 0.05)]
        anomaly_rate: f64,
        /// Spike size in units of the noise-free series' standard deviation
        #[arg(long, default_value_t = 8.0)]
        magnitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite a non-empty output directory
        #[arg(long)]
        force: bool,
    },
    /// Split one CSV into contiguous Dirichlet-sized client blocks
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run federated training and write a model bundle plus history.csv
    Train {
        /// JSON config; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for client solves (0 = rayon default)
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Score test series and write report.json with per-node score files
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `quantile:Q` or `best-f1`; defaults to the bundle's config
        #[arg(long)]
        threshold: Option<ThresholdMode>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Print shapes, spectral radius and parameter count of a bundle
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> koopres::Result<()> {
    match cli.command {
        Command::GenSynth {
            out,
            nodes,
            len,
            features,
            rho_a,
            noise_std,
            anomaly_rate,
            magnitude,
            seed,
            force,
        } => {
            let spec = SynthSpec {
                nodes,
                len,
                features,
                rho_a,
                noise_std,
                anomaly_rate,
                magnitude,
                seed,
            };
            let written = pipeline::gen_synth_dir(&out, &spec, force)?;
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::Partition {
            input,
            clients,
            alpha,
            seed,
            out,
            force,
        } => {
            let entries = pipeline::partition(&input, clients, alpha, seed, &out, force)?;
            for e in &entries {
                println!("client {:>3}: [{}, {})", e.client_id, e.start, e.end);
            }
        }
        Command::Train {
            config,
            data,
            out,
            parallel,
        } => {
            let mut cfg = match config {
                Some(path) => FedConfig::load(path)?,
                None => FedConfig::default(),
            };
            if let Some(w) = parallel {
                cfg.workers = w;
            }
            let trained = pipeline::train(&cfg, &data, &out)?;
            if let Some(last) = trained.history.last() {
                println!(
                    "{} rounds, validation inner {:.5}, outer {:.5}, rho(K) {:.4}",
                    trained.history.len(),
                    last.inner_loss,
                    last.outer_loss,
                    last.rho_after
                );
            }
            println!("bundle written to {}", out.display());
        }
        Command::Eval {
            bundle,
            data,
            threshold,
            horizon,
            out,
        } => {
            let bundle = ModelBundle::load(&bundle)?;
            let mode = threshold.unwrap_or(bundle.config.threshold);
            let horizon = horizon.unwrap_or(bundle.config.score_horizon);
            let (report, preds) = pipeline::eval(&bundle, &data, mode, horizon)?;
            pipeline::write_eval(&out, &report, &preds)?;
            for node in &report.per_node {
                println!(
                    "{}: P {:.4} R {:.4} F1 {:.4}",
                    node.node, node.metrics.precision, node.metrics.recall, node.metrics.f1
                );
            }
            let m = &report.macro_avg;
            println!(
                "macro: P {:.4} R {:.4} F1 {:.4}",
                m.precision, m.recall, m.f1
            );
        }
        Command::Inspect { bundle, json } => {
            let info = pipeline::inspect(&ModelBundle::load(&bundle)?)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&info).expect("inspection serializes")
                );
            } else {
                print!("{info}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
