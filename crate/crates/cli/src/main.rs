use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowline::io::{LoadedConfig, RunConfig};
use flowline::workflow::{self, Manifest, SAMPLES_FILE};
use flowline::Error;

/// Flowline ice-thickness reconstruction.
#[derive(Debug, Parser)]
#[command(name = "flowline", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ChainFlags {
    /// MCMC iterations per chain.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smooth the surface inputs and derive slope.
    Smooth,
    /// Deterministic inversion with a plug-in width.
    Naive {
        /// Rheologic coefficients (comma separated).
        #[arg(long = "A", value_delimiter = ',', allow_hyphen_values = true)]
        a: Vec<f64>,
        /// Width candidate name or `narrowest`.
        #[arg(long)]
        width: Option<String>,
    },
    /// Sample the posterior.
    Fit {
        #[command(flatten)]
        chain: ChainFlags,
    },
    /// Thickness bands from a samples file.
    Predict {
        /// Defaults to samples.csv in the output directory.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Simulation study on the truth profile.
    Simulate {
        #[arg(long, value_delimiter = ',')]
        n_train: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        noise_sd: Vec<f64>,
        #[command(flatten)]
        chain: ChainFlags,
    },
    /// Width coverage of a samples file against the truth profile.
    Coverage {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Convergence diagnostics of a samples file.
    Diagnose {
        #[arg(long)]
        samples: PathBuf,
    },
}

fn load(common: &Common) -> Result<LoadedConfig, Error> {
    let mut loaded = match (&common.config, common.seed) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(seed)) => {
            let text = format!("seed = {seed}\n");
            let mut config = RunConfig::from_toml(&text)?;
            config.resolve_paths(&std::env::current_dir().map_err(|e| Error::Io {
                path: ".".into(),
                source: e,
            })?);
            LoadedConfig {
                config,
                source: text.into_bytes(),
                path: PathBuf::new(),
            }
        }
        (None, None) => return Err(Error::Config("pass --config <path> or --seed <n>".into())),
    };
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        loaded.config.output_dir = dir.clone();
    }
    Ok(loaded)
}

fn apply_chain(config: &mut RunConfig, flags: &ChainFlags) {
    if let Some(n) = flags.iterations {
        config.chain.n_iterations = n;
    }
    if let Some(n) = flags.chains {
        config.chain.n_chains = n;
    }
}

fn run(cli: Cli) -> Result<Manifest, Error> {
    let LoadedConfig {
        mut config, source, ..
    } = load(&cli.common)?;
    let samples_or_default = |s: &Option<PathBuf>, dir: &Path| s.clone().unwrap_or_else(|| dir.join(SAMPLES_FILE));
    match &cli.command {
        Command::Smooth => workflow::smooth(&config, &source),
        Command::Naive { a, width } => {
            if !a.is_empty() {
                config.model.naive_a = a.clone();
            }
            if let Some(w) = width {
                config.model.width = w.clone();
            }
            workflow::naive(&config, &source)
        }
        Command::Fit { chain } => {
            apply_chain(&mut config, chain);
            workflow::fit(&config, &source)
        }
        Command::Predict { samples } => {
            let path = samples_or_default(samples, &config.output_dir);
            workflow::predict(&config, &source, &path)
        }
        Command::Simulate {
            n_train,
            noise_sd,
            chain,
        } => {
            if !n_train.is_empty() {
                config.simulation.n_train = n_train.clone();
            }
            if !noise_sd.is_empty() {
                config.simulation.noise_sd = noise_sd.clone();
            }
            apply_chain(&mut config, chain);
            workflow::simulate(&config, &source)
        }
        Command::Coverage { samples } => workflow::coverage(&config, &source, samples),
        Command::Diagnose { samples } => workflow::diagnose(&config, &source, samples),
    }
}

fn report(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(m) => {
            println!("{}", serde_json::to_string(&m).expect("manifest serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            // bad or missing configuration is a usage problem
            if matches!(e, Error::Config(_)) {
                report("usage", &e.to_string());
                ExitCode::from(2)
            } else {
                report(e.kind(), &e.to_string());
                ExitCode::from(1)
            }
        }
    }
}
