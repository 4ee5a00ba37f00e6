use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nvm_ddn::config::{parse_policies, ConfigError, OutputFormat, RunConfig};
use nvm_ddn::host::parse_trace;
use nvm_ddn::run::{run, RunError};
use nvm_ddn::synthetic::synthetic_trace;

/// Replay a cache trace against a hybrid DRAM+NVM model under one or more
/// deletion policies and report cost and data remanence.
#[derive(Debug, Parser)]
#[command(name = "ddnsim", version)]
struct Args {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file to replay.
    #[arg(long, conflicts_with = "synthetic")]
    trace: Option<PathBuf>,
    /// Comma-separated policy list; overrides the config.
    #[arg(long)]
    policy: Option<String>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl; overrides the config.
    #[arg(long)]
    format: Option<String>,
    /// Generate a synthetic trace of N cache lines instead of reading one.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Fraction of synthetic lines updated after their flush.
    #[arg(long, default_value_t = 1.0)]
    update_ratio: f64,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn load_config(args: &Args) -> Result<RunConfig, RunError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.policy {
        config.policies = parse_policies(p)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(f) = &args.format {
        config.format = f.parse::<OutputFormat>()?;
    }
    if !(0.0..=1.0).contains(&args.update_ratio) {
        return Err(ConfigError::Value { key: "update-ratio".into(), value: args.update_ratio.to_string() }.into());
    }
    config.validate()?;
    Ok(config)
}

fn execute(args: &Args) -> Result<String, RunError> {
    let config = load_config(args)?;
    if args.print_config {
        return Ok(config.to_text());
    }
    let trace = match (&args.trace, args.synthetic) {
        (Some(path), _) => parse_trace(&fs::read_to_string(path)?, &config.geometry)?,
        (None, Some(n)) => synthetic_trace(n, args.update_ratio, &config.geometry, config.seed),
        (None, None) => {
            return Err(ConfigError::Invalid("one of --trace or --synthetic is required".into()).into());
        }
    };
    Ok(run(&config, &trace)?.render(config.format))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = execute(&args).and_then(|output| {
        match &args.out {
            Some(path) => fs::write(path, output)?,
            None => std::io::stdout().write_all(output.as_bytes())?,
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ddnsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
