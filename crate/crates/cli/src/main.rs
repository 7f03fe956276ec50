use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use windassim::data::{synth_generate, write_csv_path, SynthConfig};
use windassim::experiment::{read_config, run_eval, run_report, run_train, Config, OUTPUT_ROOT_ENV};
use windassim::train::ModelKind;

#[derive(Parser)]
#[command(name = "windassim", version, about = "Wind speed reconstruction from underwater acoustic spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly dataset as CSV.
    Synth {
        #[arg(long)]
        hours: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Take generator settings from the `[synth]` section of this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model for several seeds and write checkpoints and loss curves.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        /// `a..b` (inclusive) or a comma separated list; defaults to the config seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        missing_frac: Option<f64>,
        /// Output directory; defaults to the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score checkpoints of one model on the test split.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        /// Dataset CSV replacing the one recorded in the checkpoints.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        baseline_pb: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge every report below a directory into one table.
    Report {
        #[arg(long)]
        runs_dir: PathBuf,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}`"))).collect()
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => read_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { hours, seed, out, config } => {
            let synth = match config {
                Some(p) => load_config(Some(&p))?.synth,
                None => SynthConfig::default(),
            };
            let records = synth_generate(hours, seed, &synth)?;
            write_csv_path(&out, &records)?;
            println!("wrote {} hours to {}", records.len(), out.display());
        }
        Command::Train { config, model, seeds, missing_frac, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(p) = missing_frac {
                cfg.data.missing_frac = p;
            }
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => cfg.train.seeds.clone(),
            };
            let out = out.unwrap_or_else(output_root);
            let manifest = run_train::<f64>(&cfg, config.as_deref(), model, &seeds, &out)?;
            for c in &manifest.checkpoints {
                println!("{}", c.display());
            }
        }
        Command::Eval { checkpoints, data, baseline_pb, out } => {
            let out = out.unwrap_or_else(|| output_root().join("eval"));
            let res = run_eval::<f64>(&checkpoints, data.as_deref(), baseline_pb, &out)?;
            print!("{}", res.report.to_table());
        }
        Command::Report { runs_dir } => {
            let rows = run_report(&runs_dir)?;
            print!("{}", windassim::eval::ConsolidatedRow::to_table(&rows));
        }
        Command::DefaultConfig => print!("{}", Config::default().to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_are_inclusive() {
        assert_eq!(parse_seeds("0..9").unwrap().len(), 10);
        assert_eq!(parse_seeds("3, 5").unwrap(), vec![3, 5]);
        assert!(parse_seeds("4..2").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
