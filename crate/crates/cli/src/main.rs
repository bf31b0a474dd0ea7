use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdtl_cli::prices::Month;
use fdtl_cli::{cmd_fit, cmd_ingest_prices, cmd_simulate, CliError, IngestArgs, RunConfig};

const DEFAULT_OUT: &str = "fdtl-out";

#[derive(Parser)]
#[command(name = "fdtl", version, about = "Transfer learning for functional linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation experiment and/or export a scenario.
    Simulate(RunArgs),
    /// Fit a model on CSV data.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides `fit.curves`.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Overrides `fit.responses`.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Turn daily closes into per-sector task CSVs.
    IngestPrices {
        /// CSV with columns ticker,sector,date,close.
        #[arg(long)]
        prices: PathBuf,
        /// Predictor month, YYYY-MM.
        #[arg(long)]
        month1: Month,
        /// Response month, YYYY-MM.
        #[arg(long)]
        month2: Month,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(self.seed, self.out.clone(), self.threads);
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let out = out_dir(&cfg);
            cmd_simulate(&cfg, &out)?;
            Ok(out.join("result.json"))
        }
        Command::Fit { run, curves, responses } => {
            let mut cfg = run.load()?;
            if let Some(fit) = cfg.fit.as_mut() {
                if let Some(c) = curves {
                    fit.curves = c;
                }
                if let Some(r) = responses {
                    fit.responses = r;
                }
            }
            let out = out_dir(&cfg);
            cmd_fit(&cfg, &out)?;
            Ok(out.join("report.json"))
        }
        Command::IngestPrices { prices, month1, month2, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let summary = cmd_ingest_prices(&IngestArgs { prices, month1, month2 }, &out)?;
            if summary.skipped > 0 {
                eprintln!("warning: skipped {} tickers", summary.skipped);
            }
            Ok(out.join("summary.json"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{}", Path::new(&report).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
