use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjb_cli::{cmd_check, cmd_solve, cmd_sweep, cmd_verify, CliError, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "hjb", version, about = "Solve and verify power-utility portfolio HJB problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the standing conditions on the model coefficients.
    Check(Common),
    /// Solve the HJB equation and write the value field, policy and summary.
    Solve(Common),
    /// Compare Monte Carlo estimates against a solved field.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Hold the portfolio at zero instead of using the extracted policy.
        #[arg(long)]
        zero_policy: bool,
    },
    /// Repeat solve and verify over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `cutoff` or a model parameter name.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("invalid sweep value '{s}'"))))
        .collect()
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(&common.config)?.with_overrides(common.out.clone(), common.seed))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Check(common) => cmd_check(&load(&common)?),
        Command::Solve(common) => cmd_solve(&load(&common)?),
        Command::Verify { common, zero_policy } => cmd_verify(&load(&common)?, zero_policy),
        Command::Sweep { common, axis, values } => {
            let values = parse_values(&values)?;
            cmd_sweep(&load(&common)?, &axis, &values)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => {
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            println!("{}", if outcome.passed { "pass" } else { "FAIL" });
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
