use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvpp_cli::runner::{load_config, Overrides};
use mvpp_cli::{accept_path, qsd_oracle, run, sweep, CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "mvpp", version, about = "Simulate measure-valued Pólya processes and check their limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One replica; writes trace.csv, final_measure.json and summary.json.
    Run(Common),
    /// Replicas over several seeds in parallel (MVPP_THREADS caps the pool).
    Sweep(Common),
    /// Check tolerances for one config or a suite of experiments.
    Accept(Common),
    /// Print the quasi-stationary law and θ_0 of a matrix (CSV or JSON config).
    QsdOracle {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-derive m_n P from scratch periodically and compare.
    #[arg(long)]
    paranoid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            seed: self.seed,
            paranoid: self.paranoid,
            out: self.out.clone(),
            threads: Overrides::threads_from_env()?,
        })
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(c) => {
            let s = run(load_config(&c.config)?, &c.overrides()?)?;
            println!("{}", s.to_json());
            Ok(s.exit_code())
        }
        Command::Sweep(c) => {
            let s = sweep(load_config(&c.config)?, &c.overrides()?)?;
            println!("{}", s.to_json());
            Ok(s.exit_code())
        }
        Command::Accept(c) => accept_path(&c.config, &c.overrides()?, &mut std::io::stdout()),
        Command::QsdOracle { config } => {
            println!("{}", qsd_oracle(&config)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
