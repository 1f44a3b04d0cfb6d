use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expcli::output::{write_records, CsvRecord};
use expcli::{angle, boundary, gamma, lambda, load_config, lpm, overparam, svm_check, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "expcli", about = "Importance-tempering experiment sweeps with CSV output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Worst-group accuracy against the temperature exponent.
    GammaSweep(Common),
    /// Layer-peeled pair angles against the imbalance ratio.
    AngleSweep(Common),
    /// Random-feature test error against the feature count.
    OverparamSweep(Common),
    /// Min-norm separator accuracy against the minority margin.
    LambdaSweep(Common),
    /// Grid predictions of ERM, IW and IT models on the toy mixture.
    BoundaryDemo(Common),
    /// One layer-peeled run with its geometry trace.
    Lpm(Common),
    /// Trained direction against the cost-sensitive SVM.
    SvmCheck(Common),
}

fn run<C, R>(common: &Common, runner: fn(&C) -> CliResult<Vec<R>>) -> CliResult<()>
where
    C: ExperimentConfig,
    R: CsvRecord,
{
    let cfg: C = load_config(common.config.as_deref(), common.seed)?;
    let rows = runner(&cfg)?;
    match &common.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_records(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_records(&rows, io::stdout().lock())?,
    }
    log::info!("{}: wrote {} rows", C::NAME, rows.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GammaSweep(c) => run(c, gamma::run_gamma_sweep),
        Command::AngleSweep(c) => run(c, angle::run_angle_sweep),
        Command::OverparamSweep(c) => run(c, overparam::run_overparam_sweep),
        Command::LambdaSweep(c) => run(c, lambda::run_lambda_sweep),
        Command::BoundaryDemo(c) => run(c, boundary::run_boundary_demo),
        Command::Lpm(c) => run(c, lpm::run_lpm),
        Command::SvmCheck(c) => run(c, svm_check::run_svm_check),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
