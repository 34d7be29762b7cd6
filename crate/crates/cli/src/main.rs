use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fmsb_cli::{parse_config, run_scenario, write_failure_manifest, RunError};

/// Run one forced-motion-sideband scenario and write its CSV datasets and manifest.
#[derive(Debug, Parser)]
#[command(name = "fmsb", version)]
struct Args {
    /// Scenario configuration file.
    config: PathBuf,
    /// Overrides `[scenario] output_dir`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Compute scan points in parallel regardless of the config.
    #[arg(long)]
    parallel: bool,
    /// Only parse and validate the configuration.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut scenario = match parse_config(&args.config) {
        Ok(s) => s,
        Err(e) => {
            let err = RunError::from(e);
            eprintln!("error: {err}");
            if let Some(dir) = &args.output_dir {
                let _ = write_failure_manifest(dir, &err);
            }
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    if let Some(dir) = args.output_dir {
        scenario.output_dir = dir;
    }
    scenario.sim.parallel |= args.parallel;
    if args.check {
        println!("{}: ok", scenario.kind.name());
        return ExitCode::SUCCESS;
    }

    let outcome = run_scenario(&scenario);
    for path in &outcome.outputs {
        println!("wrote {}", path.display());
    }
    for (key, value) in &outcome.summary {
        println!("{key} = {value}");
    }
    if let Some(err) = &outcome.error {
        eprintln!("error: {err}");
    }
    ExitCode::from(outcome.exit_code as u8)
}
