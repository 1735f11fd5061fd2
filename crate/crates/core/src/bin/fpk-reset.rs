use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpk_reset::cli::{self, Overrides, RunOutcome};

#[derive(Parser)]
#[command(name = "fpk-reset", version, about = "Path ensembles and density solves for diffusions with boundary resets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the methods selected in the config and write the result files.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run both methods and compare them; exits 2 if a check fails.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Print the configuration schema.
    Schema,
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    /// Cells per axis in every mode.
    #[arg(long)]
    resolution: Option<usize>,
    /// Monte Carlo time step.
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(config: &PathBuf, flags: &Flags, validate: bool) -> Result<RunOutcome, String> {
    let mut c = cli::load_config(config).map_err(|e| e.to_string())?;
    c.apply(&Overrides {
        seed: flags.seed,
        resolution: flags.resolution,
        dt: flags.dt,
        threads: flags.threads,
    })
    .map_err(|e| e.to_string())?;
    let outcome = if validate { cli::validate(&c) } else { cli::run(&c) };
    outcome.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    // Exit code 2 is reserved for failed checks, so usage errors map to 1.
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    // Write errors (a closed pipe, say) are ignored rather than panicking.
    let mut out = std::io::stdout().lock();
    let (config, flags, validate) = match &args.command {
        Command::Schema => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&cli::schema()).expect("schema serializes"));
            return ExitCode::SUCCESS;
        }
        Command::Run { config, flags } => (config, flags, false),
        Command::Validate { config, flags } => (config, flags, true),
    };
    match execute(config, flags, validate) {
        Ok(outcome) => {
            for f in &outcome.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            if let Some(report) = &outcome.report {
                for m in &report.metrics {
                    let status = if m.passed { "pass" } else { "FAIL" };
                    let _ = writeln!(out, "{status} {} = {:.3e} (tolerance {:.3e})", m.name, m.value, m.tolerance);
                }
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
