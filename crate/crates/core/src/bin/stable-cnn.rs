use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stable_cnn::run::{self, all_pass, Check, RunContext};

#[derive(Parser)]
#[command(version, about = "Stable-parameter CNNs: limit measures and finite-width checks")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "configs/toy.toml")]
    config: PathBuf,
    /// Parent directory for run outputs.
    #[arg(short, long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or reuse) the limiting spectral measure of every layer.
    Limit,
    /// Simulate finite-width replicas into the binary cache.
    Simulate {
        /// Hidden channel count; defaults to the configured one.
        #[arg(long)]
        channels: Option<usize>,
        /// Output channels stored per replica.
        #[arg(long, default_value_t = 1)]
        outputs: usize,
    },
    /// Convergence sweep, independence and readout checks.
    Verify,
    /// Gaussian kernel oracle (alpha = 2 configurations only).
    Oracle,
    /// Probe-level CF plot data for the widest network of the sweep.
    Report,
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {:.4} (threshold {:.4})", c.name, c.value, c.threshold);
    }
}

fn execute(cli: &Cli) -> stable_cnn::Result<bool> {
    let ctx = RunContext::from_file(&cli.config, &cli.out)?;
    println!("run directory: {}", ctx.dir.display());
    match &cli.command {
        Command::Limit => {
            for (l, m) in run::limit(&ctx)?.iter().enumerate() {
                println!("{}", stable_cnn::limit::LayerSummary::of(l + 1, m));
            }
            Ok(true)
        }
        Command::Simulate { channels, outputs } => {
            println!("wrote {}", run::simulate(&ctx, *channels, *outputs)?.display());
            Ok(true)
        }
        Command::Verify => {
            let checks = run::verify(&ctx)?;
            print_checks(&checks);
            Ok(all_pass(&checks))
        }
        Command::Oracle => {
            let checks = run::oracle(&ctx)?;
            print_checks(&checks);
            Ok(all_pass(&checks))
        }
        Command::Report => {
            println!("wrote {}", run::report(&ctx)?.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
