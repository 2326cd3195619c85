use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pavi::harness::commands::{cmd_check, cmd_compare, cmd_oracle, cmd_run, cmd_sweep, CommandOptions};
use pavi::harness::config::ExperimentConfig;
use pavi::Error;

#[derive(Parser)]
#[command(name = "pavi", version, about = "Particle mean-field variational inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle dynamics and write metrics.jsonl and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Sweep particle counts under the N^(1/4) schedule.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the reference solution.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Validate the potential's constants by sampling.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Compare a run directory with another run directory or an oracle document.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T, Error> + Send) -> Result<T, Error>
where
    T: Send,
{
    match threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))?
            .install(f),
        None => f(),
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, CommandOptions), Error> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let opts = CommandOptions { seed: common.seed, out: common.out.clone(), resume: false };
    Ok((cfg, opts))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run { common, resume } => {
            let (cfg, mut opts) = load(&common)?;
            opts.resume = resume;
            let report = with_threads(common.threads, || cmd_run(&cfg, &opts))?;
            print_json(&report.summary)?;
            Ok(0)
        }
        Command::Sweep { common } => {
            let (cfg, opts) = load(&common)?;
            let result = with_threads(common.threads, || cmd_sweep(&cfg, &opts))?;
            for p in &result.points {
                println!(
                    "N = {:6}  h = {:.5}  B = {:3}  W2 = {:.5} ± {:.5}",
                    p.particles, p.step_size, p.batch, p.steady_state_mean, p.steady_state_se
                );
            }
            println!(
                "slope = {:.4}  (95% CI [{:.4}, {:.4}])  strictly decreasing: {}",
                result.slope.slope, result.slope.ci_low, result.slope.ci_high, result.strictly_decreasing
            );
            Ok(0)
        }
        Command::Oracle { common } => {
            let (cfg, opts) = load(&common)?;
            let doc = with_threads(common.threads, || cmd_oracle(&cfg, &opts))?;
            match &doc.residual {
                Some(r) => println!(
                    "grid oracle: {} sweeps, residual {:.3e}",
                    r.sweeps,
                    r.max_final_residual()
                ),
                None => println!("analytic Gaussian solution"),
            }
            if let Some(s) = &doc.init_sensitivity {
                println!("initializations agree: {} (W2 {:?})", s.agree, s.w2_between);
            }
            Ok(0)
        }
        Command::Check { common } => {
            let (cfg, opts) = load(&common)?;
            let report = with_threads(common.threads, || cmd_check(&cfg, &opts))?;
            for item in &report.items {
                let tag = if item.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<22} {}", item.name, item.detail);
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Compare { first, second, threads } => {
            let report = with_threads(threads, || cmd_compare(&first, &second))?;
            print_json(&report)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
