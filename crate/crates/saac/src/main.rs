use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use saac::commands::{self, RunSpec};
use saac::config::parse_override;
use saac_core::adversary::Variant;

#[derive(Parser)]
#[command(name = "saac", version, about = "Adversarially guided safe soft actor-critic experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Vec<u64>,
    /// Comma-separated variants: sac, cons, msd, cvar.
    #[arg(long, value_delimiter = ',', global = true)]
    variants: Vec<Variant>,
    /// Output root.
    #[arg(long, env = "SAAC_OUT", global = true)]
    out: Option<PathBuf>,
    /// Baseline variant directory for `compare`.
    #[arg(long, global = true)]
    baseline: Option<PathBuf>,
    /// Concurrent training processes.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run per (variant, seed) into <out>/<variant>/<seed>/.
    Train,
    /// Evaluate the saved policy of a run directory.
    Eval {
        run: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Project visited states onto two principal components.
    ProjectStates {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Steps at which a new training stage begins.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<usize>>,
        /// Write the projection here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarise variant directories against --baseline.
    Compare {
        dirs: Vec<PathBuf>,
        /// Fraction of the baseline's best return defining the threshold.
        #[arg(long, default_value_t = 0.95)]
        fraction: f64,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference checks of every loss gradient.
    GradCheck,
    /// Cross-checks against closed-form and brute-force references.
    OracleCheck,
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let overrides = g.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    match cli.command {
        Cmd::Train => {
            let spec = RunSpec {
                config: g.config,
                overrides,
                seeds: g.seeds,
                variants: g.variants,
                out: g.out.context("--out or SAAC_OUT is required")?,
            };
            commands::cmd_train(&spec, g.jobs, None)?;
        }
        Cmd::Eval { run, episodes } => {
            let s = commands::cmd_eval(&run, episodes)?;
            println!("episodes,return_mean,return_std,failures");
            println!("{},{},{},{}", s.episodes, s.return_mean, s.return_std, s.failures);
        }
        Cmd::ProjectStates { files, stages, output } => {
            let p = commands::cmd_project_states(&files, stages.as_deref(), output.as_deref())?;
            eprintln!("component variances: {:?}", p.variances);
            if p.rank_deficient {
                eprintln!("warning: data is rank deficient; fewer than 2 components carry variance");
            }
        }
        Cmd::Compare { dirs, fraction, output } => {
            let baseline = g.baseline.context("--baseline is required")?;
            let rows = commands::cmd_compare(&baseline, &dirs, g.out.as_deref(), fraction)?;
            match output {
                Some(path) => saac::io::write_summary_file(&path, &rows)?,
                None => saac::io::write_summary(std::io::stdout().lock(), &rows)?,
            }
        }
        Cmd::GradCheck => {
            let seed = g.seeds.first().copied().unwrap_or(0);
            return commands::cmd_grad_check(seed, &mut std::io::stdout().lock());
        }
        Cmd::OracleCheck => return commands::cmd_oracle_check(&mut std::io::stdout().lock()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
