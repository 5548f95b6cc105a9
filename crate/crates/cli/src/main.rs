use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pkmdp::env::{make_environment, EnvName};
use pkmdp::harness::verify::{run_verification, VerifyOptions};
use pkmdp::harness::{parse_settings, run_experiment, ExperimentConfig, Settings};
use pkmdp::model::text::write_model;

#[derive(Parser)]
#[command(name = "pkmdp", version, about = "Learning in partially known MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated learning experiments and write learning curves as CSV.
    Run(Box<RunArgs>),
    /// Check the inference code against the reference computations.
    Verify(VerifyArgs),
    /// Write one benchmark model in the text format.
    ExportModel(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// load_unload or clogged_pipe
    #[arg(long)]
    env: Option<String>,
    /// 1, 2, 3 or all
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// Run r uses seed + r.
    #[arg(long)]
    seed: Option<String>,
    /// CSV path; with --variant all, `_v1` etc. is added to the file stem.
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<String>,
    #[arg(long)]
    initial_step: Option<String>,
    #[arg(long)]
    contraction: Option<String>,
    #[arg(long)]
    sufficient_increase: Option<String>,
    #[arg(long)]
    max_contractions: Option<String>,
    /// Iterations between steepest-ascent restarts, or `auto` (number of logits).
    #[arg(long)]
    restart_period: Option<String>,
    #[arg(long)]
    convergence_tol: Option<String>,
    /// pr+, fr or steepest
    #[arg(long)]
    direction_rule: Option<String>,
}

impl RunArgs {
    fn flag_settings(&self) -> [(&'static str, Option<String>); 15] {
        [
            ("env", self.env.clone()),
            ("variant", self.variant.clone()),
            ("runs", self.runs.clone()),
            ("episodes", self.episodes.clone()),
            ("horizon", self.horizon.clone()),
            ("seed", self.seed.clone()),
            ("out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned())),
            ("max_iterations", self.max_iterations.clone()),
            ("initial_step", self.initial_step.clone()),
            ("contraction", self.contraction.clone()),
            ("sufficient_increase", self.sufficient_increase.clone()),
            ("max_contractions", self.max_contractions.clone()),
            ("restart_period", self.restart_period.clone()),
            ("convergence_tol", self.convergence_tol.clone()),
            ("direction_rule", self.direction_rule.clone()),
        ]
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let mut settings = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_settings(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Settings::default(),
        };
        for (key, value) in self.flag_settings() {
            if let Some(value) = value {
                settings.push(key, value)?;
            }
        }
        Ok(ExperimentConfig::from_settings(&settings)?)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Multiplier on every check's default tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    variant: u8,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: &RunArgs) -> Result<()> {
    let config = args.config()?;
    let curves = run_experiment(&config)?;
    let paths = config.output_paths();
    for curve in &curves {
        eprintln!(
            "{} variant {}: final-10 mean return {:.4} ({} runs x {} episodes, horizon {})",
            curve.env,
            curve.variant,
            curve.final_mean(10),
            curve.n_runs(),
            curve.n_episodes(),
            curve.horizon
        );
        match paths.iter().find(|(v, _)| *v == curve.variant) {
            Some((_, path)) => {
                pkmdp::harness::emit_csv(curve, path).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                if curves.len() > 1 {
                    println!("# variant {}", curve.variant);
                }
                print!("{}", curve.to_csv());
            }
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<()> {
    if !(args.tolerance > 0.0 && args.tolerance.is_finite()) {
        bail!("--tolerance must be positive");
    }
    let options = VerifyOptions { tolerance_scale: args.tolerance, inject_fault: args.inject_fault, seed: args.seed };
    let report = run_verification(&options)?;
    println!("{report}");
    if !report.all_passed() {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        bail!("verification failed: {}", names.join(", "));
    }
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let name: EnvName = args.env.parse()?;
    let spec = make_environment(name, args.variant)?;
    let text = write_model(&spec.full_model);
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
        Command::ExportModel(args) => export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
