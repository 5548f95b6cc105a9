//! Repeated episodic learning experiments and their learning curves.

mod config;
pub mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{exact_return, make_environment, simulate::sample_episode_model, EnvName, EnvironmentSpec};
use crate::error::{PkmdpError, Result};
use crate::estimator::ExperienceBuffer;
use crate::model::Policy;
use crate::optimizer::{greedy_learning_step, OptimizerConfig};

pub use config::{parse_settings, Setting, Settings, CONFIG_KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSelection {
    One(u8),
    All,
}

impl VariantSelection {
    pub fn variants(self) -> Vec<u8> {
        match self {
            VariantSelection::One(v) => vec![v],
            VariantSelection::All => vec![1, 2, 3],
        }
    }
}

impl std::str::FromStr for VariantSelection {
    type Err = PkmdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(VariantSelection::All),
            "1" | "2" | "3" => Ok(VariantSelection::One(s.parse().unwrap())),
            other => Err(PkmdpError::InvalidConfig(format!("variant must be 1, 2, 3 or all, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvName,
    pub variant: VariantSelection,
    pub runs: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub base_seed: u64,
    pub optimizer: OptimizerConfig,
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reference settings for `env`: 10 runs of 80 (load-unload) or 50 (clogged pipe)
    /// episodes of 100 slices.
    pub fn new(env: EnvName, variant: VariantSelection) -> Self {
        ExperimentConfig {
            env,
            variant,
            runs: 10,
            episodes: env.default_episodes(),
            horizon: 100,
            base_seed: 0,
            optimizer: OptimizerConfig::default(),
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("runs", self.runs), ("episodes", self.episodes), ("horizon", self.horizon)] {
            if v == 0 {
                return Err(PkmdpError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if let VariantSelection::One(v) = self.variant {
            if !(1..=3).contains(&v) {
                return Err(PkmdpError::InvalidVariant(v));
            }
        }
        self.optimizer.validate()
    }

    /// Where each variant's curve is written: the output path itself for a
    /// single variant, or `<stem>_v<k>.<ext>` for all three.
    pub fn output_paths(&self) -> Vec<(u8, PathBuf)> {
        let Some(path) = &self.output_path else {
            return Vec::new();
        };
        match self.variant {
            VariantSelection::One(v) => vec![(v, path.clone())],
            VariantSelection::All => (1..=3).map(|v| (v, suffixed(path, v))).collect(),
        }
    }
}

fn suffixed(path: &Path, variant: u8) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_v{variant}.{}", ext.to_string_lossy()),
        None => format!("{stem}_v{variant}"),
    };
    path.with_file_name(name)
}

/// Exact return of the policy used at each episode, for every run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub env: EnvName,
    pub variant: u8,
    pub horizon: usize,
    /// `returns[run][episode]`
    pub returns: Vec<Vec<f64>>,
}

impl LearningCurve {
    pub fn n_runs(&self) -> usize {
        self.returns.len()
    }

    pub fn n_episodes(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    fn column(&self, episode: usize) -> impl Iterator<Item = f64> + '_ {
        self.returns.iter().map(move |run| run[episode])
    }

    pub fn mean(&self, episode: usize) -> f64 {
        self.column(episode).sum::<f64>() / self.n_runs() as f64
    }

    /// Population standard deviation across runs.
    pub fn std(&self, episode: usize) -> f64 {
        let m = self.mean(episode);
        (self.column(episode).map(|v| (v - m) * (v - m)).sum::<f64>() / self.n_runs() as f64).sqrt()
    }

    /// Mean return over the last `k` episodes and all runs.
    pub fn final_mean(&self, k: usize) -> f64 {
        let n = self.n_episodes();
        let k = k.clamp(1, n);
        (n - k..n).map(|e| self.mean(e)).sum::<f64>() / k as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,mean,std");
        for r in 0..self.n_runs() {
            let _ = write!(out, ",run_{r}");
        }
        out.push('\n');
        for e in 0..self.n_episodes() {
            let _ = write!(out, "{e},{:.15e},{:.15e}", self.mean(e), self.std(e));
            for v in self.column(e) {
                let _ = write!(out, ",{v:.15e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn emit_csv(curve: &LearningCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve.to_csv())?;
    Ok(())
}

/// One learning run: `episodes` rounds of optimize, evaluate, act, record.
pub fn run_learning(
    spec: &EnvironmentSpec,
    seed: u64,
    episodes: usize,
    horizon: usize,
    optimizer: &OptimizerConfig,
) -> std::result::Result<Vec<f64>, (usize, PkmdpError)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ExperienceBuffer::new(spec.known().clone());
    let mut policy = spec.uniform_policy();
    let mut curve = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let step = |policy: &Policy| -> Result<(Policy, f64)> {
            let next = greedy_learning_step(&buffer, policy, optimizer)?;
            let value = exact_return(spec, &next, horizon)?;
            Ok((next, value))
        };
        let (next, value) = step(&policy).map_err(|err| (e, err))?;
        policy = next;
        curve.push(value);
        let episode = sample_episode_model(&spec.full_model, &policy, horizon, &mut rng).map_err(|err| (e, err))?;
        buffer.add_episode(episode, policy.clone()).map_err(|err| (e, err))?;
    }
    Ok(curve)
}

/// Runs every selected variant with the same seeds. Runs execute in parallel;
/// results are ordered by run index.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<LearningCurve>> {
    config.validate()?;
    config
        .variant
        .variants()
        .into_iter()
        .map(|variant| {
            let spec = make_environment(config.env, variant)?;
            let returns = (0..config.runs)
                .into_par_iter()
                .map(|run| {
                    let seed = config.base_seed.wrapping_add(run as u64);
                    run_learning(&spec, seed, config.episodes, config.horizon, &config.optimizer)
                        .map_err(|(episode, source)| PkmdpError::Experiment { run, episode, source: Box::new(source) })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LearningCurve { env: config.env, variant, horizon: config.horizon, returns })
        })
        .collect()
}

/// Runs the experiment and writes each curve to its output path.
pub fn run_and_emit(config: &ExperimentConfig) -> Result<Vec<(PathBuf, LearningCurve)>> {
    let curves = run_experiment(config)?;
    let paths = config.output_paths();
    let mut written = Vec::new();
    for curve in curves {
        if let Some((_, path)) = paths.iter().find(|(v, _)| *v == curve.variant) {
            emit_csv(&curve, path)?;
            written.push((path.clone(), curve));
        }
    }
    Ok(written)
}
