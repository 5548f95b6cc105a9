//! Conjugate-gradient ascent of the off-policy return estimate over policy logits.

use crate::error::{PkmdpError, Result};
use crate::estimator::ExperienceBuffer;
use crate::model::Policy;

/// Gradients with every component at or below this are treated as zero.
pub const ZERO_GRADIENT: f64 = 1e-12;

/// How successive search directions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionRule {
    /// beta = max(0, Polak-Ribiere).
    PolakRibierePlus,
    FletcherReeves,
    /// Every direction is the raw gradient.
    SteepestAscent,
}

impl DirectionRule {
    pub fn name(self) -> &'static str {
        match self {
            DirectionRule::PolakRibierePlus => "pr+",
            DirectionRule::FletcherReeves => "fr",
            DirectionRule::SteepestAscent => "steepest",
        }
    }
}

impl std::str::FromStr for DirectionRule {
    type Err = PkmdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pr+" | "polak-ribiere-plus" => Ok(DirectionRule::PolakRibierePlus),
            "fr" | "fletcher-reeves" => Ok(DirectionRule::FletcherReeves),
            "steepest" | "steepest-ascent" => Ok(DirectionRule::SteepestAscent),
            other => Err(PkmdpError::InvalidConfig(format!("unknown direction rule `{other}`"))),
        }
    }
}

/// Backtracking (Armijo) line search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_increase: f64,
    pub max_contractions: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { initial_step: 1.0, contraction: 0.5, sufficient_increase: 1e-4, max_contractions: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub line_search: LineSearch,
    /// Iterations between forced steepest-ascent restarts; `None` means the number of logits.
    pub restart_period: Option<usize>,
    /// Stop once a steepest-ascent step improves the estimate by less than this fraction
    /// of `max(|R|, 1)`.
    pub convergence_tol: f64,
    pub direction_rule: DirectionRule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 100,
            line_search: LineSearch::default(),
            restart_period: None,
            convergence_tol: 1e-6,
            direction_rule: DirectionRule::PolakRibierePlus,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let bad = |m: &str| Err(PkmdpError::InvalidConfig(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if !(ls.initial_step > 0.0 && ls.initial_step.is_finite()) {
            return bad("initial_step must be positive and finite");
        }
        if !(ls.contraction > 0.0 && ls.contraction < 1.0) {
            return bad("contraction must lie in (0, 1)");
        }
        if !(ls.sufficient_increase > 0.0 && ls.sufficient_increase < 1.0) {
            return bad("sufficient_increase must lie in (0, 1)");
        }
        if self.restart_period == Some(0) {
            return bad("restart_period must be at least 1");
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return bad("convergence_tol must be non-negative");
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_zero(g: &[f64]) -> bool {
    g.iter().all(|v| v.abs() <= ZERO_GRADIENT)
}

/// Evaluates the estimate, mapping negligible overlap to `None`.
fn try_value(buffer: &ExperienceBuffer, policy: &Policy) -> Result<Option<f64>> {
    match buffer.estimate_return(policy) {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) | Err(PkmdpError::NegligibleOverlap) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Backtracks along `dir` from `policy`. Returns the accepted point and its value.
fn line_search(
    buffer: &ExperienceBuffer,
    policy: &Policy,
    value: f64,
    slope: f64,
    dir: &[f64],
    ls: &LineSearch,
) -> Result<Option<(Policy, f64)>> {
    let mut step = ls.initial_step;
    for _ in 0..=ls.max_contractions {
        let logits: Vec<f64> = policy.logits().iter().zip(dir).map(|(l, d)| l + step * d).collect();
        if logits.iter().all(|l| l.is_finite()) {
            let candidate = policy.with_logits(logits)?;
            if let Some(v) = try_value(buffer, &candidate)? {
                if v > value && v >= value + ls.sufficient_increase * step * slope {
                    return Ok(Some((candidate, v)));
                }
            }
        }
        step *= ls.contraction;
    }
    Ok(None)
}

/// Maximizes the return estimate starting from `init`.
///
/// Returns the final policy and the estimate at every accepted iterate, starting with `init`.
/// The trace is empty when the estimate cannot be evaluated at `init`.
pub fn optimize_policy(
    buffer: &ExperienceBuffer,
    init: &Policy,
    config: &OptimizerConfig,
) -> Result<(Policy, Vec<f64>)> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(PkmdpError::EmptyBuffer);
    }
    let model = buffer.model();
    if init.n_obs() != model.n_obs() || init.n_actions() != model.n_actions() {
        return Err(PkmdpError::ShapeMismatch {
            expected: format!("{}x{} policy", model.n_obs(), model.n_actions()),
            actual: format!("{}x{} policy", init.n_obs(), init.n_actions()),
        });
    }

    let mut policy = init.clone();
    let mut grad = match buffer.estimate_gradient(&policy) {
        Ok(g) => g,
        Err(PkmdpError::NegligibleOverlap) => return Ok((policy, Vec::new())),
        Err(e) => return Err(e),
    };
    let mut value = grad.value;
    let mut trace = vec![value];
    let period = config.restart_period.unwrap_or(policy.logits().len()).max(1);

    let mut g = grad.grad_logits;
    let mut dir = g.clone();
    let mut since_restart = 0;
    let mut restart = true;

    for _ in 0..config.max_iterations {
        if is_zero(&g) {
            break;
        }
        if restart {
            dir.clone_from(&g);
            since_restart = 0;
        }
        let mut slope = dot(&g, &dir);
        if slope <= 0.0 {
            dir.clone_from(&g);
            slope = dot(&g, &g);
            restart = true;
            since_restart = 0;
        }

        let Some((next, next_value)) = line_search(buffer, &policy, value, slope, &dir, &config.line_search)? else {
            if restart {
                break;
            }
            restart = true;
            continue;
        };

        let improvement = next_value - value;
        policy = next;
        value = next_value;
        trace.push(value);

        grad = buffer.estimate_gradient(&policy)?;
        let g_new = grad.grad_logits;
        let small = improvement <= config.convergence_tol * value.abs().max(1.0);
        if small && restart {
            break;
        }

        since_restart += 1;
        let gg = dot(&g, &g);
        let beta = match config.direction_rule {
            DirectionRule::SteepestAscent => 0.0,
            DirectionRule::FletcherReeves => dot(&g_new, &g_new) / gg,
            DirectionRule::PolakRibierePlus => {
                let pr: f64 = g_new.iter().zip(&g).map(|(n, o)| n * (n - o)).sum::<f64>() / gg;
                pr.max(0.0)
            }
        };
        restart = small || since_restart >= period || !beta.is_finite();
        if !restart {
            for (d, gn) in dir.iter_mut().zip(&g_new) {
                *d = gn + beta * *d;
            }
        }
        g = g_new;
    }
    Ok((policy, trace))
}

/// One step of greedy episodic learning: the policy to act with before the next episode.
pub fn greedy_learning_step(
    buffer: &ExperienceBuffer,
    last_policy: &Policy,
    config: &OptimizerConfig,
) -> Result<Policy> {
    if buffer.is_empty() {
        let model = buffer.model();
        return Ok(Policy::uniform(model.n_obs(), model.n_actions()));
    }
    optimize_policy(buffer, last_policy, config).map(|(p, _)| p)
}
