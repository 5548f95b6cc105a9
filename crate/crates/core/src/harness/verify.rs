//! Self-checks run by `pkmdp verify`: the fast inference is compared with
//! the slow reference computations, derivatives with finite differences,
//! and the benchmark encodings with each other.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{
    all_variants, check_specs_equivalence, exact_return_model, perturb_unknown_dynamics, planning_full_model, EnvName,
};
use crate::error::Result;
use crate::estimator::ExperienceBuffer;
use crate::model::Episode;
use crate::oracle::{
    brute_force_kv, brute_force_z_normalization, finite_difference, planning_reduction, random_instance,
    random_interface, random_known_model, random_policy, unscaled_forward_backward,
};
use crate::severed::SeveredModel;

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-6;
/// Relative errors are taken against `max(|a|, |b|, FD_FLOOR)`.
pub const FD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies every default tolerance; below 1 tightens the checks.
    pub tolerance_scale: f64,
    /// Damage variant 2's unknown dynamics before the equivalence check.
    pub inject_fault: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { tolerance_scale: 1.0, inject_fault: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    /// Largest error seen.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from_errors(name: &'static str, cases: usize, worst: f64, tolerance: f64) -> Self {
        CheckOutcome { name, cases, worst, tolerance, passed: worst <= tolerance, detail: String::new() }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} cases {:>4}  worst {:.3e}  tol {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} of {} checks passed", self.checks.len() - failed, self.checks.len())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| relative_error(*x, *y)).fold(0.0, f64::max)
}

/// `exp(log K)` and `V` from the scaled recursions against full enumeration.
pub fn check_oracle_agreement(seed: u64, instances: usize, tolerance: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 4);
        let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
        let probs = inst.policy.action_probs();
        let (k, v) = brute_force_kv(&inst.model, &probs, &ys, &zs)?;
        let severed = SeveredModel::new(&inst.model);
        let l = severed.likelihood(&severed.prepare(&probs)?, &ys, &zs)?;
        let k_fast = l.log_k.exp();
        worst = worst.max((k_fast - k).abs()).max((l.v_ratio * k_fast - v).abs());
    }
    Ok(CheckOutcome::from_errors("severed vs enumeration", instances, worst, tolerance))
}

/// `∂K/∂p / K` and `∂V/∂p / K` against central differences of the forward pass.
pub fn check_likelihood_gradients(seed: u64, instances: usize, tolerance: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let model = random_known_model(&mut rng, 3);
        let horizon = rng.gen_range(1..=6);
        let policy = random_policy(&mut rng, model.n_obs(), model.n_actions(), 1.5);
        let (ys, zs) = random_interface(&mut rng, &model, horizon);
        let severed = SeveredModel::new(&model);
        let probs = policy.action_probs();
        let g = severed.gradients(&severed.prepare(&probs)?, &ys, &zs)?;
        let k = g.log_k.exp();
        let eval = |p: &[f64]| severed.prepare(p).and_then(|t| severed.likelihood(&t, &ys, &zs)).unwrap();
        let fd_k: Vec<f64> =
            finite_difference(|p| eval(p).log_k.exp(), &probs, FD_STEP).into_iter().map(|d| d / k).collect();
        let fd_v: Vec<f64> = finite_difference(
            |p| {
                let l = eval(p);
                l.v_ratio * l.log_k.exp()
            },
            &probs,
            FD_STEP,
        )
        .into_iter()
        .map(|d| d / k)
        .collect();
        worst = worst.max(max_relative_error(&g.grad_log_k, &fd_k)).max(max_relative_error(&g.grad_v_over_k, &fd_v));
    }
    Ok(CheckOutcome::from_errors("likelihood gradients", instances, worst, tolerance))
}

fn random_buffer(rng: &mut ChaCha8Rng, episodes: usize) -> ExperienceBuffer {
    let model = random_known_model(rng, 3);
    let horizon = rng.gen_range(1..=5);
    let mut buffer = ExperienceBuffer::new(model.clone());
    for _ in 0..episodes {
        let (ys, zs) = random_interface(rng, &model, horizon);
        let episode = Episode::new(ys, zs, rng.gen_range(0.0..5.0)).expect("well-formed episode");
        let policy = random_policy(rng, model.n_obs(), model.n_actions(), 1.0);
        buffer.add_episode(episode, policy).expect("episode fits its model");
    }
    buffer
}

/// Gradient of the return estimate over logits against central differences.
pub fn check_estimator_gradient(seed: u64, buffers: usize, tolerance: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..buffers {
        let buffer = random_buffer(&mut rng, 3);
        let m = buffer.model();
        let policy = random_policy(&mut rng, m.n_obs(), m.n_actions(), 1.0);
        let g = buffer.estimate_gradient(&policy)?;
        let fd = finite_difference(
            |l| buffer.estimate_return(&policy.with_logits(l.to_vec()).unwrap()).unwrap(),
            policy.logits(),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&g.grad_logits, &fd));
    }
    Ok(CheckOutcome::from_errors("estimator gradient", buffers, worst, tolerance))
}

/// `Σ_x α_t β_t` is the same for every slice: unscaled on tiny instances
/// (`unscaled_tol`), and equal to one in scaled form at horizon 100 (`scaled_tol`).
pub fn check_every_slice_identity(
    seed: u64,
    instances: usize,
    unscaled_tol: f64,
    scaled_tol: f64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_unscaled: f64 = 0.0;
    let mut worst_scaled: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 4);
        let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
        let (_, products) = unscaled_forward_backward(&inst.model, &inst.policy.action_probs(), &ys, &zs)?;
        for p in &products {
            worst_unscaled = worst_unscaled.max((p - products[0]).abs());
        }
        let (ys, zs) = random_interface(&mut rng, &inst.model, 100);
        let severed = SeveredModel::new(&inst.model);
        let fb = severed.forward_backward(&severed.prepare_policy(&inst.policy)?, &ys, &zs)?;
        for t in 0..fb.horizon() {
            worst_scaled = worst_scaled.max((fb.posterior(t).iter().sum::<f64>() - 1.0).abs());
        }
    }
    let mut out = CheckOutcome::from_errors("alpha-beta identity", instances, worst_scaled, scaled_tol);
    out.passed = worst_unscaled <= unscaled_tol && worst_scaled <= scaled_tol;
    out.detail = format!("unscaled worst {worst_unscaled:.3e} (tol {unscaled_tol:.1e})");
    Ok(out)
}

/// `K(Y, Z)` summed over every Z sequence is one.
pub fn check_z_normalization(seed: u64, instances: usize, tolerance: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let model = random_known_model(&mut rng, 3);
        let horizon = rng.gen_range(1..=3);
        let policy = random_policy(&mut rng, model.n_obs(), model.n_actions(), 1.5);
        let (ys, _) = random_interface(&mut rng, &model, horizon);
        let total = brute_force_z_normalization(&model, &policy.action_probs(), &ys)?;
        worst = worst.max((total - 1.0).abs());
    }
    Ok(CheckOutcome::from_errors("Z normalization", instances, worst, tolerance))
}

/// With no unknown part the estimate is the exact return whatever the data.
pub fn check_planning_reduction(seed: u64, instances: usize, tolerance: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let known = planning_reduction(&random_known_model(&mut rng, 3));
        let horizon = rng.gen_range(1..=6);
        let mut buffer = ExperienceBuffer::new(known.clone());
        for _ in 0..rng.gen_range(1..=4) {
            let episode = Episode::new(vec![0; horizon], vec![0; horizon], 0.0)?;
            buffer.add_episode(episode, random_policy(&mut rng, known.n_obs(), known.n_actions(), 2.0))?;
        }
        let policy = random_policy(&mut rng, known.n_obs(), known.n_actions(), 2.0);
        let exact = exact_return_model(&planning_full_model(known), &policy, horizon)?;
        worst = worst.max((buffer.estimate_return(&policy)? - exact).abs());
    }
    Ok(CheckOutcome::from_errors("planning reduction", instances, worst, tolerance))
}

/// Exact returns agree across the three encodings of each world.
pub fn check_environment_equivalence(
    seed: u64,
    policies: usize,
    horizon: usize,
    tolerance: f64,
    inject_fault: bool,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut suspects = Vec::new();
    for name in EnvName::ALL {
        let mut specs = all_variants(name)?;
        if inject_fault {
            perturb_unknown_dynamics(&mut specs[1].full_model, 0.05);
        }
        let (n_obs, n_actions) = (specs[0].known().n_obs(), specs[0].known().n_actions());
        for _ in 0..policies {
            let policy = random_policy(&mut rng, n_obs, n_actions, 2.0);
            let report = check_specs_equivalence(&specs, &policy, horizon, tolerance)?;
            worst = worst.max(report.max_gap());
            for v in report.suspects() {
                if !suspects.contains(&(name, v)) {
                    suspects.push((name, v));
                }
            }
        }
    }
    let mut out = CheckOutcome::from_errors("variant equivalence", policies * EnvName::ALL.len(), worst, tolerance);
    if !suspects.is_empty() {
        let named: Vec<String> = suspects.iter().map(|(n, v)| format!("{n} variant {v}")).collect();
        out.detail = format!("suspect: {}", named.join(", "));
    }
    Ok(out)
}

/// Observation, action and state counts of the benchmark worlds.
pub fn check_model_sizes() -> Result<CheckOutcome> {
    let mut problems = Vec::new();
    let expected = [(EnvName::LoadUnload, 14, 4, 26), (EnvName::CloggedPipe, 12, 8, 144)];
    for (name, n_obs, n_actions, n_states) in expected {
        for spec in all_variants(name)? {
            let k = spec.known();
            if (k.n_obs(), k.n_actions()) != (n_obs, n_actions) {
                problems.push(format!("{name} variant {}: |O| {} |A| {}", spec.variant, k.n_obs(), k.n_actions()));
            }
        }
        // The load-unload index space has unreachable slots; the pipe's does not.
        let world = name.world();
        let reachable = world.reachable().len();
        if reachable != n_states || (name == EnvName::CloggedPipe && world.n_states() != n_states) {
            problems.push(format!("{name}: {reachable} reachable of {} states", world.n_states()));
        }
    }
    let mut out = CheckOutcome::from_errors("model sizes", expected.len(), problems.len() as f64, 0.0);
    out.detail = problems.join("; ");
    Ok(out)
}

/// Everything `pkmdp verify` runs.
pub fn run_verification(options: &VerifyOptions) -> Result<VerifyReport> {
    let s = options.tolerance_scale;
    let seed = options.seed;
    let checks = vec![
        check_oracle_agreement(seed, 200, 1e-9 * s)?,
        check_likelihood_gradients(seed + 1, 50, 1e-5 * s)?,
        check_estimator_gradient(seed + 2, 20, 1e-5 * s)?,
        check_every_slice_identity(seed + 3, 50, 1e-12 * s, 1e-9 * s)?,
        check_z_normalization(seed + 4, 50, 1e-9 * s)?,
        check_planning_reduction(seed + 5, 30, 1e-9 * s)?,
        check_environment_equivalence(seed + 6, 20, 100, 1e-9 * s, options.inject_fault)?,
        check_model_sizes()?,
    ];
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_verification_passes() {
        let report = run_verification(&VerifyOptions::default()).unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn injected_fault_names_variant_two() {
        let out = check_environment_equivalence(9, 2, 30, 1e-9, true).unwrap();
        assert!(!out.passed);
        assert!(out.detail.contains("load_unload variant 2"), "{}", out.detail);
        assert!(out.detail.contains("clogged_pipe variant 2"), "{}", out.detail);
    }

    #[test]
    fn tighter_tolerance_can_fail() {
        let out = check_estimator_gradient(2, 5, 1e-14).unwrap();
        assert!(!out.passed);
        assert!(out.worst > 0.0);
    }
}
