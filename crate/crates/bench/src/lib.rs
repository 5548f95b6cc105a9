//! Shared fixtures for the benchmarks.

use pkmdp::env::{make_environment, sample_episode, EnvName, EnvironmentSpec};
use pkmdp::{Episode, ExperienceBuffer, Policy};

pub fn spec(env: EnvName, variant: u8) -> EnvironmentSpec {
    make_environment(env, variant).expect("benchmark variant exists")
}

/// One episode sampled under the uniform policy.
pub fn uniform_episode(spec: &EnvironmentSpec, horizon: usize, seed: u64) -> Episode {
    sample_episode(spec, &spec.uniform_policy(), horizon, seed).expect("sampling succeeds")
}

/// A buffer of `n` uniform-policy episodes and a nearby policy to evaluate.
pub fn buffer(spec: &EnvironmentSpec, n: usize, horizon: usize) -> (ExperienceBuffer, Policy) {
    let uniform = spec.uniform_policy();
    let mut buffer = ExperienceBuffer::new(spec.known().clone());
    for seed in 0..n as u64 {
        buffer.add_episode(uniform_episode(spec, horizon, seed), uniform.clone()).expect("episode fits");
    }
    let logits = (0..uniform.logits().len()).map(|i| ((i * 7919) % 13) as f64 * 0.05).collect();
    (buffer, uniform.with_logits(logits).expect("finite logits"))
}
