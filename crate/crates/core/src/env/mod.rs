//! The two benchmark worlds, each encoded as three models that differ only in
//! how much of the dynamics the agent is told.

pub mod check;
pub mod clogged_pipe;
pub mod load_unload;
pub mod simulate;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{PkmdpError, Result};
use crate::model::{CondTable, FiniteSpace, FullModel, KnownModel, Policy};

pub use check::{
    check_measurability, check_specs_equivalence, check_variant_equivalence, perturb_unknown_dynamics,
    EquivalenceReport, MeasurabilityReport, EQUIVALENCE_TOLERANCE,
};
pub use clogged_pipe::make_clogged_pipe;
pub use load_unload::make_load_unload;
pub use simulate::{exact_return, exact_return_model, sample_episode, sample_episode_model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    LoadUnload,
    CloggedPipe,
}

impl EnvName {
    pub const ALL: [EnvName; 2] = [EnvName::LoadUnload, EnvName::CloggedPipe];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::LoadUnload => "load_unload",
            EnvName::CloggedPipe => "clogged_pipe",
        }
    }

    /// Episodes per run in the reference experiments.
    pub fn default_episodes(self) -> usize {
        match self {
            EnvName::LoadUnload => 80,
            EnvName::CloggedPipe => 50,
        }
    }

    pub fn world(self) -> WorldChain {
        match self {
            EnvName::LoadUnload => load_unload::world(),
            EnvName::CloggedPipe => clogged_pipe::world(),
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = PkmdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "load_unload" | "load-unload" => Ok(EnvName::LoadUnload),
            "clogged_pipe" | "clogged-pipe" => Ok(EnvName::CloggedPipe),
            other => Err(PkmdpError::UnknownEnvironment(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub name: EnvName,
    pub variant: u8,
    pub full_model: FullModel,
    pub description: String,
}

impl EnvironmentSpec {
    pub fn known(&self) -> &KnownModel {
        &self.full_model.known
    }

    pub fn uniform_policy(&self) -> Policy {
        Policy::uniform(self.known().n_obs(), self.known().n_actions())
    }
}

pub fn make_environment(name: EnvName, variant: u8) -> Result<EnvironmentSpec> {
    match name {
        EnvName::LoadUnload => make_load_unload(variant),
        EnvName::CloggedPipe => make_clogged_pipe(variant),
    }
}

pub fn all_variants(name: EnvName) -> Result<Vec<EnvironmentSpec>> {
    (1..=3).map(|v| make_environment(name, v)).collect()
}

/// Ground-truth world written directly as a controlled Markov chain, without
/// any split into known and unknown parts.
#[derive(Debug, Clone)]
pub struct WorldChain {
    pub n_obs: usize,
    pub n_actions: usize,
    pub initial: Vec<(usize, f64)>,
    pub obs: Vec<usize>,
    pub reward: Vec<f64>,
    /// `next[state][action]` lists successor states with probabilities.
    pub next: Vec<Vec<Vec<(usize, f64)>>>,
}

impl WorldChain {
    pub fn n_states(&self) -> usize {
        self.obs.len()
    }

    /// States reachable from the initial distribution under some action sequence, sorted.
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_states()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &(s, p) in &self.initial {
            if p > 0.0 && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            for outcomes in &self.next[s] {
                for &(t, p) in outcomes {
                    if p > 0.0 && !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        (0..self.n_states()).filter(|&s| seen[s]).collect()
    }

    /// Expected total reward over `horizon` slices under a reactive policy.
    pub fn exact_return(&self, policy: &Policy, horizon: usize) -> Result<f64> {
        check_policy_shape(policy, self.n_obs, self.n_actions)?;
        let probs = policy.action_probs();
        let n = self.n_states();
        let mut dist = vec![0.0; n];
        for &(s, p) in &self.initial {
            dist[s] += p;
        }
        let mut total = 0.0;
        for t in 0..horizon {
            total += dist.iter().zip(&self.reward).map(|(d, r)| d * r).sum::<f64>();
            if t + 1 == horizon {
                break;
            }
            let mut next = vec![0.0; n];
            for (s, &mass) in dist.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let row = &probs[self.obs[s] * self.n_actions..(self.obs[s] + 1) * self.n_actions];
                for (a, &pa) in row.iter().enumerate() {
                    for &(t, p) in &self.next[s][a] {
                        next[t] += mass * pa * p;
                    }
                }
            }
            dist = next;
        }
        Ok(total)
    }

    /// Per-slice rewards when `actions[o]` is always taken. Only defined for
    /// deterministic worlds.
    pub fn step_through(&self, actions: &[usize], horizon: usize) -> Result<Vec<f64>> {
        let deterministic = |outcomes: &[(usize, f64)]| match outcomes {
            [(s, p)] if (*p - 1.0).abs() < 1e-15 => Some(*s),
            _ => None,
        };
        let not_det = || PkmdpError::InvalidConfig("step-through needs a deterministic world".into());
        if actions.len() != self.n_obs {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{} actions", self.n_obs),
                actual: actions.len().to_string(),
            });
        }
        let mut s = deterministic(&self.initial).ok_or_else(not_det)?;
        let mut rewards = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            rewards.push(self.reward[s]);
            s = deterministic(&self.next[s][actions[self.obs[s]]]).ok_or_else(not_det)?;
        }
        Ok(rewards)
    }
}

pub(crate) fn check_policy_shape(policy: &Policy, n_obs: usize, n_actions: usize) -> Result<()> {
    if policy.n_obs() != n_obs || policy.n_actions() != n_actions {
        return Err(PkmdpError::ShapeMismatch {
            expected: format!("{n_obs}x{n_actions} policy"),
            actual: format!("{}x{} policy", policy.n_obs(), policy.n_actions()),
        });
    }
    Ok(())
}

pub(crate) fn observation_space(name: &str, n: usize) -> FiniteSpace {
    FiniteSpace::new(name, n).expect("non-empty observation space")
}

pub(crate) fn action_space(name: &str, n: usize) -> FiniteSpace {
    FiniteSpace::new(name, n).expect("non-empty action space")
}

pub(crate) fn point_mass(name: &str, child: &FiniteSpace, value: usize) -> CondTable {
    CondTable::deterministic(name, child, &[], |_| value)
}

/// Table that copies parent number `which` into the child.
pub(crate) fn identity_table(name: &str, child: &FiniteSpace, parents: &[&FiniteSpace], which: usize) -> CondTable {
    CondTable::deterministic(name, child, parents, |p| p[which])
}

/// Wraps a known model in a trivial unknown part: one unknown state, no reward.
/// The known model must have a single y value.
pub fn planning_full_model(known: KnownModel) -> FullModel {
    let s = FiniteSpace::singleton("s");
    FullModel {
        p_s0: point_mass("p_s0", &s, 0),
        p_s: CondTable::deterministic("p_s", &s, &[&s, &known.z_space], |_| 0),
        p_y: CondTable::deterministic("p_y", &known.y_space, &[&s], |_| 0),
        r_s: vec![0.0],
        s_space: s,
        known,
    }
}
