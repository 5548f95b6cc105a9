//! Weighted importance-sampling estimate of a policy's return from stored
//! episodes, and its gradient.
//!
//! Episode `i` was sampled under `π^i`. Its unknown-state likelihood factor
//! cancels in every ratio, leaving only the severed-model factor
//! `K_i(π) = K(Y^i, Z^i, π)`. With the mixture of all sampling policies as
//! the proposal, the weight of episode `i` for a candidate `π` is
//!
//! ```text
//! w_i(π) = K_i(π) / Σ_j K_i(π^j)
//! R̂(π)   = Σ_i w_i (R_s^i + V_i/K_i) / Σ_i w_i
//! ∇R̂(π)  = Σ_i w_i [(R_s^i − R̂) ∇K_i/K_i + ∇V_i/K_i] / Σ_i w_i
//! ```
//!
//! The denominators `Σ_j K_i(π^j)` only change when an episode is added, so
//! they are maintained incrementally in log space.

use std::fmt::Write as _;

use crate::error::{PkmdpError, Result};
use crate::model::{Episode, KnownModel, Policy};
use crate::severed::{PolicyTerms, SeveredModel};

/// Weights below this (relative to the mixture) count as no overlap at all.
pub const MIN_WEIGHT: f64 = 1e-300;

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Value and gradient of the return estimate at one policy.
#[derive(Debug, Clone)]
pub struct ReturnGradient {
    pub value: f64,
    /// `∂R̂ / ∂p_a(a|o)`, row-major `[o][a]`.
    pub grad_probs: Vec<f64>,
    /// The same gradient pulled back to the policy logits.
    pub grad_logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    model: KnownModel,
    severed: SeveredModel,
    episodes: Vec<Episode>,
    policies: Vec<Policy>,
    /// `log_k[i][j] = log K(Y^i, Z^i, π^j)`
    log_k: Vec<Vec<f64>>,
    log_denominators: Vec<f64>,
    dp_calls: usize,
}

impl ExperienceBuffer {
    pub fn new(model: KnownModel) -> Self {
        Self {
            severed: SeveredModel::new(&model),
            model,
            episodes: Vec::new(),
            policies: Vec::new(),
            log_k: Vec::new(),
            log_denominators: Vec::new(),
            dp_calls: 0,
        }
    }

    pub fn model(&self) -> &KnownModel {
        &self.model
    }

    pub fn severed(&self) -> &SeveredModel {
        &self.severed
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn log_k_matrix(&self) -> &[Vec<f64>] {
        &self.log_k
    }

    pub fn log_denominators(&self) -> &[f64] {
        &self.log_denominators
    }

    /// Number of severed-model likelihood evaluations spent maintaining the cache.
    pub fn dp_calls(&self) -> usize {
        self.dp_calls
    }

    fn log_likelihood(&mut self, terms: &PolicyTerms, episode: &Episode) -> Result<f64> {
        self.dp_calls += 1;
        Ok(self.severed.likelihood(terms, &episode.y_seq, &episode.z_seq)?.log_k)
    }

    /// Appends an episode sampled under `sampling_policy`, extending the
    /// likelihood cache by one row and one column (2n + 1 evaluations).
    pub fn add_episode(&mut self, mut episode: Episode, sampling_policy: Policy) -> Result<()> {
        if sampling_policy.n_obs() != self.model.n_obs() || sampling_policy.n_actions() != self.model.n_actions() {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{} x {} policy", self.model.n_obs(), self.model.n_actions()),
                actual: format!("{} x {}", sampling_policy.n_obs(), sampling_policy.n_actions()),
            });
        }
        self.model.check_sequences(&episode.y_seq, &episode.z_seq)?;
        let n = self.episodes.len();
        let new_terms = self.severed.prepare_policy(&sampling_policy)?;

        // Row for the new episode under every policy, including its own.
        let mut row = Vec::with_capacity(n + 1);
        for j in 0..n {
            let terms = self.severed.prepare_policy(&self.policies[j])?;
            row.push(self.log_likelihood(&terms, &episode)?);
        }
        row.push(self.log_likelihood(&new_terms, &episode)?);
        // Column for the old episodes under the new policy.
        let mut column = Vec::with_capacity(n);
        for i in 0..n {
            let ep = self.episodes[i].clone();
            column.push(self.log_likelihood(&new_terms, &ep)?);
        }

        for (i, value) in column.into_iter().enumerate() {
            self.log_k[i].push(value);
            let d = self.log_denominators[i];
            self.log_denominators[i] = log_sum_exp([d, value]);
        }
        self.log_denominators.push(log_sum_exp(row.iter().copied()));
        self.log_k.push(row);
        episode.policy_index = n;
        self.episodes.push(episode);
        self.policies.push(sampling_policy);
        Ok(())
    }

    /// Normalized weights `w_i / Σ w` from per-episode `log K_i(π)`.
    fn normalized_weights(&self, log_k: &[f64]) -> Result<Vec<f64>> {
        let log_w: Vec<f64> = log_k.iter().zip(&self.log_denominators).map(|(k, d)| k - d).collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.is_nan() || max < MIN_WEIGHT.ln() {
            return Err(PkmdpError::NegligibleOverlap);
        }
        let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    fn check_policy(&self, probs: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(PkmdpError::EmptyBuffer);
        }
        let expected = self.model.n_obs() * self.model.n_actions();
        if probs.len() != expected {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{expected} action probabilities"),
                actual: probs.len().to_string(),
            });
        }
        Ok(())
    }

    /// `R̂` at a raw `[o][a]` action-probability matrix.
    pub fn estimate_return_at(&self, probs: &[f64]) -> Result<f64> {
        self.check_policy(probs)?;
        let terms = self.severed.prepare(probs)?;
        let mut log_k = Vec::with_capacity(self.len());
        let mut returns = Vec::with_capacity(self.len());
        for ep in &self.episodes {
            let l = self.severed.likelihood(&terms, &ep.y_seq, &ep.z_seq)?;
            log_k.push(l.log_k);
            returns.push(ep.unknown_return + l.v_ratio);
        }
        let w = self.normalized_weights(&log_k)?;
        Ok(w.iter().zip(&returns).map(|(w, r)| w * r).sum())
    }

    pub fn estimate_return(&self, policy: &Policy) -> Result<f64> {
        self.estimate_return_at(&policy.action_probs())
    }

    /// `R̂` and `∂R̂/∂p_a(a|o)` at a raw action-probability matrix.
    pub fn estimate_gradient_at(&self, probs: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_policy(probs)?;
        let terms = self.severed.prepare(probs)?;
        let grads = self
            .episodes
            .iter()
            .map(|ep| self.severed.gradients(&terms, &ep.y_seq, &ep.z_seq))
            .collect::<Result<Vec<_>>>()?;
        let log_k: Vec<f64> = grads.iter().map(|g| g.log_k).collect();
        let w = self.normalized_weights(&log_k)?;
        let value: f64 =
            grads.iter().zip(&self.episodes).zip(&w).map(|((g, ep), w)| w * (ep.unknown_return + g.v_ratio)).sum();
        let mut grad = vec![0.0; probs.len()];
        for ((g, ep), &w) in grads.iter().zip(&self.episodes).zip(&w) {
            if w == 0.0 {
                continue;
            }
            let centered = ep.unknown_return - value;
            for (dst, (dk, dv)) in grad.iter_mut().zip(g.grad_log_k.iter().zip(&g.grad_v_over_k)) {
                *dst += w * (centered * dk + dv);
            }
        }
        Ok((value, grad))
    }

    pub fn estimate_gradient(&self, policy: &Policy) -> Result<ReturnGradient> {
        let (value, grad_probs) = self.estimate_gradient_at(&policy.action_probs())?;
        let grad_logits = policy.logit_chain_rule(&grad_probs)?;
        Ok(ReturnGradient { value, grad_probs, grad_logits })
    }

    /// Normalized importance weights of the stored episodes for `policy`.
    pub fn weights(&self, policy: &Policy) -> Result<Vec<f64>> {
        let probs = policy.action_probs();
        self.check_policy(&probs)?;
        let terms = self.severed.prepare(&probs)?;
        let log_k = self
            .episodes
            .iter()
            .map(|ep| Ok(self.severed.likelihood(&terms, &ep.y_seq, &ep.z_seq)?.log_k))
            .collect::<Result<Vec<_>>>()?;
        self.normalized_weights(&log_k)
    }

    /// `(Σw)² / Σw²`, between 1 and the number of episodes.
    pub fn effective_sample_size(&self, policy: &Policy) -> Result<f64> {
        Ok(effective_sample_size(&self.weights(policy)?))
    }

    /// Writes the episodes and sampling policies as text. The likelihood
    /// cache is rebuilt on load.
    pub fn to_text(&self) -> String {
        let mut out = String::from("pkmdp-buffer 1\n");
        for (policy, ep) in self.policies.iter().zip(&self.episodes) {
            let _ = write!(out, "policy {} {} :", policy.n_obs(), policy.n_actions());
            for l in policy.logits() {
                let _ = write!(out, " {l:?}");
            }
            let _ = write!(out, "\nepisode {:?} y:", ep.unknown_return);
            for y in &ep.y_seq {
                let _ = write!(out, " {y}");
            }
            out.push_str(" z:");
            for z in &ep.z_seq {
                let _ = write!(out, " {z}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(model: KnownModel, text: &str) -> Result<Self> {
        let err = |line: usize, message: &str| PkmdpError::Parse { line, message: message.to_string() };
        let mut buffer = Self::new(model);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "pkmdp-buffer 1")) => {}
            _ => return Err(err(1, "expected `pkmdp-buffer 1`")),
        }
        let mut pending: Option<Policy> = None;
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix("policy ") {
                let (shape, logits) = rest.split_once(':').ok_or_else(|| err(n, "expected `:`"))?;
                let dims: Vec<usize> = shape
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(n, "bad policy shape")))
                    .collect::<Result<_>>()?;
                let logits: Vec<f64> = logits
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(n, "bad logit")))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(err(n, "policy shape needs two numbers"));
                }
                pending = Some(Policy::from_logits(dims[0], dims[1], logits)?);
            } else if let Some(rest) = line.strip_prefix("episode ") {
                let policy = pending.take().ok_or_else(|| err(n, "episode without policy"))?;
                let (ret, seqs) = rest.split_once("y:").ok_or_else(|| err(n, "expected `y:`"))?;
                let (ys, zs) = seqs.split_once("z:").ok_or_else(|| err(n, "expected `z:`"))?;
                let ret: f64 = ret.trim().parse().map_err(|_| err(n, "bad return"))?;
                let parse_ids = |s: &str| -> Result<Vec<usize>> {
                    s.split_whitespace().map(|t| t.parse().map_err(|_| err(n, "bad id"))).collect()
                };
                let episode = Episode::new(parse_ids(ys)?, parse_ids(zs)?, ret)?;
                buffer.add_episode(episode, policy)?;
            } else {
                return Err(err(n, "unknown line"));
            }
        }
        if pending.is_some() {
            return Err(err(0, "trailing policy without episode"));
        }
        Ok(buffer)
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    sum * sum / sq
}

/// Plain importance-sampling estimate for episodes that were all drawn from
/// one policy `π'`: `(1/n) Σ_i (R_s^i K_i(π) + V_i(π)) / K_i(π')`.
///
/// Unbiased but high variance; the learner uses the weighted mixture form.
pub fn unweighted_estimate(
    severed: &SeveredModel,
    episodes: &[Episode],
    sampling: &Policy,
    target: &Policy,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(PkmdpError::EmptyBuffer);
    }
    let sampling_terms = severed.prepare_policy(sampling)?;
    let target_terms = severed.prepare_policy(target)?;
    let mut total = 0.0;
    for ep in episodes {
        let num = severed.likelihood(&target_terms, &ep.y_seq, &ep.z_seq)?;
        let den = severed.likelihood(&sampling_terms, &ep.y_seq, &ep.z_seq)?;
        total += (num.log_k - den.log_k).exp() * (ep.unknown_return + num.v_ratio);
    }
    Ok(total / episodes.len() as f64)
}
