use crate::error::{PkmdpError, Result};

/// Floor on every action probability. Probabilities are
/// `MIN_ACTION_PROB + (1 - |A| * MIN_ACTION_PROB) * softmax(logits)`, which
/// keeps them strictly positive even when a logit gap exceeds the range of
/// `exp`.
pub const MIN_ACTION_PROB: f64 = 1e-10;

/// Reactive stochastic policy `p_a(a | o)` parameterized by one logit per
/// (observation, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_obs: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl Policy {
    pub fn uniform(n_obs: usize, n_actions: usize) -> Self {
        assert!(n_obs > 0 && n_actions > 0);
        Self { n_obs, n_actions, logits: vec![0.0; n_obs * n_actions] }
    }

    pub fn from_logits(n_obs: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if n_obs == 0 || n_actions == 0 || logits.len() != n_obs * n_actions {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{n_obs} x {n_actions} logits"),
                actual: logits.len().to_string(),
            });
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(PkmdpError::NonFiniteLogit { obs: i / n_actions, action: i % n_actions });
        }
        Ok(Self { n_obs, n_actions, logits })
    }

    /// Same shape, new parameters.
    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::from_logits(self.n_obs, self.n_actions, logits)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn softmax_row(&self, o: usize, out: &mut [f64]) {
        let row = &self.logits[o * self.n_actions..(o + 1) * self.n_actions];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (dst, &l) in out.iter_mut().zip(row) {
            *dst = (l - max).exp();
            total += *dst;
        }
        for p in out.iter_mut() {
            *p /= total;
        }
    }

    fn floor_scale(&self) -> f64 {
        1.0 - self.n_actions as f64 * MIN_ACTION_PROB
    }

    /// Row-major `n_obs x n_actions` matrix of action probabilities.
    pub fn action_probs(&self) -> Vec<f64> {
        let mut probs = vec![0.0; self.logits.len()];
        let scale = self.floor_scale();
        for (o, row) in probs.chunks_mut(self.n_actions).enumerate() {
            self.softmax_row(o, row);
            for p in row.iter_mut() {
                *p = MIN_ACTION_PROB + scale * *p;
            }
        }
        probs
    }

    /// Pulls a gradient with respect to the action probabilities back to the
    /// logits.
    pub fn logit_chain_rule(&self, grad_wrt_probs: &[f64]) -> Result<Vec<f64>> {
        if grad_wrt_probs.len() != self.logits.len() {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{} x {} gradient", self.n_obs, self.n_actions),
                actual: grad_wrt_probs.len().to_string(),
            });
        }
        let scale = self.floor_scale();
        let mut soft = vec![0.0; self.n_actions];
        let mut out = vec![0.0; self.logits.len()];
        for o in 0..self.n_obs {
            self.softmax_row(o, &mut soft);
            let g = &grad_wrt_probs[o * self.n_actions..(o + 1) * self.n_actions];
            let mean: f64 = soft.iter().zip(g).map(|(p, g)| p * g).sum();
            for a in 0..self.n_actions {
                out[o * self.n_actions + a] = scale * soft[a] * (g[a] - mean);
            }
        }
        Ok(out)
    }

    /// Most likely action for each observation (ties go to the lower id).
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.logits
            .chunks(self.n_actions)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (a, &l)| if l > best.1 { (a, l) } else { best })
                    .0
            })
            .collect()
    }

    /// Nearly deterministic policy choosing `actions[o]` with logit margin `margin`.
    pub fn near_deterministic(n_actions: usize, actions: &[usize], margin: f64) -> Result<Self> {
        let mut logits = vec![0.0; actions.len() * n_actions];
        for (o, &a) in actions.iter().enumerate() {
            logits[o * n_actions + a] = margin;
        }
        Self::from_logits(actions.len(), n_actions, logits)
    }
}
