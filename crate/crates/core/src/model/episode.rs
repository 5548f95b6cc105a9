use crate::error::{PkmdpError, Result};

/// Full record of one time slice. Diagnostics only; the learner never reads it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub s: usize,
    pub y: usize,
    pub x: usize,
    pub o: usize,
    pub a: usize,
    pub z: usize,
    pub r_s: f64,
    pub r_x: f64,
}

/// What the learner keeps from one trial: the interface sequences revealed
/// after the episode and the realized reward of the unknown state.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub y_seq: Vec<usize>,
    pub z_seq: Vec<usize>,
    /// Realized sum of `r_s(s_t)` over the episode.
    pub unknown_return: f64,
    /// Index of the sampling policy once the episode is stored in a buffer.
    pub policy_index: usize,
    pub debug_trace: Option<Vec<TraceStep>>,
}

impl Episode {
    pub fn new(y_seq: Vec<usize>, z_seq: Vec<usize>, unknown_return: f64) -> Result<Self> {
        if y_seq.is_empty() || y_seq.len() != z_seq.len() {
            return Err(PkmdpError::InvalidSequence(format!(
                "episode needs equal, non-empty y/z sequences (got {} and {})",
                y_seq.len(),
                z_seq.len()
            )));
        }
        if !unknown_return.is_finite() {
            return Err(PkmdpError::InvalidSequence(format!("unknown return {unknown_return} is not finite")));
        }
        Ok(Self { y_seq, z_seq, unknown_return, policy_index: 0, debug_trace: None })
    }

    pub fn horizon(&self) -> usize {
        self.y_seq.len()
    }

    /// `Σ_t r_x(x_t)` recovered from the debug trace, if one was kept.
    pub fn known_return_from_trace(&self) -> Option<f64> {
        self.debug_trace.as_ref().map(|trace| trace.iter().map(|step| step.r_x).sum())
    }
}
