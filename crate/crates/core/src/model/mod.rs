//! Data model for partially known MDPs.
//!
//! The world's hidden state splits into a known-dynamics part `x` and an
//! unknown part `s`, coupled through interface variables `y` (unknown to
//! known) and `z` (known to unknown). Within a time slice values are drawn in
//! the order `s, y, x, o, a, z`.

mod episode;
mod policy;
mod space;
mod table;
pub mod text;
mod validate;

pub use episode::{Episode, TraceStep};
pub use policy::{Policy, MIN_ACTION_PROB};
pub use space::FiniteSpace;
pub use table::{CondTable, ROW_SUM_TOLERANCE};
pub use validate::{validate_full_model, validate_known_model, ValidationReport, Violation, ViolationKind};

use crate::error::{PkmdpError, Result};

/// The part of the world the learner is given.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownModel {
    pub x_space: FiniteSpace,
    pub y_space: FiniteSpace,
    pub z_space: FiniteSpace,
    pub o_space: FiniteSpace,
    pub a_space: FiniteSpace,
    /// `x_0 | y_0`
    pub p_x0: CondTable,
    /// `x' | x, y', a`
    pub p_x: CondTable,
    /// `o | x`
    pub p_o: CondTable,
    /// `z | x, a`
    pub p_z: CondTable,
    pub r_x: Vec<f64>,
}

impl KnownModel {
    pub fn validated(self) -> Result<Self> {
        let report = validate_known_model(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(PkmdpError::InvalidModel(report))
        }
    }

    pub fn n_obs(&self) -> usize {
        self.o_space.size()
    }

    pub fn n_actions(&self) -> usize {
        self.a_space.size()
    }

    pub fn has_known_reward(&self) -> bool {
        self.r_x.iter().any(|&r| r != 0.0)
    }

    /// Checks that a recorded interface sequence is well formed.
    pub fn check_sequences(&self, y_seq: &[usize], z_seq: &[usize]) -> Result<()> {
        if y_seq.is_empty() {
            return Err(PkmdpError::InvalidSequence("empty sequence".into()));
        }
        if y_seq.len() != z_seq.len() {
            return Err(PkmdpError::InvalidSequence(format!(
                "y has {} entries but z has {}",
                y_seq.len(),
                z_seq.len()
            )));
        }
        if let Some(t) = y_seq.iter().position(|&y| !self.y_space.contains(y)) {
            return Err(PkmdpError::InvalidSequence(format!("y[{t}] = {} outside {}", y_seq[t], self.y_space)));
        }
        if let Some(t) = z_seq.iter().position(|&z| !self.z_space.contains(z)) {
            return Err(PkmdpError::InvalidSequence(format!("z[{t}] = {} outside {}", z_seq[t], self.z_space)));
        }
        Ok(())
    }
}

/// The complete world, including the unknown part. Only simulators and
/// exact evaluators look at this.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModel {
    pub known: KnownModel,
    pub s_space: FiniteSpace,
    /// `s_0`
    pub p_s0: CondTable,
    /// `s' | s, z`
    pub p_s: CondTable,
    /// `y | s`
    pub p_y: CondTable,
    pub r_s: Vec<f64>,
}

impl FullModel {
    pub fn validated(self) -> Result<Self> {
        let report = validate_full_model(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(PkmdpError::InvalidModel(report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(name: &str, n: usize) -> FiniteSpace {
        FiniteSpace::new(name, n).unwrap()
    }

    fn small_model() -> KnownModel {
        let (x, y, z, o, a) = (space("x", 2), space("y", 1), space("z", 2), space("o", 2), space("a", 2));
        KnownModel {
            p_x0: CondTable::deterministic("p_x0", &x, &[&y], |_| 0),
            p_x: CondTable::deterministic("p_x", &x, &[&x, &y, &a], |p| p[2]),
            p_o: CondTable::deterministic("p_o", &o, &[&x], |p| p[0]),
            p_z: CondTable::from_fn("p_z", &z, &[&x, &a], |_, row| row.fill(0.5)),
            r_x: vec![0.0, 1.0],
            x_space: x,
            y_space: y,
            z_space: z,
            o_space: o,
            a_space: a,
        }
    }

    #[test]
    fn well_formed_model_validates() {
        assert!(validate_known_model(&small_model()).is_ok());
    }

    #[test]
    fn short_row_is_named() {
        let mut m = small_model();
        let row = m.p_z.row_index(&[1, 0]);
        m.p_z.row_at_mut(row).copy_from_slice(&[0.5, 0.4]);
        let report = validate_known_model(&m);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.table, "p_z");
        assert_eq!(v.parent_tuple, vec![1, 0]);
        assert!(matches!(v.kind, ViolationKind::RowSum(s) if (s - 0.9).abs() < 1e-12));
    }

    #[test]
    fn negative_entry_is_named() {
        let mut m = small_model();
        let row = m.p_z.row_index(&[0, 1]);
        m.p_z.row_at_mut(row).copy_from_slice(&[-0.1, 1.1]);
        let report = validate_known_model(&m);
        assert!(report.for_table("p_z").any(|v| v.parent_tuple == vec![0, 1]
            && matches!(v.kind, ViolationKind::BadEntry { child: 0, value } if value == -0.1)));
        assert!(m.validated().is_err());
    }

    #[test]
    fn sequence_checks() {
        let m = small_model();
        assert!(m.check_sequences(&[0, 0], &[1, 0]).is_ok());
        assert!(m.check_sequences(&[], &[]).is_err());
        assert!(m.check_sequences(&[0], &[0, 1]).is_err());
        assert!(m.check_sequences(&[1], &[0]).is_err());
        assert!(m.check_sequences(&[0], &[2]).is_err());
    }
}
