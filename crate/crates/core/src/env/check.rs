//! Consistency checks across the encodings of one world.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use super::{all_variants, EnvName, EnvironmentSpec};
use crate::error::{PkmdpError, Result};
use crate::model::{FullModel, Policy};

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub tolerance: f64,
    /// `(variant, exact return)` in input order.
    pub returns: Vec<(u8, f64)>,
    /// Pairs whose returns differ by more than the tolerance, with the gap.
    pub divergent: Vec<(u8, u8, f64)>,
}

impl EquivalenceReport {
    pub fn is_consistent(&self) -> bool {
        self.divergent.is_empty()
    }

    pub fn max_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for (i, (_, a)) in self.returns.iter().enumerate() {
            for (_, b) in &self.returns[i + 1..] {
                gap = gap.max((a - b).abs());
            }
        }
        gap
    }

    /// Variants that agree with fewer of the others than the best-supported variant does.
    pub fn suspects(&self) -> Vec<u8> {
        if self.is_consistent() {
            return Vec::new();
        }
        let support: Vec<usize> = self
            .returns
            .iter()
            .map(|(_, a)| self.returns.iter().filter(|(_, b)| (a - b).abs() <= self.tolerance).count())
            .collect();
        let best = support.iter().copied().max().unwrap_or(0);
        let suspects: Vec<u8> =
            self.returns.iter().zip(&support).filter(|(_, &n)| n < best).map(|((v, _), _)| *v).collect();
        if suspects.is_empty() {
            self.returns.iter().map(|(v, _)| *v).collect()
        } else {
            suspects
        }
    }

    /// Turns a divergence into an error naming the suspect variants.
    pub fn ensure(&self) -> Result<()> {
        if self.is_consistent() {
            Ok(())
        } else {
            Err(PkmdpError::VariantsDiverge { suspects: self.suspects(), detail: self.to_string() })
        }
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values: Vec<String> = self.returns.iter().map(|(v, r)| format!("variant {v}: {r:.12}")).collect();
        write!(f, "{}", values.join(", "))?;
        for (a, b, gap) in &self.divergent {
            write!(f, "; variants {a} and {b} differ by {gap:.3e}")?;
        }
        Ok(())
    }
}

pub fn check_specs_equivalence(
    specs: &[EnvironmentSpec],
    policy: &Policy,
    horizon: usize,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let returns = specs
        .iter()
        .map(|spec| Ok((spec.variant, super::exact_return(spec, policy, horizon)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut divergent = Vec::new();
    for (i, &(va, a)) in returns.iter().enumerate() {
        for &(vb, b) in &returns[i + 1..] {
            if (a - b).abs().is_nan() || (a - b).abs() > tolerance {
                divergent.push((va, vb, (a - b).abs()));
            }
        }
    }
    Ok(EquivalenceReport { tolerance, returns, divergent })
}

/// Exact returns of `policy` under all three variants of `name`.
pub fn check_variant_equivalence(name: EnvName, policy: &Policy, horizon: usize) -> Result<EquivalenceReport> {
    check_specs_equivalence(&all_variants(name)?, policy, horizon, EQUIVALENCE_TOLERANCE)
}

/// Mixes every row of `p_s` with a uniform distribution. Used to confirm that
/// the equivalence check notices a damaged table.
pub fn perturb_unknown_dynamics(model: &mut FullModel, weight: f64) {
    let n = model.p_s.child_size();
    for r in 0..model.p_s.num_rows() {
        for p in model.p_s.row_at_mut(r) {
            *p = (1.0 - weight) * *p + weight / n as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurabilityReport {
    /// For each `o * |A| + a`, the `(y, z)` it determines, if it can occur.
    pub interface: Vec<Option<(usize, usize)>>,
    /// `(o, a)` pairs compatible with more than one `(y, z)`.
    pub ambiguous: Vec<(usize, usize)>,
}

impl MeasurabilityReport {
    pub fn is_measurable(&self) -> bool {
        self.ambiguous.is_empty()
    }
}

/// Checks whether `y_t` and `z_t` are functions of `(o_t, a_t)` over every
/// reachable slice of the model.
pub fn check_measurability(model: &FullModel) -> MeasurabilityReport {
    let k = &model.known;
    let n_a = k.n_actions();
    let nz = |row: &[f64]| row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, _)| i).collect::<Vec<_>>();

    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut queue = VecDeque::new();
    for s in nz(model.p_s0.row(&[])) {
        for y in nz(model.p_y.row(&[s])) {
            for x in nz(k.p_x0.row(&[y])) {
                if seen.insert((s, y, x)) {
                    queue.push_back((s, y, x));
                }
            }
        }
    }
    let mut found: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); k.n_obs() * n_a];
    while let Some((s, y, x)) = queue.pop_front() {
        for o in nz(k.p_o.row(&[x])) {
            for a in 0..n_a {
                for z in nz(k.p_z.row(&[x, a])) {
                    found[o * n_a + a].insert((y, z));
                    for s2 in nz(model.p_s.row(&[s, z])) {
                        for y2 in nz(model.p_y.row(&[s2])) {
                            for x2 in nz(k.p_x.row(&[x, y2, a])) {
                                if seen.insert((s2, y2, x2)) {
                                    queue.push_back((s2, y2, x2));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let interface = found.iter().map(|set| if set.len() == 1 { set.iter().next().copied() } else { None }).collect();
    let ambiguous =
        found.iter().enumerate().filter(|(_, set)| set.len() > 1).map(|(i, _)| (i / n_a, i % n_a)).collect();
    MeasurabilityReport { interface, ambiguous }
}
