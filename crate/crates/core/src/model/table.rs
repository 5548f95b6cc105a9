use crate::error::{PkmdpError, Result};
use crate::model::space::FiniteSpace;
use crate::model::validate::{Violation, ViolationKind};

/// Rows of a conditional table must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Dense conditional probability table `p(child | parents)`.
///
/// Rows are indexed row-major by the parent tuple (first parent most
/// significant); each row holds one probability per child value.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable {
    name: String,
    child: String,
    child_size: usize,
    parents: Vec<(String, usize)>,
    probs: Vec<f64>,
}

impl CondTable {
    /// All-zero table with the given signature.
    pub fn zeros(name: impl Into<String>, child: &FiniteSpace, parents: &[&FiniteSpace]) -> Self {
        let parents: Vec<(String, usize)> = parents.iter().map(|s| (s.name().to_string(), s.size())).collect();
        let rows: usize = parents.iter().map(|(_, n)| n).product();
        Self {
            name: name.into(),
            child: child.name().to_string(),
            child_size: child.size(),
            parents,
            probs: vec![0.0; rows * child.size()],
        }
    }

    /// Builds a table by letting `fill` write each row given its parent tuple.
    pub fn from_fn<F>(name: impl Into<String>, child: &FiniteSpace, parents: &[&FiniteSpace], mut fill: F) -> Self
    where
        F: FnMut(&[usize], &mut [f64]),
    {
        let mut table = Self::zeros(name, child, parents);
        let mut tuple = vec![0; table.parents.len()];
        for row in 0..table.num_rows() {
            table.decode_row(row, &mut tuple);
            let n = table.child_size;
            fill(&tuple, &mut table.probs[row * n..(row + 1) * n]);
        }
        table
    }

    /// A table whose every row is a point mass at `f(parents)`.
    pub fn deterministic<F>(name: impl Into<String>, child: &FiniteSpace, parents: &[&FiniteSpace], mut f: F) -> Self
    where
        F: FnMut(&[usize]) -> usize,
    {
        Self::from_fn(name, child, parents, |tuple, row| row[f(tuple)] = 1.0)
    }

    /// Unconditional distribution (no parents).
    pub fn vector(name: impl Into<String>, child: &FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        Self::from_raw(name.into(), child.name().to_string(), child.size(), Vec::new(), probs)
    }

    pub(crate) fn from_raw(
        name: String,
        child: String,
        child_size: usize,
        parents: Vec<(String, usize)>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        let rows: usize = parents.iter().map(|(_, n)| n).product();
        if probs.len() != rows * child_size {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{} entries for table {name}", rows * child_size),
                actual: probs.len().to_string(),
            });
        }
        Ok(Self { name, child, child_size, parents, probs })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn child_name(&self) -> &str {
        &self.child
    }

    pub fn child_size(&self) -> usize {
        self.child_size
    }

    pub fn parents(&self) -> &[(String, usize)] {
        &self.parents
    }

    pub fn num_rows(&self) -> usize {
        self.parents.iter().map(|(_, n)| n).product()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row_index(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.parents.len());
        tuple.iter().zip(&self.parents).fold(0, |acc, (&v, (_, n))| {
            debug_assert!(v < *n);
            acc * n + v
        })
    }

    pub fn decode_row(&self, mut row: usize, tuple: &mut [usize]) {
        for (slot, (_, n)) in tuple.iter_mut().zip(&self.parents).rev() {
            *slot = row % n;
            row /= n;
        }
    }

    pub fn row(&self, tuple: &[usize]) -> &[f64] {
        self.row_at(self.row_index(tuple))
    }

    pub fn row_at(&self, row: usize) -> &[f64] {
        &self.probs[row * self.child_size..(row + 1) * self.child_size]
    }

    pub fn row_at_mut(&mut self, row: usize) -> &mut [f64] {
        let n = self.child_size;
        &mut self.probs[row * n..(row + 1) * n]
    }

    pub fn prob(&self, tuple: &[usize], child: usize) -> f64 {
        self.row(tuple)[child]
    }

    /// Checks the signature against the expected spaces and every row's
    /// nonnegativity and normalization.
    pub fn check(&self, child: &FiniteSpace, parents: &[&FiniteSpace]) -> Vec<Violation> {
        let mut out = Vec::new();
        let signature_ok = self.child == child.name()
            && self.child_size == child.size()
            && self.parents.len() == parents.len()
            && self.parents.iter().zip(parents).all(|((name, n), s)| name == s.name() && *n == s.size());
        if !signature_ok {
            let expected: Vec<String> = parents.iter().map(|s| s.to_string()).collect();
            out.push(Violation {
                table: self.name.clone(),
                parent_tuple: Vec::new(),
                kind: ViolationKind::Signature(format!("expected {} | {}", child, expected.join(", "))),
            });
            return out;
        }
        let mut tuple = vec![0; self.parents.len()];
        for r in 0..self.num_rows() {
            self.decode_row(r, &mut tuple);
            let row = self.row_at(r);
            let mut bad_entry = false;
            for (c, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    bad_entry = true;
                    out.push(Violation {
                        table: self.name.clone(),
                        parent_tuple: tuple.clone(),
                        kind: ViolationKind::BadEntry { child: c, value: p },
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !bad_entry && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                out.push(Violation {
                    table: self.name.clone(),
                    parent_tuple: tuple.clone(),
                    kind: ViolationKind::RowSum(sum),
                });
            }
        }
        out
    }
}
