use std::fmt;

use crate::model::{FullModel, KnownModel};

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Signature(String),
    BadEntry { child: usize, value: f64 },
    RowSum(f64),
    NonFiniteReward { index: usize, value: f64 },
    RewardLength { expected: usize, actual: usize },
}

/// One broken invariant, located by table and parent tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub table: String,
    pub parent_tuple: Vec<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}: ", self.table, self.parent_tuple)?;
        match &self.kind {
            ViolationKind::Signature(msg) => write!(f, "bad signature ({msg})"),
            ViolationKind::BadEntry { child, value } => {
                write!(f, "entry for child {child} is {value}")
            }
            ViolationKind::RowSum(sum) => write!(f, "row sums to {sum}"),
            ViolationKind::NonFiniteReward { index, value } => {
                write!(f, "reward at {index} is {value}")
            }
            ViolationKind::RewardLength { expected, actual } => {
                write!(f, "reward vector has {actual} entries, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations belonging to the named table.
    pub fn for_table<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a Violation> + 'a {
        self.violations.iter().filter(move |v| v.table == table)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_rewards(name: &str, rewards: &[f64], size: usize, out: &mut Vec<Violation>) {
    if rewards.len() != size {
        out.push(Violation {
            table: name.into(),
            parent_tuple: Vec::new(),
            kind: ViolationKind::RewardLength { expected: size, actual: rewards.len() },
        });
        return;
    }
    for (index, &value) in rewards.iter().enumerate() {
        if !value.is_finite() {
            out.push(Violation {
                table: name.into(),
                parent_tuple: Vec::new(),
                kind: ViolationKind::NonFiniteReward { index, value },
            });
        }
    }
}

pub fn validate_known_model(model: &KnownModel) -> ValidationReport {
    let mut violations = Vec::new();
    let (x, y, z, o, a) = (&model.x_space, &model.y_space, &model.z_space, &model.o_space, &model.a_space);
    violations.extend(model.p_x0.check(x, &[y]));
    violations.extend(model.p_x.check(x, &[x, y, a]));
    violations.extend(model.p_o.check(o, &[x]));
    violations.extend(model.p_z.check(z, &[x, a]));
    check_rewards("r_x", &model.r_x, x.size(), &mut violations);
    ValidationReport { violations }
}

pub fn validate_full_model(model: &FullModel) -> ValidationReport {
    let mut report = validate_known_model(&model.known);
    let s = &model.s_space;
    let k = &model.known;
    report.violations.extend(model.p_s0.check(s, &[]));
    report.violations.extend(model.p_s.check(s, &[s, &k.z_space]));
    report.violations.extend(model.p_y.check(&k.y_space, &[s]));
    check_rewards("r_s", &model.r_s, s.size(), &mut report.violations);
    report
}
