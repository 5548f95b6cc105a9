//! Plain-text model format.
//!
//! ```text
//! pkmdp-model 1
//! space <role> <name> <size> [label ...]     # roles: s y z x o a
//! table <role> <child> | [parent ...]        # roles: p_s0 p_s p_y p_x0 p_x p_o p_z
//! <parent ids ...> : <prob per child value ...>
//! reward <role> <space> : <value per element ...>   # roles: r_s r_x
//! end
//! ```
//!
//! Table rows appear in row-major parent order, one line per parent tuple.
//! Numbers are written in shortest round-trip form, so reading a written
//! model reproduces every table bit for bit. Blank lines and `#` comments
//! are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{PkmdpError, Result};
use crate::model::{CondTable, FiniteSpace, FullModel, KnownModel};

const MAGIC: &str = "pkmdp-model 1";
const SPACE_ROLES: [&str; 6] = ["s", "y", "z", "x", "o", "a"];

fn write_space(out: &mut String, role: &str, space: &FiniteSpace) {
    let _ = write!(out, "space {role} {} {}", space.name(), space.size());
    if let Some(labels) = space.labels() {
        for l in labels {
            let _ = write!(out, " {l}");
        }
    }
    out.push('\n');
}

fn write_table(out: &mut String, role: &str, table: &CondTable) {
    let _ = write!(out, "table {role} {} |", table.child_name());
    for (name, _) in table.parents() {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    let mut tuple = vec![0; table.parents().len()];
    for r in 0..table.num_rows() {
        table.decode_row(r, &mut tuple);
        for v in &tuple {
            let _ = write!(out, "{v} ");
        }
        out.push(':');
        for p in table.row_at(r) {
            let _ = write!(out, " {p:?}");
        }
        out.push('\n');
    }
}

fn write_reward(out: &mut String, role: &str, space: &FiniteSpace, values: &[f64]) {
    let _ = write!(out, "reward {role} {} :", space.name());
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

/// Serializes a full model.
pub fn write_model(model: &FullModel) -> String {
    let k = &model.known;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (role, space) in [
        ("s", &model.s_space),
        ("y", &k.y_space),
        ("z", &k.z_space),
        ("x", &k.x_space),
        ("o", &k.o_space),
        ("a", &k.a_space),
    ] {
        write_space(&mut out, role, space);
    }
    for (role, table) in [
        ("p_s0", &model.p_s0),
        ("p_s", &model.p_s),
        ("p_y", &model.p_y),
        ("p_x0", &k.p_x0),
        ("p_x", &k.p_x),
        ("p_o", &k.p_o),
        ("p_z", &k.p_z),
    ] {
        write_table(&mut out, role, table);
    }
    write_reward(&mut out, "r_s", &model.s_space, &model.r_s);
    write_reward(&mut out, "r_x", &k.x_space, &k.r_x);
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some((i + 1, line));
            }
        }
        None
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> PkmdpError {
    PkmdpError::Parse { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("cannot parse {tok:?}")))
}

/// Splits `lhs : rhs` and parses the right-hand side as floats.
fn split_values(line: usize, text: &str) -> Result<(&str, Vec<f64>)> {
    let (lhs, rhs) = text.split_once(':').ok_or_else(|| parse_err(line, "expected `:`"))?;
    let values = rhs.split_whitespace().map(|t| parse_num(line, t)).collect::<Result<Vec<f64>>>()?;
    Ok((lhs, values))
}

/// Parses a model written by [`write_model`] (or by hand in the same format).
pub fn read_model(text: &str) -> Result<FullModel> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    match lines.next_line() {
        Some((_, MAGIC)) => {}
        Some((n, other)) => return Err(parse_err(n, format!("expected `{MAGIC}`, got {other:?}"))),
        None => return Err(parse_err(0, "empty input")),
    }

    let mut spaces: HashMap<String, FiniteSpace> = HashMap::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut tables: HashMap<String, CondTable> = HashMap::new();
    let mut rewards: HashMap<String, Vec<f64>> = HashMap::new();
    let mut ended = false;

    while let Some((n, line)) = lines.next_line() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("space") => {
                let role = toks.next().ok_or_else(|| parse_err(n, "missing role"))?;
                if !SPACE_ROLES.contains(&role) {
                    return Err(parse_err(n, format!("unknown space role {role:?}")));
                }
                let name = toks.next().ok_or_else(|| parse_err(n, "missing name"))?;
                let size: usize = parse_num(n, toks.next().ok_or_else(|| parse_err(n, "missing size"))?)?;
                let labels: Vec<&str> = toks.collect();
                let space = if labels.is_empty() {
                    FiniteSpace::new(name, size)
                } else if labels.len() == size {
                    FiniteSpace::with_labels(name, labels)
                } else {
                    return Err(parse_err(n, format!("{} labels for size {size}", labels.len())));
                }
                .map_err(|e| parse_err(n, e.to_string()))?;
                by_name.insert(name.to_string(), size);
                spaces.insert(role.to_string(), space);
            }
            Some("table") => {
                let role = toks.next().ok_or_else(|| parse_err(n, "missing role"))?;
                let child = toks.next().ok_or_else(|| parse_err(n, "missing child"))?;
                if toks.next() != Some("|") {
                    return Err(parse_err(n, "expected `|` after child space"));
                }
                let lookup = |name: &str| {
                    by_name.get(name).copied().ok_or_else(|| parse_err(n, format!("undeclared space {name:?}")))
                };
                let child_size = lookup(child)?;
                let parents = toks.map(|p| Ok((p.to_string(), lookup(p)?))).collect::<Result<Vec<_>>>()?;
                let rows: usize = parents.iter().map(|(_, s)| s).product();
                let mut probs = Vec::with_capacity(rows * child_size);
                let mut table = CondTable::from_raw(
                    role.into(),
                    child.into(),
                    child_size,
                    parents.clone(),
                    vec![0.0; rows * child_size],
                )?;
                let mut expected = vec![0; parents.len()];
                for r in 0..rows {
                    let (rn, row) =
                        lines.next_line().ok_or_else(|| parse_err(n, format!("table {role} ends early")))?;
                    let (lhs, values) = split_values(rn, row)?;
                    let tuple = lhs.split_whitespace().map(|t| parse_num(rn, t)).collect::<Result<Vec<usize>>>()?;
                    table.decode_row(r, &mut expected);
                    if tuple != expected {
                        return Err(parse_err(rn, format!("expected row {expected:?}, got {tuple:?}")));
                    }
                    if values.len() != child_size {
                        return Err(parse_err(rn, format!("{} values for {child_size} children", values.len())));
                    }
                    probs.extend(values);
                }
                table = CondTable::from_raw(role.into(), child.into(), child_size, parents, probs)?;
                tables.insert(role.to_string(), table);
            }
            Some("reward") => {
                let role = toks.next().ok_or_else(|| parse_err(n, "missing role"))?;
                let (_, values) = split_values(n, line)?;
                rewards.insert(role.to_string(), values);
            }
            Some("end") => {
                ended = true;
                break;
            }
            Some(other) => return Err(parse_err(n, format!("unknown directive {other:?}"))),
            None => unreachable!(),
        }
    }
    if !ended {
        return Err(parse_err(0, "missing `end`"));
    }

    let mut take_space = |role: &str| spaces.remove(role).ok_or_else(|| parse_err(0, format!("missing space {role}")));
    let (s, y, z, x, o, a) =
        (take_space("s")?, take_space("y")?, take_space("z")?, take_space("x")?, take_space("o")?, take_space("a")?);
    let mut take_table = |role: &str| tables.remove(role).ok_or_else(|| parse_err(0, format!("missing table {role}")));
    let (p_s0, p_s, p_y, p_x0, p_x, p_o, p_z) = (
        take_table("p_s0")?,
        take_table("p_s")?,
        take_table("p_y")?,
        take_table("p_x0")?,
        take_table("p_x")?,
        take_table("p_o")?,
        take_table("p_z")?,
    );
    let r_s = rewards.remove("r_s").ok_or_else(|| parse_err(0, "missing reward r_s"))?;
    let r_x = rewards.remove("r_x").ok_or_else(|| parse_err(0, "missing reward r_x"))?;

    FullModel {
        known: KnownModel { x_space: x, y_space: y, z_space: z, o_space: o, a_space: a, p_x0, p_x, p_o, p_z, r_x },
        s_space: s,
        p_s0,
        p_s,
        p_y,
        r_s,
    }
    .validated()
}
