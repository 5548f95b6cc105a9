use std::collections::HashSet;
use std::fmt;

use crate::error::{PkmdpError, Result};

/// A finite set of values identified by ids `0..size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteSpace {
    name: String,
    size: usize,
    labels: Option<Vec<String>>,
}

impl FiniteSpace {
    pub fn new(name: impl Into<String>, size: usize) -> Result<Self> {
        let name = name.into();
        if size == 0 {
            return Err(PkmdpError::InvalidSpace { name, reason: "size must be at least 1".into() });
        }
        Ok(Self { name, size, labels: None })
    }

    pub fn with_labels<I, S>(name: impl Into<String>, labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut space = Self::new(name, labels.len())?;
        space.set_labels(labels)?;
        Ok(space)
    }

    fn set_labels(&mut self, labels: Vec<String>) -> Result<()> {
        if labels.len() != self.size {
            return Err(PkmdpError::InvalidSpace {
                name: self.name.clone(),
                reason: format!("{} labels for {} elements", labels.len(), self.size),
            });
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(PkmdpError::InvalidSpace {
                    name: self.name.clone(),
                    reason: format!("label {label:?} is empty or contains whitespace"),
                });
            }
            if !seen.insert(label.as_str()) {
                return Err(PkmdpError::InvalidSpace {
                    name: self.name.clone(),
                    reason: format!("duplicate label {label:?}"),
                });
            }
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, id: usize) -> String {
        match &self.labels {
            Some(labels) => labels[id].clone(),
            None => id.to_string(),
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.size
    }

    /// A one-element space, used for interface variables that carry no information.
    pub fn singleton(name: impl Into<String>) -> Self {
        Self { name: name.into(), size: 1, labels: None }
    }
}

impl fmt::Display for FiniteSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.size)
    }
}
