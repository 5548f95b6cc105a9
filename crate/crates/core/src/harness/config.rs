//! `key = value` experiment files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! A key given twice keeps its last value, which is how command-line flags
//! override a file: they are appended after it.

use std::path::PathBuf;

use crate::env::EnvName;
use crate::error::{PkmdpError, Result};
use crate::harness::{ExperimentConfig, VariantSelection};

/// Every key the experiment file understands.
pub const CONFIG_KEYS: &[&str] = &[
    "env",
    "variant",
    "runs",
    "episodes",
    "horizon",
    "seed",
    "out",
    "max_iterations",
    "initial_step",
    "contraction",
    "sufficient_increase",
    "max_contractions",
    "restart_period",
    "convergence_tol",
    "direction_rule",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    /// Line in the source file; `None` for settings that came from elsewhere.
    pub line: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    entries: Vec<Setting>,
}

impl Settings {
    /// Adds a setting that did not come from a file (a command-line flag).
    pub fn push(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key, None)?;
        self.entries.push(Setting { key: key.to_string(), value: value.into(), line: None });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Setting> {
        self.entries.iter().rev().find(|s| s.key == key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Setting> {
        self.entries.iter()
    }
}

fn check_key(key: &str, line: Option<usize>) -> Result<()> {
    if CONFIG_KEYS.contains(&key) {
        return Ok(());
    }
    let message = format!("unknown key `{key}` (known: {})", CONFIG_KEYS.join(", "));
    Err(match line {
        Some(line) => PkmdpError::Parse { line, message },
        None => PkmdpError::InvalidConfig(message),
    })
}

pub fn parse_settings(text: &str) -> Result<Settings> {
    let mut settings = Settings::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(PkmdpError::Parse { line, message: format!("expected `key = value`, got `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        check_key(key, Some(line))?;
        if value.is_empty() {
            return Err(PkmdpError::Parse { line, message: format!("`{key}` has no value") });
        }
        settings.entries.push(Setting { key: key.to_string(), value: value.to_string(), line: Some(line) });
    }
    Ok(settings)
}

fn value_error(setting: &Setting, reason: String) -> PkmdpError {
    let message = format!("bad value `{}` for `{}`: {reason}", setting.value, setting.key);
    match setting.line {
        Some(line) => PkmdpError::Parse { line, message },
        None => PkmdpError::InvalidConfig(message),
    }
}

fn parsed<T>(setting: &Setting) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    setting.value.parse().map_err(|e: T::Err| value_error(setting, e.to_string()))
}

impl ExperimentConfig {
    /// Builds a config from settings. `env` is required; the variant
    /// defaults to all three and everything else to the reference settings.
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        let env: EnvName = match settings.get("env") {
            Some(s) => parsed(s)?,
            None => return Err(PkmdpError::InvalidConfig("no environment given (`env`)".into())),
        };
        let variant = match settings.get("variant") {
            Some(s) => parsed(s)?,
            None => VariantSelection::All,
        };
        let mut config = ExperimentConfig::new(env, variant);
        for key in CONFIG_KEYS.iter().skip(2) {
            let Some(s) = settings.get(key) else { continue };
            let opt = &mut config.optimizer;
            match *key {
                "runs" => config.runs = parsed(s)?,
                "episodes" => config.episodes = parsed(s)?,
                "horizon" => config.horizon = parsed(s)?,
                "seed" => config.base_seed = parsed(s)?,
                "out" => config.output_path = Some(PathBuf::from(&s.value)),
                "max_iterations" => opt.max_iterations = parsed(s)?,
                "initial_step" => opt.line_search.initial_step = parsed(s)?,
                "contraction" => opt.line_search.contraction = parsed(s)?,
                "sufficient_increase" => opt.line_search.sufficient_increase = parsed(s)?,
                "max_contractions" => opt.line_search.max_contractions = parsed(s)?,
                "restart_period" => {
                    opt.restart_period = match s.value.as_str() {
                        "auto" => None,
                        _ => Some(parsed(s)?),
                    }
                }
                "convergence_tol" => opt.convergence_tol = parsed(s)?,
                "direction_rule" => opt.direction_rule = parsed(s)?,
                _ => unreachable!("key list and match disagree"),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::DirectionRule;

    #[test]
    fn full_file_parses() {
        let text = "\
# experiment
env = clogged_pipe
variant = 2   # known cart control
runs=3
episodes = 7
horizon = 20
seed = 42
out = curves/cp.csv
max_iterations = 5
initial_step = 0.5
contraction = 0.25
sufficient_increase = 0.001
max_contractions = 10
restart_period = 4
convergence_tol = 1e-8
direction_rule = fr
";
        let c = ExperimentConfig::from_settings(&parse_settings(text).unwrap()).unwrap();
        assert_eq!(c.env, EnvName::CloggedPipe);
        assert_eq!(c.variant, VariantSelection::One(2));
        assert_eq!((c.runs, c.episodes, c.horizon, c.base_seed), (3, 7, 20, 42));
        assert_eq!(c.output_path, Some(PathBuf::from("curves/cp.csv")));
        let o = &c.optimizer;
        assert_eq!(o.max_iterations, 5);
        assert_eq!(o.line_search.initial_step, 0.5);
        assert_eq!(o.line_search.contraction, 0.25);
        assert_eq!(o.line_search.sufficient_increase, 0.001);
        assert_eq!(o.line_search.max_contractions, 10);
        assert_eq!(o.restart_period, Some(4));
        assert_eq!(o.convergence_tol, 1e-8);
        assert_eq!(o.direction_rule, DirectionRule::FletcherReeves);
    }

    #[test]
    fn defaults_and_overrides() {
        let mut s = parse_settings("env = load_unload\nruns = 2\n").unwrap();
        let c = ExperimentConfig::from_settings(&s).unwrap();
        assert_eq!(c.variant, VariantSelection::All);
        assert_eq!((c.runs, c.episodes, c.horizon), (2, 80, 100));
        s.push("runs", "5").unwrap();
        s.push("variant", "3").unwrap();
        let c = ExperimentConfig::from_settings(&s).unwrap();
        assert_eq!((c.runs, c.variant), (5, VariantSelection::One(3)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line_of = |text: &str| match parse_settings(text).and_then(|s| ExperimentConfig::from_settings(&s)) {
            Err(PkmdpError::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        };
        assert_eq!(line_of("env = load_unload\n\nrunz = 3\n"), 3);
        assert_eq!(line_of("env = load_unload\njust words\n"), 2);
        assert_eq!(line_of("env = load_unload\nruns =\n"), 2);
        assert_eq!(line_of("# c\nenv = load_unload\nruns = many\n"), 3);
        assert_eq!(line_of("env = nowhere\n"), 1);
        assert_eq!(line_of("env = load_unload\nvariant = 4\n"), 2);
    }

    #[test]
    fn semantic_errors() {
        let bad = |text: &str| ExperimentConfig::from_settings(&parse_settings(text).unwrap()).is_err();
        assert!(bad("runs = 3\n"));
        assert!(bad("env = load_unload\nruns = 0\n"));
        assert!(bad("env = load_unload\ncontraction = 1.5\n"));
        let mut s = Settings::default();
        assert!(s.push("colour", "red").is_err());
        assert!(s.is_empty());
    }
}
