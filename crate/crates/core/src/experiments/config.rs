//! Experiment description files (TOML) and `key=value` overrides.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scenario::ScenarioConfig;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", describe_io(.path, .drop))]
    Io {
        path: PathBuf,
        drop: Option<usize>,
        source: io::Error,
    },
    #[error("drop {drop}: {source}")]
    Drop { drop: usize, source: Error },
}

fn describe_io(path: &Path, drop: &Option<usize>) -> String {
    match drop {
        Some(d) => format!("writing {} (drop {d})", path.display()),
        None => format!("accessing {}", path.display()),
    }
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, drop: Option<usize>) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| ExperimentError::Io {
            path: path.to_path_buf(),
            drop,
            source,
        }
    }

    /// Process exit code: 2 for IO failures, 3 for bad configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Io { .. } => 2,
            ExperimentError::Config(_) => 3,
            ExperimentError::Drop { source, .. } => match source {
                Error::InvalidConfig(_) | Error::OrthogonalImpossible { .. } => 3,
                _ => 1,
            },
        }
    }
}

impl From<Error> for ExperimentError {
    fn from(e: Error) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

/// Which artifacts to write besides the per-drop records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSelection {
    pub cdf: bool,
    pub convergence: bool,
    pub table: bool,
    /// Monte Carlo check of the closed-form SINR on drop 0.
    pub validation: bool,
}

impl Default for OutputSelection {
    fn default() -> Self {
        OutputSelection {
            cdf: true,
            convergence: true,
            table: true,
            validation: false,
        }
    }
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_validation_samples() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "one")]
    pub n_drops: usize,
    #[serde(default)]
    pub outputs: OutputSelection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Also solve every drop with all receiver weights equal to one.
    #[serde(default)]
    pub benchmark: bool,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: ScenarioConfig::default(),
            n_drops: 1,
            outputs: OutputSelection::default(),
            output_dir: default_output_dir(),
            benchmark: false,
            validation_samples: default_validation_samples(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_drops == 0 {
            return Err(ExperimentError::Config("n_drops must be >= 1".into()));
        }
        if self.outputs.validation && self.validation_samples < 2 {
            return Err(ExperimentError::Config("validation_samples must be >= 2".into()));
        }
        self.scenario.validate()?;
        Ok(())
    }

    /// Parses TOML text, applies `overrides` (`dotted.key=value`) and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let spec: ExperimentSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(ExperimentError::io(path, None))?;
        Self::from_toml_str(&text, overrides)
    }
}

/// Sets `a.b.c=value` in `table`. The value is read as a TOML value when it
/// parses as one (`3`, `true`, `[1.0, 2.0]`, `"x"`) and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let spec = ExperimentSpec::from_toml_str("", &[]).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
    }

    #[test]
    fn overrides_nested_and_typed() {
        let spec = ExperimentSpec::from_toml_str(
            "n_drops = 3\n[scenario]\naps = 10\n",
            &[
                "scenario.aps=12".into(),
                "scenario.sinr_targets=[1.0]".into(),
                "scenario.rtus=1".into(),
                "output_dir=out/x".into(),
                "outputs.cdf=false".into(),
            ],
        )
        .unwrap();
        assert_eq!(spec.scenario.aps, 12);
        assert_eq!(spec.scenario.sinr_targets, vec![1.0]);
        assert_eq!(spec.output_dir, PathBuf::from("out/x"));
        assert!(!spec.outputs.cdf);
        assert_eq!(spec.n_drops, 3);
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            ("n_drops = 0", vec![]),
            ("bogus = 1", vec![]),
            ("[scenario]\nusers = 1\nrtus = 2", vec![]),
            ("", vec!["noequals".to_string()]),
            ("n_drops = 1", vec!["n_drops.x=1".to_string()]),
            ("n_drops = ", vec![]),
        ];
        for (text, ov) in cases {
            let err = ExperimentSpec::from_toml_str(text, &ov).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{text}: {err}");
        }
    }

    #[test]
    fn io_errors_map_to_exit_code_two() {
        let err = ExperimentSpec::from_file(Path::new("/nonexistent/cfg.toml"), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
