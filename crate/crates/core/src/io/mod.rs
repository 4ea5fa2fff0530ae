//! File formats and table writers.
//!
//! Problem and momentum data use a line-based key/value format with
//! bracketed sections and whitespace-separated number rows — diff-able,
//! dependency-free, and canonical: the writers emit a fixed layout with
//! floats at 17 significant digits, so `write(parse(x)) == x` byte for byte
//! on canonical inputs and every double round-trips exactly.
//!
//! Run configuration is TOML. Trajectories and probe paths are exported as
//! flat tab-separated tables (step, scale, index, coordinates) for external
//! plotting.

mod grid;
mod momentum;
mod points;
mod run_config;
mod table;

pub use grid::{parse_grid_spec, GridSpec};
pub use momentum::{
    parse_momentum_file, parse_sim_momentum_file, write_momentum_file, write_sim_momentum_file,
};
pub use points::{parse_points_file, write_points_file, PointsData};
pub use run_config::{
    ConfigFileError, IntegratorSection, OptimizerSection, ProbeSection, ProblemSection, RunConfig,
};
pub use table::{
    fmt_float, write_history_table, write_probe_table, write_sim_trajectory_table,
    write_trajectory_table,
};

use thiserror::Error;

/// Parse/validation failure in a data file (points or momenta).
///
/// Every variant carries enough context to locate the defect; [`DataFileError::code`]
/// exposes a stable machine-readable tag.
#[derive(Debug, Error, PartialEq)]
pub enum DataFileError {
    #[error("line {line}: expected '{expected}'")]
    Syntax { line: usize, expected: String },
    #[error("line {line}: malformed number '{token}'")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key '{key}'")]
    MissingKey { key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key '{key}' must be a positive integer")]
    BadCount { line: usize, key: String },
    #[error("line {line}: unknown section '{section}'")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: duplicate section '{section}'")]
    DuplicateSection { line: usize, section: String },
    #[error("missing section '{section}'")]
    MissingSection { section: String },
    #[error("line {line}: row has {got} columns, expected {expected}")]
    WrongColumnCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: data row outside any section")]
    RowOutsideSection { line: usize },
    #[error("line {line}: number '{token}' is not finite")]
    NonFinite { line: usize, token: String },
    #[error("shape violation: {0}")]
    Shape(#[from] crate::state::ShapeError),
}

impl DataFileError {
    /// Stable machine-readable tag for scripting against stderr.
    pub fn code(&self) -> &'static str {
        match self {
            DataFileError::Syntax { .. } => "parse/syntax",
            DataFileError::BadNumber { .. } => "parse/number",
            DataFileError::UnknownKey { .. } => "parse/unknown-key",
            DataFileError::MissingKey { .. } => "parse/missing-key",
            DataFileError::DuplicateKey { .. } => "parse/duplicate-key",
            DataFileError::BadCount { .. } => "parse/bad-count",
            DataFileError::UnknownSection { .. } => "parse/unknown-section",
            DataFileError::DuplicateSection { .. } => "parse/duplicate-section",
            DataFileError::MissingSection { .. } => "parse/missing-section",
            DataFileError::WrongColumnCount { .. } => "parse/column-count",
            DataFileError::RowOutsideSection { .. } => "parse/stray-row",
            DataFileError::NonFinite { .. } => "parse/non-finite",
            DataFileError::Shape(_) => "shape",
        }
    }
}

/// Shared line scanner: strips comments, tracks 1-based line numbers.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

pub(crate) enum Line<'a> {
    KeyValue {
        line: usize,
        key: &'a str,
        value: &'a str,
    },
    Section {
        line: usize,
        name: &'a str,
    },
    Row {
        line: usize,
        text: &'a str,
    },
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = Result<Line<'a>, DataFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        for (idx, raw) in self.inner.by_ref() {
            let line = idx + 1;
            let text = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if text.is_empty() {
                continue;
            }
            if let Some(stripped) = text.strip_prefix('[') {
                let Some(name) = stripped.strip_suffix(']') else {
                    return Some(Err(DataFileError::Syntax {
                        line,
                        expected: "[section]".into(),
                    }));
                };
                return Some(Ok(Line::Section {
                    line,
                    name: name.trim(),
                }));
            }
            if let Some(eq) = text.find('=') {
                return Some(Ok(Line::KeyValue {
                    line,
                    key: text[..eq].trim(),
                    value: text[eq + 1..].trim(),
                }));
            }
            return Some(Ok(Line::Row { line, text }));
        }
        None
    }
}

/// Parses one row of exactly `dim` finite floats.
pub(crate) fn parse_row(
    line: usize,
    text: &str,
    dim: usize,
) -> Result<nalgebra::DVector<f64>, DataFileError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != dim {
        return Err(DataFileError::WrongColumnCount {
            line,
            expected: dim,
            got: tokens.len(),
        });
    }
    let mut out = nalgebra::DVector::zeros(dim);
    for (c, token) in tokens.iter().enumerate() {
        let v: f64 = token.parse().map_err(|_| DataFileError::BadNumber {
            line,
            token: (*token).into(),
        })?;
        if !v.is_finite() {
            return Err(DataFileError::NonFinite {
                line,
                token: (*token).into(),
            });
        }
        out[c] = v;
    }
    Ok(out)
}

pub(crate) fn parse_count(line: usize, key: &str, value: &str) -> Result<usize, DataFileError> {
    match value.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(DataFileError::BadCount {
            line,
            key: key.into(),
        }),
    }
}
