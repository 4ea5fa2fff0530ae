//! The problem file: source and target clouds at every scale.
//!
//! ```text
//! # geoshoot problem
//! dim = 2
//! scales = 2
//!
//! [scale 1 source]
//! 0 0
//! 1 0
//!
//! [scale 1 target]
//! ...
//! ```
//!
//! Scales are listed coarse to fine with 1-based labels; every scale needs
//! both a `source` and a `target` section with matching row counts, and
//! counts must not decrease toward finer scales.

use nalgebra::DVector;

use super::{fmt_float, parse_count, parse_row, DataFileError, Line, Lines};
use crate::state::MultiscaleConfiguration;

/// Parsed problem geometry (kernel widths and solver settings live in the
/// run configuration).
#[derive(Clone, Debug, PartialEq)]
pub struct PointsData {
    pub dim: usize,
    pub source: MultiscaleConfiguration,
    pub target: MultiscaleConfiguration,
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Source,
    Target,
}

fn section_name(scale: usize, role: Role) -> String {
    format!(
        "scale {} {}",
        scale + 1,
        match role {
            Role::Source => "source",
            Role::Target => "target",
        }
    )
}

pub fn parse_points_file(text: &str) -> Result<PointsData, DataFileError> {
    let mut dim: Option<usize> = None;
    let mut scales: Option<usize> = None;
    let mut source: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut target: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut seen: Vec<(bool, bool)> = Vec::new();
    let mut current: Option<(usize, Role)> = None;

    for item in Lines::new(text) {
        match item? {
            Line::KeyValue { line, key, value } => match key {
                "dim" => {
                    if dim.is_some() {
                        return Err(DataFileError::DuplicateKey {
                            line,
                            key: key.into(),
                        });
                    }
                    dim = Some(parse_count(line, key, value)?);
                }
                "scales" => {
                    if scales.is_some() {
                        return Err(DataFileError::DuplicateKey {
                            line,
                            key: key.into(),
                        });
                    }
                    let n = parse_count(line, key, value)?;
                    scales = Some(n);
                    source = vec![Vec::new(); n];
                    target = vec![Vec::new(); n];
                    seen = vec![(false, false); n];
                }
                other => {
                    return Err(DataFileError::UnknownKey {
                        line,
                        key: other.into(),
                    })
                }
            },
            Line::Section { line, name } => {
                let num_scales = scales.ok_or(DataFileError::MissingKey {
                    key: "scales".into(),
                })?;
                let parts: Vec<&str> = name.split_whitespace().collect();
                let parsed = match parts.as_slice() {
                    ["scale", idx, role] => idx.parse::<usize>().ok().and_then(|n| {
                        let role = match *role {
                            "source" => Some(Role::Source),
                            "target" => Some(Role::Target),
                            _ => None,
                        };
                        role.and_then(|r| {
                            (1..=num_scales).contains(&n).then_some((n - 1, r))
                        })
                    }),
                    _ => None,
                };
                let Some((scale, role)) = parsed else {
                    return Err(DataFileError::UnknownSection {
                        line,
                        section: name.into(),
                    });
                };
                let flag = match role {
                    Role::Source => &mut seen[scale].0,
                    Role::Target => &mut seen[scale].1,
                };
                if *flag {
                    return Err(DataFileError::DuplicateSection {
                        line,
                        section: name.into(),
                    });
                }
                *flag = true;
                current = Some((scale, role));
            }
            Line::Row { line, text } => {
                let Some((scale, role)) = current else {
                    return Err(DataFileError::RowOutsideSection { line });
                };
                let d = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
                let row = parse_row(line, text, d)?;
                match role {
                    Role::Source => source[scale].push(row),
                    Role::Target => target[scale].push(row),
                }
            }
        }
    }

    let dim = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
    let num_scales = scales.ok_or(DataFileError::MissingKey {
        key: "scales".into(),
    })?;
    for scale in 0..num_scales {
        if !seen[scale].0 {
            return Err(DataFileError::MissingSection {
                section: section_name(scale, Role::Source),
            });
        }
        if !seen[scale].1 {
            return Err(DataFileError::MissingSection {
                section: section_name(scale, Role::Target),
            });
        }
        if source[scale].len() != target[scale].len() {
            return Err(DataFileError::Shape(crate::state::ShapeError::CountMismatch {
                scale,
                expected: source[scale].len(),
                got: target[scale].len(),
            }));
        }
    }
    // nested cardinalities and non-emptiness are enforced here
    let source = MultiscaleConfiguration::new(source, dim)?;
    let target = MultiscaleConfiguration::new(target, dim)?;
    Ok(PointsData {
        dim,
        source,
        target,
    })
}

/// Canonical form: fixed header, scales coarse to fine, floats at 17
/// significant digits.
pub fn write_points_file(data: &PointsData) -> String {
    let mut out = String::from("# geoshoot problem\n");
    out.push_str(&format!("dim = {}\n", data.dim));
    out.push_str(&format!("scales = {}\n", data.source.num_scales()));
    for scale in 0..data.source.num_scales() {
        for (role, config) in [(Role::Source, &data.source), (Role::Target, &data.target)] {
            out.push_str(&format!("\n[{}]\n", section_name(scale, role)));
            for point in &config.scales[scale] {
                let cells: Vec<String> = point.iter().map(|&v| fmt_float(v)).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "# geoshoot problem\ndim = 2\nscales = 1\n\n[scale 1 source]\n0 0\n\n[scale 1 target]\n1 1\n";

    #[test]
    fn minimal_file_loads() {
        let data = parse_points_file(MINIMAL).unwrap();
        assert_eq!(data.dim, 2);
        assert_eq!(data.source.num_scales(), 1);
        assert_eq!(data.source.scales[0][0], DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(data.target.scales[0][0], DVector::from_vec(vec![1.0, 1.0]));
    }

    #[test]
    fn canonical_roundtrip_is_byte_exact() {
        let data = parse_points_file(MINIMAL).unwrap();
        let canonical = write_points_file(&data);
        let reparsed = parse_points_file(&canonical).unwrap();
        assert_eq!(reparsed, data);
        assert_eq!(write_points_file(&reparsed), canonical);
    }

    #[test]
    fn seventeen_digits_roundtrip_doubles_exactly() {
        let tricky = [
            0.1,
            1.0 / 3.0,
            -2.2250738585072014e-308,
            9.007199254740993e15,
            std::f64::consts::PI,
        ];
        for v in tricky {
            let text = fmt_float(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {text}");
        }
    }

    #[test]
    fn reports_first_bad_line() {
        let text = "dim = 2\nscales = 1\n[scale 1 source]\n0 nope\n[scale 1 target]\n0 0\n";
        match parse_points_file(text) {
            Err(DataFileError::BadNumber { line: 4, token }) => assert_eq!(token, "nope"),
            other => panic!("expected BadNumber at line 4, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_column_count() {
        let text = "dim = 3\nscales = 1\n[scale 1 source]\n0 0\n[scale 1 target]\n0 0 0\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::WrongColumnCount {
                line: 4,
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn rejects_missing_and_unknown_sections() {
        let text = "dim = 2\nscales = 2\n[scale 1 source]\n0 0\n[scale 1 target]\n0 0\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::MissingSection { .. })
        ));
        let text = "dim = 2\nscales = 1\n[scale 7 source]\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::UnknownSection { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_source_target_count_mismatch() {
        let text = "dim = 2\nscales = 1\n[scale 1 source]\n0 0\n1 1\n[scale 1 target]\n0 0\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::Shape(_))
        ));
    }

    #[test]
    fn rejects_shrinking_scale_counts() {
        let text = "dim = 2\nscales = 2\n\
                    [scale 1 source]\n0 0\n1 1\n[scale 1 target]\n0 0\n1 1\n\
                    [scale 2 source]\n0 0\n[scale 2 target]\n0 0\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::Shape(
                crate::state::ShapeError::NonNestedCounts { .. }
            ))
        ));
    }

    #[test]
    fn rejects_stray_rows_and_non_finite() {
        assert!(matches!(
            parse_points_file("dim = 2\nscales = 1\n0 0\n"),
            Err(DataFileError::RowOutsideSection { line: 3 })
        ));
        let text = "dim = 2\nscales = 1\n[scale 1 source]\nnan 0\n[scale 1 target]\n0 0\n";
        assert!(matches!(
            parse_points_file(text),
            Err(DataFileError::NonFinite { .. })
        ));
    }
}
