//! Momentum files: landmark momenta per scale, and the similarity momentum.
//!
//! ```text
//! # geoshoot momentum
//! dim = 2
//! scales = 2
//!
//! [scale 1]
//! 0.1 0
//! ...
//! ```
//!
//! ```text
//! # geoshoot similarity momentum
//! dim = 2
//! p_rho = 0.5
//! p_tau = 0.1 -0.2
//!
//! [p_R]
//! 0 -1
//! 1 0
//! ```

use nalgebra::{DMatrix, DVector};

use super::{fmt_float, parse_count, parse_row, DataFileError, Line, Lines};
use crate::sim::SimMomentum;
use crate::state::MultiscaleMomentum;

pub fn parse_momentum_file(text: &str) -> Result<MultiscaleMomentum, DataFileError> {
    let mut dim: Option<usize> = None;
    let mut num_scales: Option<usize> = None;
    let mut scales: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();
    let mut current: Option<usize> = None;

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
                    if num_scales.is_some() {
                        return Err(DataFileError::DuplicateKey {
                            line,
                            key: key.into(),
                        });
                    }
                    let n = parse_count(line, key, value)?;
                    num_scales = Some(n);
                    scales = vec![Vec::new(); n];
                    seen = vec![false; n];
                }
                other => {
                    return Err(DataFileError::UnknownKey {
                        line,
                        key: other.into(),
                    })
                }
            },
            Line::Section { line, name } => {
                let n = num_scales.ok_or(DataFileError::MissingKey {
                    key: "scales".into(),
                })?;
                let parsed = name
                    .strip_prefix("scale")
                    .and_then(|rest| rest.trim().parse::<usize>().ok())
                    .filter(|k| (1..=n).contains(k));
                let Some(scale) = parsed else {
                    return Err(DataFileError::UnknownSection {
                        line,
                        section: name.into(),
                    });
                };
                if seen[scale - 1] {
                    return Err(DataFileError::DuplicateSection {
                        line,
                        section: name.into(),
                    });
                }
                seen[scale - 1] = true;
                current = Some(scale - 1);
            }
            Line::Row { line, text } => {
                let Some(scale) = current else {
                    return Err(DataFileError::RowOutsideSection { line });
                };
                let d = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
                scales[scale].push(parse_row(line, text, d)?);
            }
        }
    }
    let _ = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
    let n = num_scales.ok_or(DataFileError::MissingKey {
        key: "scales".into(),
    })?;
    for scale in 0..n {
        if !seen[scale] {
            return Err(DataFileError::MissingSection {
                section: format!("scale {}", scale + 1),
            });
        }
    }
    Ok(MultiscaleMomentum { scales })
}

pub fn write_momentum_file(p: &MultiscaleMomentum, dim: usize) -> String {
    let mut out = String::from("# geoshoot momentum\n");
    out.push_str(&format!("dim = {dim}\n"));
    out.push_str(&format!("scales = {}\n", p.scales.len()));
    for (scale, rows) in p.scales.iter().enumerate() {
        out.push_str(&format!("\n[scale {}]\n", scale + 1));
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_sim_momentum_file(text: &str) -> Result<SimMomentum, DataFileError> {
    let mut dim: Option<usize> = None;
    let mut p_rho: Option<f64> = None;
    let mut p_tau: Option<DVector<f64>> = None;
    let mut rotation_rows: Vec<DVector<f64>> = Vec::new();
    let mut in_rotation = false;
    let mut rotation_seen = false;

    for item in Lines::new(text) {
        match item? {
            Line::KeyValue { line, key, value } => {
                in_rotation = false;
                match key {
                    "dim" => {
                        if dim.is_some() {
                            return Err(DataFileError::DuplicateKey {
                                line,
                                key: key.into(),
                            });
                        }
                        dim = Some(parse_count(line, key, value)?);
                    }
                    "p_rho" => {
                        if p_rho.is_some() {
                            return Err(DataFileError::DuplicateKey {
                                line,
                                key: key.into(),
                            });
                        }
                        let row = parse_row(line, value, 1)?;
                        p_rho = Some(row[0]);
                    }
                    "p_tau" => {
                        if p_tau.is_some() {
                            return Err(DataFileError::DuplicateKey {
                                line,
                                key: key.into(),
                            });
                        }
                        let d = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
                        p_tau = Some(parse_row(line, value, d)?);
                    }
                    other => {
                        return Err(DataFileError::UnknownKey {
                            line,
                            key: other.into(),
                        })
                    }
                }
            }
            Line::Section { line, name } => {
                if name != "p_R" {
                    return Err(DataFileError::UnknownSection {
                        line,
                        section: name.into(),
                    });
                }
                if rotation_seen {
                    return Err(DataFileError::DuplicateSection {
                        line,
                        section: name.into(),
                    });
                }
                rotation_seen = true;
                in_rotation = true;
            }
            Line::Row { line, text } => {
                if !in_rotation {
                    return Err(DataFileError::RowOutsideSection { line });
                }
                let d = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
                if rotation_rows.len() == d {
                    return Err(DataFileError::WrongColumnCount {
                        line,
                        expected: d,
                        got: d + 1,
                    });
                }
                rotation_rows.push(parse_row(line, text, d)?);
            }
        }
    }
    let d = dim.ok_or(DataFileError::MissingKey { key: "dim".into() })?;
    let p_rho = p_rho.ok_or(DataFileError::MissingKey {
        key: "p_rho".into(),
    })?;
    let p_tau = p_tau.ok_or(DataFileError::MissingKey {
        key: "p_tau".into(),
    })?;
    if !rotation_seen {
        return Err(DataFileError::MissingSection {
            section: "p_R".into(),
        });
    }
    if rotation_rows.len() != d {
        return Err(DataFileError::Shape(crate::state::ShapeError::CountMismatch {
            scale: 0,
            expected: d,
            got: rotation_rows.len(),
        }));
    }
    let mut rotation = DMatrix::zeros(d, d);
    for (i, row) in rotation_rows.iter().enumerate() {
        for j in 0..d {
            rotation[(i, j)] = row[j];
        }
    }
    Ok(SimMomentum {
        scaling: p_rho,
        rotation,
        translation: p_tau,
    })
}

pub fn write_sim_momentum_file(pa: &SimMomentum) -> String {
    let d = pa.dim();
    let mut out = String::from("# geoshoot similarity momentum\n");
    out.push_str(&format!("dim = {d}\n"));
    out.push_str(&format!("p_rho = {}\n", fmt_float(pa.scaling)));
    let tau: Vec<String> = pa.translation.iter().map(|&v| fmt_float(v)).collect();
    out.push_str(&format!("p_tau = {}\n", tau.join(" ")));
    out.push_str("\n[p_R]\n");
    for i in 0..d {
        let row: Vec<String> = (0..d).map(|j| fmt_float(pa.rotation[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
