//! Compact probe-grid specs for the command line:
//! `minx,miny..maxx,maxy:resolution[@scale]`, e.g. `-1,-1..1,1:10@2`.
//! The scale label is 1-based and defaults to the finest scale.

use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub resolution: usize,
    /// 1-based scale label; `None` means the finest scale.
    pub scale: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridSpecError {
    #[error("grid spec must look like 'min..max:resolution[@scale]', got '{0}'")]
    Malformed(String),
    #[error("grid corner '{0}' is not a comma-separated list of finite numbers")]
    BadCorner(String),
    #[error("grid corners have different dimensions: {min} vs {max}")]
    CornerDimMismatch { min: usize, max: usize },
    #[error("grid bounds must satisfy min[i] <= max[i] (axis {axis})")]
    Unordered { axis: usize },
    #[error("grid resolution must be a positive integer, got '{0}'")]
    BadResolution(String),
    #[error("grid scale must be a positive integer, got '{0}'")]
    BadScale(String),
}

fn parse_corner(text: &str) -> Result<Vec<f64>, GridSpecError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(str::trim).map(str::parse).collect();
    match values {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(GridSpecError::BadCorner(text.into())),
    }
}

pub fn parse_grid_spec(spec: &str) -> Result<GridSpec, GridSpecError> {
    let (bounds, rest) = spec
        .split_once("..")
        .ok_or_else(|| GridSpecError::Malformed(spec.into()))?;
    let (max_text, tail) = rest
        .split_once(':')
        .ok_or_else(|| GridSpecError::Malformed(spec.into()))?;
    let (resolution_text, scale_text) = match tail.split_once('@') {
        Some((r, s)) => (r, Some(s)),
        None => (tail, None),
    };
    let min = parse_corner(bounds)?;
    let max = parse_corner(max_text)?;
    if min.len() != max.len() {
        return Err(GridSpecError::CornerDimMismatch {
            min: min.len(),
            max: max.len(),
        });
    }
    for axis in 0..min.len() {
        if min[axis] > max[axis] {
            return Err(GridSpecError::Unordered { axis });
        }
    }
    let resolution = match resolution_text.trim().parse::<usize>() {
        Ok(n) if n >= 1 => n,
        _ => return Err(GridSpecError::BadResolution(resolution_text.into())),
    };
    let scale = match scale_text {
        None => None,
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => return Err(GridSpecError::BadScale(s.into())),
        },
    };
    Ok(GridSpec {
        min,
        max,
        resolution,
        scale,
    })
}
