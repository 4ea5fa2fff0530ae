//! Multiscale landmark configurations, momenta, and the band fields that
//! couple scales.
//!
//! A configuration holds one point cloud per scale; index sets grow from
//! coarse to fine and are encoded by prefix nesting — scale `ℓ` must not
//! carry more landmarks than scale `ℓ+1`. The dynamics only uses the
//! cardinality monotonicity, never a cross-scale identification of indices.
//!
//! Duplicate positions within a scale are allowed; momentum-preserving
//! re-representations of the same Dirac sum rely on them.

use nalgebra::DVector;
use thiserror::Error;

use crate::kernel::{Atom, BandField, ControlField, ScaleConfig};

/// Structural incompatibilities between multiscale objects.
#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("point {index} of scale {scale} has dimension {got}, expected {expected}")]
    DimMismatch {
        scale: usize,
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("scale {scale} holds {coarser} landmarks but scale {} holds {finer}; counts must not decrease", scale + 1)]
    NonNestedCounts {
        scale: usize,
        coarser: usize,
        finer: usize,
    },
    #[error("expected {expected} scales, got {got}")]
    ScaleCountMismatch { expected: usize, got: usize },
    #[error("scale {scale} holds {got} entries, expected {expected}")]
    CountMismatch {
        scale: usize,
        expected: usize,
        got: usize,
    },
    #[error("scale {scale} is empty")]
    EmptyScale { scale: usize },
}

/// Per-scale landmark counts plus the ambient dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub dim: usize,
    pub counts: Vec<usize>,
}

impl Shape {
    pub fn num_scales(&self) -> usize {
        self.counts.len()
    }

    pub fn total_landmarks(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn check_dims(scales: &[Vec<DVector<f64>>], dim: usize) -> Result<(), ShapeError> {
    for (ell, points) in scales.iter().enumerate() {
        for (i, x) in points.iter().enumerate() {
            if x.len() != dim {
                return Err(ShapeError::DimMismatch {
                    scale: ell,
                    index: i,
                    got: x.len(),
                    expected: dim,
                });
            }
        }
    }
    Ok(())
}

/// Landmark positions, one list per scale (coarse to fine).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleConfiguration {
    pub scales: Vec<Vec<DVector<f64>>>,
}

impl MultiscaleConfiguration {
    /// Validates homogeneous dimensions, non-empty scales, and
    /// non-decreasing landmark counts.
    pub fn new(scales: Vec<Vec<DVector<f64>>>, dim: usize) -> Result<Self, ShapeError> {
        check_dims(&scales, dim)?;
        for (ell, points) in scales.iter().enumerate() {
            if points.is_empty() {
                return Err(ShapeError::EmptyScale { scale: ell });
            }
            if ell > 0 && scales[ell - 1].len() > points.len() {
                return Err(ShapeError::NonNestedCounts {
                    scale: ell - 1,
                    coarser: scales[ell - 1].len(),
                    finer: points.len(),
                });
            }
        }
        Ok(Self { scales })
    }

    pub fn shape(&self) -> Shape {
        Shape {
            dim: self.scales.first().and_then(|s| s.first()).map_or(0, |x| x.len()),
            counts: self.scales.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }
}

/// Covectors paired with a configuration, one per landmark per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleMomentum {
    pub scales: Vec<Vec<DVector<f64>>>,
}

impl MultiscaleMomentum {
    pub fn zeros(shape: &Shape) -> Self {
        Self {
            scales: shape
                .counts
                .iter()
                .map(|&n| vec![DVector::zeros(shape.dim); n])
                .collect(),
        }
    }

    /// Checks shape compatibility against a configuration.
    pub fn compatible_with(&self, q: &MultiscaleConfiguration) -> Result<(), ShapeError> {
        if self.scales.len() != q.scales.len() {
            return Err(ShapeError::ScaleCountMismatch {
                expected: q.scales.len(),
                got: self.scales.len(),
            });
        }
        for (ell, (ps, qs)) in self.scales.iter().zip(&q.scales).enumerate() {
            if ps.len() != qs.len() {
                return Err(ShapeError::CountMismatch {
                    scale: ell,
                    expected: qs.len(),
                    got: ps.len(),
                });
            }
            for (i, p) in ps.iter().enumerate() {
                if p.len() != qs[i].len() {
                    return Err(ShapeError::DimMismatch {
                        scale: ell,
                        index: i,
                        got: p.len(),
                        expected: qs[i].len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds the band fields `μ_k = Σ_{m ≥ k} Σ_i δ_{q_i^m}^{p_i^m}`: band `k`
/// collects every atom living at scale `k` or finer.
///
/// Panics if `q` and `p` are not shape-compatible.
pub fn bands_from(q: &MultiscaleConfiguration, p: &MultiscaleMomentum) -> ControlField {
    p.compatible_with(q)
        .expect("configuration and momentum must be shape-compatible");
    let num_scales = q.num_scales();
    let mut bands = Vec::with_capacity(num_scales);
    for k in 0..num_scales {
        let mut atoms = Vec::new();
        for m in k..num_scales {
            for (x, w) in q.scales[m].iter().zip(&p.scales[m]) {
                atoms.push(Atom {
                    location: x.clone(),
                    weight: w.clone(),
                });
            }
        }
        bands.push(BandField::new(atoms));
    }
    ControlField { bands }
}

/// Arithmetic mean of the scale-`ell` points.
pub fn center_of_mass(q: &MultiscaleConfiguration, ell: usize) -> Result<DVector<f64>, ShapeError> {
    let points = q
        .scales
        .get(ell)
        .ok_or(ShapeError::ScaleCountMismatch {
            expected: ell + 1,
            got: q.scales.len(),
        })?;
    if points.is_empty() {
        return Err(ShapeError::EmptyScale { scale: ell });
    }
    let mut sum = DVector::zeros(points[0].len());
    for x in points {
        sum += x;
    }
    Ok(sum / points.len() as f64)
}

/// Per-scale centers of mass.
pub fn centers_of_mass(q: &MultiscaleConfiguration) -> Result<Vec<DVector<f64>>, ShapeError> {
    (0..q.num_scales()).map(|ell| center_of_mass(q, ell)).collect()
}

/// A source/target pair with the kernel ladder and data-term settings.
#[derive(Clone, Debug)]
pub struct RegistrationProblem {
    pub source: MultiscaleConfiguration,
    pub target: MultiscaleConfiguration,
    pub cfg: ScaleConfig,
    /// Data-term weight λ > 0; 1 reproduces the unweighted functional.
    pub data_weight: f64,
    /// Whether the similarity layer acts on the target.
    pub sim_enabled: bool,
    /// Per-scale centers of mass of the target, fixed at t = 0; the group
    /// action and the endpoint conditions pivot around these throughout.
    target_centers: Vec<DVector<f64>>,
}

/// Problem-level validation failures.
#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("source and target disagree at scale {scale}: {source_count} vs {target_count} landmarks")]
    SourceTargetMismatch {
        scale: usize,
        source_count: usize,
        target_count: usize,
    },
    #[error("data weight must be > 0 and finite, got {0}")]
    NonPositiveWeight(f64),
    #[error("points have dimension {points}, kernel config has dimension {config}")]
    DimDisagrees { points: usize, config: usize },
    #[error("points declare {points} scales, kernel config has {config}")]
    ScaleCountDisagrees { points: usize, config: usize },
}

impl RegistrationProblem {
    pub fn new(
        source: MultiscaleConfiguration,
        target: MultiscaleConfiguration,
        cfg: ScaleConfig,
        data_weight: f64,
        sim_enabled: bool,
    ) -> Result<Self, ProblemError> {
        if !(data_weight > 0.0) || !data_weight.is_finite() {
            return Err(ProblemError::NonPositiveWeight(data_weight));
        }
        let (ss, ts) = (source.shape(), target.shape());
        if ss.num_scales() != ts.num_scales() {
            return Err(ShapeError::ScaleCountMismatch {
                expected: ss.num_scales(),
                got: ts.num_scales(),
            }
            .into());
        }
        for (ell, (&a, &b)) in ss.counts.iter().zip(&ts.counts).enumerate() {
            if a != b {
                return Err(ProblemError::SourceTargetMismatch {
                    scale: ell,
                    source_count: a,
                    target_count: b,
                });
            }
        }
        if ss.dim != cfg.dim() {
            return Err(ProblemError::DimDisagrees {
                points: ss.dim,
                config: cfg.dim(),
            });
        }
        if ss.num_scales() != cfg.num_scales() {
            return Err(ProblemError::ScaleCountDisagrees {
                points: ss.num_scales(),
                config: cfg.num_scales(),
            });
        }
        let target_centers = centers_of_mass(&target)?;
        Ok(Self {
            source,
            target,
            cfg,
            data_weight,
            sim_enabled,
            target_centers,
        })
    }

    /// The frozen per-scale pivots `q_{T,c}^ℓ`.
    pub fn target_centers(&self) -> &[DVector<f64>] {
        &self.target_centers
    }
}
