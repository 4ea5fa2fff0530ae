//! Per-scale Gaussian kernels, band fields, and RKHS energies.
//!
//! Velocity fields live in a product of reproducing kernel Hilbert spaces
//! `V_0, …, V_{L-1}`, one per scale, each generated by a scalar Gaussian
//! kernel `K_k(x, y) = exp(-|x-y|² / (2 σ_k²)) · Id`. Kernel widths decrease
//! from coarse to fine, mirroring the embedding chain of the spaces.
//!
//! A [`BandField`] is a weighted Dirac sum `μ = Σ_j δ_{x_j}^{w_j}`; pairing it
//! with a smooth field `u` gives `Σ_j ⟨u(x_j), w_j⟩`. A [`ControlField`]
//! stores one band per scale, and the scale-`ℓ` velocity is the telescoped
//! evaluation `u_ℓ = Σ_{k ≤ ℓ} K_k μ_k`, so that consecutive velocities
//! differ exactly by one smoothed band.
//!
//! Evaluation is direct `O(#atoms)` summation with fixed order — instances
//! are desk scale and results must be bit-reproducible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Spatial dimension plus the ladder of kernel widths, coarse to fine.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleConfig {
    dim: usize,
    sigmas: Vec<f64>,
}

/// Violations of the scale-ladder invariants, detected at construction.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("spatial dimension must be >= 1")]
    ZeroDim,
    #[error("at least one scale is required")]
    NoScales,
    #[error("kernel width at scale {scale} is {value}, must be > 0 and finite")]
    NonPositiveWidth { scale: usize, value: f64 },
    #[error("kernel widths must strictly decrease: sigma[{scale}] = {value} >= sigma[{prev_scale}] = {prev}")]
    NonDecreasingWidths {
        scale: usize,
        value: f64,
        prev_scale: usize,
        prev: f64,
    },
}

impl ScaleConfig {
    /// Validates `dim >= 1`, at least one scale, positive widths, and the
    /// strictly decreasing width ladder.
    pub fn new(dim: usize, sigmas: Vec<f64>) -> Result<Self, ConfigError> {
        if dim == 0 {
            return Err(ConfigError::ZeroDim);
        }
        if sigmas.is_empty() {
            return Err(ConfigError::NoScales);
        }
        for (k, &s) in sigmas.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(ConfigError::NonPositiveWidth { scale: k, value: s });
            }
            if k > 0 && s >= sigmas[k - 1] {
                return Err(ConfigError::NonDecreasingWidths {
                    scale: k,
                    value: s,
                    prev_scale: k - 1,
                    prev: sigmas[k - 1],
                });
            }
        }
        Ok(Self { dim, sigmas })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of scales `L`. Scale indices are 0-based, 0 = coarsest.
    pub fn num_scales(&self) -> usize {
        self.sigmas.len()
    }

    /// Kernel width at scale `k`. Panics if `k` is out of range.
    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// One weighted Dirac: a location and a vector weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub location: DVector<f64>,
    pub weight: DVector<f64>,
}

/// A weighted Dirac sum `μ = Σ_j δ_{x_j}^{w_j}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BandField {
    pub atoms: Vec<Atom>,
}

impl BandField {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// One band per scale; band `k` is smoothed by kernel `K_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    pub bands: Vec<BandField>,
}

/// Scalar Gaussian `exp(-|x-y|² / (2 σ²))`.
#[inline]
pub(crate) fn gaussian(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// `|x - y|²` without a temporary.
#[inline]
pub(crate) fn sq_dist(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for c in 0..x.len() {
        let d = x[c] - y[c];
        acc += d * d;
    }
    acc
}

/// Evaluates the smoothed band `K_k μ` at `x`:
/// `Σ_j exp(-|x-x_j|²/(2σ_k²)) w_j`.
///
/// Panics if `k >= L` or if an atom's dimensions disagree with `cfg`.
pub fn kernel_eval(cfg: &ScaleConfig, k: usize, mu: &BandField, x: &DVector<f64>) -> DVector<f64> {
    assert!(k < cfg.num_scales(), "scale index {k} out of range");
    assert_eq!(x.len(), cfg.dim(), "evaluation point has wrong dimension");
    let sigma = cfg.sigma(k);
    let d = cfg.dim();
    let mut out = DVector::zeros(d);
    for atom in &mu.atoms {
        let g = gaussian(sq_dist(x, &atom.location), sigma);
        for c in 0..d {
            out[c] += g * atom.weight[c];
        }
    }
    out
}

/// Spatial Jacobian of [`kernel_eval`] at `x`, as a d×d matrix:
/// `Σ_j w_j · (-(x-x_j)ᵀ/σ_k²) · exp(-|x-x_j|²/(2σ_k²))`.
pub fn kernel_jacobian(
    cfg: &ScaleConfig,
    k: usize,
    mu: &BandField,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    assert!(k < cfg.num_scales(), "scale index {k} out of range");
    assert_eq!(x.len(), cfg.dim(), "evaluation point has wrong dimension");
    let sigma = cfg.sigma(k);
    let inv_s2 = 1.0 / (sigma * sigma);
    let d = cfg.dim();
    let mut out = DMatrix::zeros(d, d);
    for atom in &mu.atoms {
        let g = gaussian(sq_dist(x, &atom.location), sigma);
        // outer product w_j (x - x_j)ᵀ, scaled by -K/σ²
        let coeff = -g * inv_s2;
        for r in 0..d {
            let wr = coeff * atom.weight[r];
            for c in 0..d {
                out[(r, c)] += wr * (x[c] - atom.location[c]);
            }
        }
    }
    out
}

/// Scale-`ell` velocity `u_ℓ(x) = Σ_{k ≤ ℓ} (K_k μ_k)(x)`.
///
/// Panics if `ell >= L` or the field does not carry one band per scale.
pub fn velocity_at(
    cfg: &ScaleConfig,
    field: &ControlField,
    ell: usize,
    x: &DVector<f64>,
) -> DVector<f64> {
    assert!(ell < cfg.num_scales(), "scale index {ell} out of range");
    assert_eq!(
        field.bands.len(),
        cfg.num_scales(),
        "control field must carry one band per scale"
    );
    let mut out = DVector::zeros(cfg.dim());
    for k in 0..=ell {
        out += kernel_eval(cfg, k, &field.bands[k], x);
    }
    out
}

/// Spatial Jacobian of the scale-`ell` velocity at `x`.
pub fn velocity_jacobian_at(
    cfg: &ScaleConfig,
    field: &ControlField,
    ell: usize,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    assert!(ell < cfg.num_scales(), "scale index {ell} out of range");
    let mut out = DMatrix::zeros(cfg.dim(), cfg.dim());
    for k in 0..=ell {
        out += kernel_jacobian(cfg, k, &field.bands[k], x);
    }
    out
}

/// Squared RKHS norm of the control: `Σ_k ⟨μ_k, K_k μ_k⟩`
/// `= Σ_k Σ_{a,b} ⟨w_a, w_b⟩ exp(-|x_a-x_b|²/(2σ_k²))`.
///
/// Non-negative up to roundoff (each kernel is positive definite).
pub fn rkhs_energy(cfg: &ScaleConfig, field: &ControlField) -> f64 {
    assert_eq!(
        field.bands.len(),
        cfg.num_scales(),
        "control field must carry one band per scale"
    );
    let mut energy = 0.0;
    for (k, band) in field.bands.iter().enumerate() {
        let sigma = cfg.sigma(k);
        for a in &band.atoms {
            for b in &band.atoms {
                let g = gaussian(sq_dist(&a.location, &b.location), sigma);
                energy += g * a.weight.dot(&b.weight);
            }
        }
    }
    energy
}
