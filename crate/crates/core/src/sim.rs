//! The orientation-preserving similarity group acting on the target cloud.
//!
//! An element is a triple `(ρ, R, τ)` of positive scaling, rotation, and
//! translation, with product `(ρρ', RR', τ+τ')` and the centered action
//! `x ↦ ρ R (x - c) + c + τ` about a per-scale pivot `c`. The Lie algebra
//! carries the diagonal metric `⟨(α,r,σ), (α',r',σ')⟩ = αα' + Tr(rᵀr') +
//! ⟨σ,σ'⟩` with `r` skew-symmetric.
//!
//! For the dynamics, `R`, `p_R` and `r` are treated as unconstrained d×d
//! matrices: the Hamiltonian flow of the extended system coincides with the
//! group flow when started on the group, and orthogonality of `R` is a
//! monitored diagnostic, not an enforced constraint. [`polar_project`] is
//! available for callers that want to snap back after integration.
//!
//! Along the reduced flow `ρ p_ρ`, `Rᵀ p_R` and `p_τ` are conserved, which
//! yields the closed-form geodesic from the identity implemented by
//! [`sim_closed_form`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::state::MultiscaleConfiguration;

/// Tolerance on `‖RᵀR - I‖_F` accepted at construction.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Group element `(ρ, R, τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimElement {
    /// Scaling ρ; positive for genuine group elements.
    pub scaling: f64,
    /// Rotation R, stored as a plain d×d matrix.
    pub rotation: DMatrix<f64>,
    /// Translation τ.
    pub translation: DVector<f64>,
}

/// Momentum `(p_ρ, p_R, p_τ)` dual to a group element; `p_R` is an
/// unconstrained d×d matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMomentum {
    pub scaling: f64,
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

/// Algebra element `(α, r, σ)` with `r` skew-symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SimAlgebra {
    pub scaling: f64,
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scaling must be > 0 and finite, got {0}")]
    NonPositiveScaling(f64),
    #[error("rotation is not orthogonal: ||RtR - I||_F = {defect:e} exceeds {tol:e}")]
    NotOrthogonal { defect: f64, tol: f64 },
    #[error("rotation must be orientation-preserving: det = {0}")]
    NegativeDeterminant(f64),
    #[error("dimension mismatch: rotation is {rows}x{cols}, translation has length {translation}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        translation: usize,
    },
}

impl SimElement {
    /// The neutral element `(1, I, 0)`.
    pub fn identity(dim: usize) -> Self {
        Self {
            scaling: 1.0,
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    /// Validating constructor: `ρ > 0`, `R` orthogonal within
    /// [`ORTHOGONALITY_TOL`], `det R > 0`.
    pub fn new(
        scaling: f64,
        rotation: DMatrix<f64>,
        translation: DVector<f64>,
    ) -> Result<Self, SimError> {
        if !(scaling > 0.0) || !scaling.is_finite() {
            return Err(SimError::NonPositiveScaling(scaling));
        }
        if rotation.nrows() != rotation.ncols() || rotation.nrows() != translation.len() {
            return Err(SimError::DimMismatch {
                rows: rotation.nrows(),
                cols: rotation.ncols(),
                translation: translation.len(),
            });
        }
        let defect = orthogonality_defect(&rotation);
        if defect > ORTHOGONALITY_TOL {
            return Err(SimError::NotOrthogonal {
                defect,
                tol: ORTHOGONALITY_TOL,
            });
        }
        let det = rotation.clone().determinant();
        if det <= 0.0 {
            return Err(SimError::NegativeDeterminant(det));
        }
        Ok(Self {
            scaling,
            rotation,
            translation,
        })
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }
}

impl SimMomentum {
    pub fn zeros(dim: usize) -> Self {
        Self {
            scaling: 0.0,
            rotation: DMatrix::zeros(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }
}

impl SimAlgebra {
    pub fn zeros(dim: usize) -> Self {
        Self {
            scaling: 0.0,
            rotation: DMatrix::zeros(dim, dim),
            translation: DVector::zeros(dim),
        }
    }
}

/// `‖RᵀR - I‖_F`, the monitored orthogonality drift.
pub fn orthogonality_defect(rotation: &DMatrix<f64>) -> f64 {
    let d = rotation.nrows();
    (rotation.transpose() * rotation - DMatrix::<f64>::identity(d, d)).norm()
}

/// Nearest rotation in Frobenius norm, via the polar factor `U Vᵀ` of the SVD.
pub fn polar_project(rotation: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = rotation.clone().svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

/// Skew part `(M - Mᵀ)/2`.
pub fn skew_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

/// Group product `(ρρ', RR', τ+τ')`.
pub fn sim_compose(a: &SimElement, b: &SimElement) -> SimElement {
    SimElement {
        scaling: a.scaling * b.scaling,
        rotation: &a.rotation * &b.rotation,
        translation: &a.translation + &b.translation,
    }
}

/// Group inverse `(1/ρ, Rᵀ, -τ)`.
pub fn sim_inverse(a: &SimElement) -> SimElement {
    SimElement {
        scaling: 1.0 / a.scaling,
        rotation: a.rotation.transpose(),
        translation: -&a.translation,
    }
}

/// Centered action on a single point: `ρ R (x - c) + c + τ`.
pub fn sim_act_point(a: &SimElement, x: &DVector<f64>, center: &DVector<f64>) -> DVector<f64> {
    a.scaling * (&a.rotation * (x - center)) + center + &a.translation
}

/// Centered action on every landmark, pivoting scale `ℓ` about `centers[ℓ]`.
///
/// Panics if `centers` does not hold one pivot per scale.
pub fn sim_act(
    a: &SimElement,
    q: &MultiscaleConfiguration,
    centers: &[DVector<f64>],
) -> MultiscaleConfiguration {
    assert_eq!(
        centers.len(),
        q.num_scales(),
        "one center per scale is required"
    );
    MultiscaleConfiguration {
        scales: q
            .scales
            .iter()
            .zip(centers)
            .map(|(points, c)| points.iter().map(|x| sim_act_point(a, x, c)).collect())
            .collect(),
    }
}

/// Algebra metric `αα' + Tr(rᵀr') + ⟨σ,σ'⟩`.
pub fn sim_metric(s1: &SimAlgebra, s2: &SimAlgebra) -> f64 {
    s1.scaling * s2.scaling
        + (s1.rotation.transpose() * &s2.rotation).trace()
        + s1.translation.dot(&s2.translation)
}

/// Control Hamiltonian `(p_ρ|αρ) + (p_R|rR) + (p_τ|σ) - ½|s|²`.
pub fn sim_hamiltonian(a: &SimElement, pa: &SimMomentum, s: &SimAlgebra) -> f64 {
    pa.scaling * s.scaling * a.scaling
        + (pa.rotation.transpose() * (&s.rotation * &a.rotation)).trace()
        + pa.translation.dot(&s.translation)
        - 0.5 * sim_metric(s, s)
}

/// Maximizer of the control Hamiltonian:
/// `α = ρ p_ρ`, `r = (p_R Rᵀ - R p_Rᵀ)/2`, `σ = p_τ`.
///
/// The rotation part is assembled as an explicit skew part, so `r + rᵀ = 0`
/// holds to machine precision.
pub fn sim_optimal_control(a: &SimElement, pa: &SimMomentum) -> SimAlgebra {
    SimAlgebra {
        scaling: a.scaling * pa.scaling,
        rotation: skew_part(&(&pa.rotation * a.rotation.transpose())),
        translation: pa.translation.clone(),
    }
}

/// Reduced Hamiltonian `½ |s*(a, pa)|²` of the similarity block.
pub fn sim_reduced_hamiltonian(a: &SimElement, pa: &SimMomentum) -> f64 {
    let s = sim_optimal_control(a, pa);
    0.5 * sim_metric(&s, &s)
}

/// Right-hand side of the reduced Hamiltonian system. With
/// `s = (α, r, σ)` the optimal control:
/// `ρ̇ = αρ`, `Ṙ = rR`, `τ̇ = σ`, `ṗ_ρ = -αp_ρ`, `ṗ_R = -rᵀp_R`, `ṗ_τ = 0`.
///
/// The returned pair holds derivative values in element/momentum storage.
pub fn sim_rhs(a: &SimElement, pa: &SimMomentum) -> (SimElement, SimMomentum) {
    let s = sim_optimal_control(a, pa);
    let da = SimElement {
        scaling: s.scaling * a.scaling,
        rotation: &s.rotation * &a.rotation,
        translation: s.translation.clone(),
    };
    let dpa = SimMomentum {
        scaling: -s.scaling * pa.scaling,
        rotation: -(s.rotation.transpose() * &pa.rotation),
        translation: DVector::zeros(pa.dim()),
    };
    (da, dpa)
}

/// Closed-form geodesic from the identity. With `(α, r, σ)` the optimal
/// control at `(e, pa0)`:
/// `ρ(t) = e^{αt}`, `R(t) = exp(rt)`, `τ(t) = σt`,
/// `p_ρ(t) = p_ρ(0) e^{-αt}`, `p_R(t) = exp(rt) p_R(0)`, `p_τ(t) = p_τ(0)`.
pub fn sim_closed_form(pa0: &SimMomentum, t: f64) -> (SimElement, SimMomentum) {
    let dim = pa0.dim();
    let e = SimElement::identity(dim);
    let s = sim_optimal_control(&e, pa0);
    let rot = so_exponential(&s.rotation, t);
    let a = SimElement {
        scaling: (s.scaling * t).exp(),
        rotation: rot.clone(),
        translation: t * &s.translation,
    };
    let pa = SimMomentum {
        scaling: pa0.scaling * (-s.scaling * t).exp(),
        rotation: rot * &pa0.rotation,
        translation: pa0.translation.clone(),
    };
    (a, pa)
}

/// Matrix exponential `exp(r t)` of a skew-symmetric generator.
///
/// Closed forms in dimensions 2 (planar rotation) and 3 (Rodrigues);
/// scaling-and-squaring Taylor series otherwise. The result is orthogonal up
/// to roundoff. Panics if `r` is not skew-symmetric within `1e-12`.
pub fn so_exponential(r: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = r.nrows();
    assert_eq!(d, r.ncols(), "generator must be square");
    assert!(
        (r + r.transpose()).norm() <= 1e-12 * (1.0 + r.norm()),
        "generator must be skew-symmetric"
    );
    let a = r * t;
    match d {
        1 => DMatrix::identity(1, 1),
        2 => {
            let theta = a[(1, 0)];
            let (sin, cos) = theta.sin_cos();
            DMatrix::from_row_slice(2, 2, &[cos, -sin, sin, cos])
        }
        3 => {
            // Rodrigues: exp(A) = I + sinθ/θ A + (1-cosθ)/θ² A²
            let theta = (a[(2, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 0)].powi(2)).sqrt();
            let eye = DMatrix::identity(3, 3);
            if theta < 1e-12 {
                return eye + &a + (&a * &a) * 0.5;
            }
            let c1 = theta.sin() / theta;
            let c2 = (1.0 - theta.cos()) / (theta * theta);
            eye + &a * c1 + (&a * &a) * c2
        }
        _ => exp_scaling_squaring(&a),
    }
}

/// Taylor series with scaling and squaring, for generators beyond d = 3.
fn exp_scaling_squaring(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings as i32);
    let mut result = DMatrix::<f64>::identity(d, d);
    let mut term = DMatrix::<f64>::identity(d, d);
    for j in 1..=20 {
        term = (&term * &b) / j as f64;
        result += &term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn rot2(theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    fn random_momentum(rng: &mut ChaCha8Rng, dim: usize) -> SimMomentum {
        SimMomentum {
            scaling: rng.random_range(-1.0..1.0),
            rotation: DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0)),
            translation: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    /// One classical RK4 step of the reduced similarity system.
    fn rk4_step(a: &SimElement, pa: &SimMomentum, h: f64) -> (SimElement, SimMomentum) {
        let add = |a: &SimElement, pa: &SimMomentum,
                   d: &(SimElement, SimMomentum),
                   w: f64|
         -> (SimElement, SimMomentum) {
            (
                SimElement {
                    scaling: a.scaling + w * d.0.scaling,
                    rotation: &a.rotation + w * &d.0.rotation,
                    translation: &a.translation + w * &d.0.translation,
                },
                SimMomentum {
                    scaling: pa.scaling + w * d.1.scaling,
                    rotation: &pa.rotation + w * &d.1.rotation,
                    translation: &pa.translation + w * &d.1.translation,
                },
            )
        };
        let k1 = sim_rhs(a, pa);
        let (a2, pa2) = add(a, pa, &k1, h / 2.0);
        let k2 = sim_rhs(&a2, &pa2);
        let (a3, pa3) = add(a, pa, &k2, h / 2.0);
        let k3 = sim_rhs(&a3, &pa3);
        let (a4, pa4) = add(a, pa, &k3, h);
        let k4 = sim_rhs(&a4, &pa4);
        let sum = (
            SimElement {
                scaling: k1.0.scaling + 2.0 * k2.0.scaling + 2.0 * k3.0.scaling + k4.0.scaling,
                rotation: &k1.0.rotation
                    + 2.0 * &k2.0.rotation
                    + 2.0 * &k3.0.rotation
                    + &k4.0.rotation,
                translation: &k1.0.translation
                    + 2.0 * &k2.0.translation
                    + 2.0 * &k3.0.translation
                    + &k4.0.translation,
            },
            SimMomentum {
                scaling: k1.1.scaling + 2.0 * k2.1.scaling + 2.0 * k3.1.scaling + k4.1.scaling,
                rotation: &k1.1.rotation
                    + 2.0 * &k2.1.rotation
                    + 2.0 * &k3.1.rotation
                    + &k4.1.rotation,
                translation: &k1.1.translation
                    + 2.0 * &k2.1.translation
                    + 2.0 * &k3.1.translation
                    + &k4.1.translation,
            },
        );
        add(a, pa, &sum, h / 6.0)
    }

    fn integrate(pa0: &SimMomentum, steps: usize) -> Vec<(SimElement, SimMomentum)> {
        let mut a = SimElement::identity(pa0.dim());
        let mut pa = pa0.clone();
        let h = 1.0 / steps as f64;
        let mut out = vec![(a.clone(), pa.clone())];
        for _ in 0..steps {
            let (na, npa) = rk4_step(&a, &pa, h);
            a = na;
            pa = npa;
            out.push((a.clone(), pa.clone()));
        }
        out
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let a = SimElement::new(2.0, rot2(0.3), vec2(0.5, -1.0)).unwrap();
        let e = SimElement::identity(2);
        assert_eq!(sim_compose(&a, &e), a);
        assert_eq!(sim_compose(&e, &a), a);
        let ainv = sim_inverse(&a);
        let round = sim_compose(&a, &ainv);
        assert_relative_eq!(round.scaling, 1.0, epsilon = 1e-15);
        assert!(orthogonality_defect(&round.rotation) < 1e-14);
        assert!((round.rotation - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
        assert_eq!(round.translation, vec2(0.0, 0.0));
    }

    #[test]
    fn compose_hand_example() {
        let a = SimElement::new(2.0, rot2(std::f64::consts::FRAC_PI_2), vec2(1.0, 0.0)).unwrap();
        let b = SimElement::new(3.0, DMatrix::identity(2, 2), vec2(0.0, 1.0)).unwrap();
        let c = sim_compose(&a, &b);
        assert_relative_eq!(c.scaling, 6.0, epsilon = 1e-15);
        assert!((c.rotation.clone() - rot2(std::f64::consts::FRAC_PI_2)).norm() < 1e-15);
        assert_eq!(c.translation, vec2(1.0, 1.0));
    }

    #[test]
    fn act_identity_and_fixed_point() {
        let q = MultiscaleConfiguration::new(vec![vec![vec2(0.7, -0.2), vec2(1.5, 2.5)]], 2).unwrap();
        let centers = vec![vec2(0.0, 0.0)];
        let e = SimElement::identity(2);
        assert_eq!(sim_act(&e, &q, &centers), q);

        // pure centered scaling fixes the pivot
        let a = SimElement::new(2.0, DMatrix::identity(2, 2), vec2(0.0, 0.0)).unwrap();
        let c = vec2(0.3, 0.4);
        assert_eq!(sim_act_point(&a, &c, &c), c);
    }

    #[test]
    fn act_hand_example() {
        let a = SimElement::new(1.0, rot2(std::f64::consts::FRAC_PI_2), vec2(1.0, 0.0)).unwrap();
        let out = sim_act_point(&a, &vec2(1.0, 0.0), &vec2(0.0, 0.0));
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(out[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn metric_cases() {
        let zero = SimAlgebra::zeros(2);
        assert_eq!(sim_metric(&zero, &zero), 0.0);
        let s = SimAlgebra {
            scaling: 1.0,
            rotation: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            translation: vec2(0.0, 0.0),
        };
        assert_eq!(sim_metric(&s, &s), 3.0); // 1 + Tr(rᵀr) = 1 + 2
    }

    #[test]
    fn hamiltonian_trivial_and_legendre() {
        let a = SimElement::new(1.5, rot2(0.4), vec2(0.2, 0.3)).unwrap();
        let zero_s = SimAlgebra::zeros(2);
        let pa0 = SimMomentum::zeros(2);
        assert_eq!(sim_hamiltonian(&a, &pa0, &zero_s), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pa = random_momentum(&mut rng, 2);
        // pa = 0 gives -half the metric
        let s = SimAlgebra {
            scaling: 0.7,
            rotation: DMatrix::from_row_slice(2, 2, &[0.0, -0.4, 0.4, 0.0]),
            translation: vec2(0.1, -0.9),
        };
        assert_relative_eq!(
            sim_hamiltonian(&a, &pa0, &s),
            -0.5 * sim_metric(&s, &s),
            epsilon = 1e-15
        );
        // Legendre identity at the optimal control
        let s_star = sim_optimal_control(&a, &pa);
        assert_relative_eq!(
            sim_hamiltonian(&a, &pa, &s_star),
            0.5 * sim_metric(&s_star, &s_star),
            epsilon = 1e-12
        );
    }

    #[test]
    fn optimal_control_formula_and_stationarity() {
        let zero = sim_optimal_control(&SimElement::identity(3), &SimMomentum::zeros(3));
        assert_eq!(zero, SimAlgebra::zeros(3));

        // hand value: R = I, p_R the 2D rotation generator
        let a = SimElement::identity(2);
        let pa = SimMomentum {
            scaling: 0.0,
            rotation: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            translation: vec2(0.0, 0.0),
        };
        let s = sim_optimal_control(&a, &pa);
        assert_eq!(
            s.rotation,
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
        );

        // FD stationarity over algebra coordinates (α, strict lower triangle of r, σ)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in [2usize, 3] {
            let a = random_element(&mut rng, dim);
            let pa = random_momentum(&mut rng, dim);
            let s_star = sim_optimal_control(&a, &pa);
            assert!((s_star.rotation.clone() + s_star.rotation.transpose()).norm() == 0.0);
            let h = 1e-6;
            let eval = |s: &SimAlgebra| sim_hamiltonian(&a, &pa, s);
            // scaling direction
            let mut sp = s_star.clone();
            let mut sm = s_star.clone();
            sp.scaling += h;
            sm.scaling -= h;
            assert!((eval(&sp) - eval(&sm)).abs() / (2.0 * h) < 1e-6);
            // translation directions
            for i in 0..dim {
                let mut sp = s_star.clone();
                let mut sm = s_star.clone();
                sp.translation[i] += h;
                sm.translation[i] -= h;
                assert!((eval(&sp) - eval(&sm)).abs() / (2.0 * h) < 1e-6);
            }
            // skew directions
            for i in 0..dim {
                for j in 0..i {
                    let mut basis = DMatrix::zeros(dim, dim);
                    basis[(i, j)] = 1.0;
                    basis[(j, i)] = -1.0;
                    let mut sp = s_star.clone();
                    let mut sm = s_star.clone();
                    sp.rotation += &basis * h;
                    sm.rotation -= &basis * h;
                    assert!((eval(&sp) - eval(&sm)).abs() / (2.0 * h) < 1e-6);
                }
            }
        }
    }

    fn random_element(rng: &mut ChaCha8Rng, dim: usize) -> SimElement {
        // random rotation via the exponential of a random skew generator
        let mut skew = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..i {
                let v = rng.random_range(-1.0..1.0);
                skew[(i, j)] = v;
                skew[(j, i)] = -v;
            }
        }
        SimElement {
            scaling: rng.random_range(0.5..2.0),
            rotation: so_exponential(&skew, 1.0),
            translation: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn rhs_zero_momentum_is_static_and_p_tau_constant() {
        let a = SimElement::new(1.2, rot2(-0.2), vec2(0.4, 0.1)).unwrap();
        let (da, dpa) = sim_rhs(&a, &SimMomentum::zeros(2));
        assert_eq!(da.scaling, 0.0);
        assert_eq!(da.rotation, DMatrix::zeros(2, 2));
        assert_eq!(da.translation, vec2(0.0, 0.0));
        assert_eq!(dpa, SimMomentum::zeros(2));

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let pa = random_momentum(&mut rng, 3);
            let a = random_element(&mut rng, 3);
            let (_, dpa) = sim_rhs(&a, &pa);
            assert_eq!(dpa.translation, DVector::zeros(3), "p_tau never moves");
        }
    }

    #[test]
    fn rhs_matches_symplectic_gradient_of_reduced_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let h = 1e-6;
        for dim in [2usize, 3] {
            for _ in 0..5 {
                let a = random_element(&mut rng, dim);
                let pa = random_momentum(&mut rng, dim);
                let (da, dpa) = sim_rhs(&a, &pa);
                let f = |a: &SimElement, pa: &SimMomentum| sim_reduced_hamiltonian(a, pa);

                let check = |got: f64, fd: f64, what: &str| {
                    assert!(
                        (got - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "{what}: analytic {got} vs FD {fd}"
                    );
                };
                // ρ̇ = ∂h/∂p_ρ ; ṗ_ρ = -∂h/∂ρ
                let mut pp = pa.clone();
                let mut pm = pa.clone();
                pp.scaling += h;
                pm.scaling -= h;
                check(da.scaling, (f(&a, &pp) - f(&a, &pm)) / (2.0 * h), "rho dot");
                let mut ap = a.clone();
                let mut am = a.clone();
                ap.scaling += h;
                am.scaling -= h;
                check(dpa.scaling, -(f(&ap, &pa) - f(&am, &pa)) / (2.0 * h), "p_rho dot");
                // matrix blocks, coordinate by coordinate
                for i in 0..dim {
                    for j in 0..dim {
                        let mut pp = pa.clone();
                        let mut pm = pa.clone();
                        pp.rotation[(i, j)] += h;
                        pm.rotation[(i, j)] -= h;
                        check(
                            da.rotation[(i, j)],
                            (f(&a, &pp) - f(&a, &pm)) / (2.0 * h),
                            "R dot",
                        );
                        let mut ap = a.clone();
                        let mut am = a.clone();
                        ap.rotation[(i, j)] += h;
                        am.rotation[(i, j)] -= h;
                        check(
                            dpa.rotation[(i, j)],
                            -(f(&ap, &pa) - f(&am, &pa)) / (2.0 * h),
                            "p_R dot",
                        );
                    }
                    let mut pp = pa.clone();
                    let mut pm = pa.clone();
                    pp.translation[i] += h;
                    pm.translation[i] -= h;
                    check(
                        da.translation[i],
                        (f(&a, &pp) - f(&a, &pm)) / (2.0 * h),
                        "tau dot",
                    );
                }
            }
        }
    }

    #[test]
    fn conserved_quantities_along_rk4_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for dim in [2usize, 3] {
            let pa0 = random_momentum(&mut rng, dim);
            let states = integrate(&pa0, 100);
            let (a0, p0) = &states[0];
            let rp0 = a0.scaling * p0.scaling;
            let rtp0 = a0.rotation.transpose() * &p0.rotation;
            let h0 = sim_reduced_hamiltonian(a0, p0);
            for (a, pa) in &states {
                assert!((a.scaling * pa.scaling - rp0).abs() <= 1e-8, "rho p_rho drifts");
                assert!(
                    (a.rotation.transpose() * &pa.rotation - &rtp0).norm() <= 1e-8,
                    "Rt p_R drifts"
                );
                assert_eq!(pa.translation, p0.translation, "p_tau must be bit-constant");
                assert!((sim_reduced_hamiltonian(a, pa) - h0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn closed_form_trivial_cases() {
        let zero = SimMomentum::zeros(3);
        let (a, pa) = sim_closed_form(&zero, 0.7);
        assert_eq!(a, SimElement::identity(3));
        assert_eq!(pa, zero);

        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let pa0 = random_momentum(&mut rng, 2);
        let (a, pa) = sim_closed_form(&pa0, 0.0);
        assert_eq!(a, SimElement::identity(2));
        assert_eq!(pa, pa0);
    }

    #[test]
    fn closed_form_matches_rk4_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for dim in [2usize, 3] {
            for _ in 0..5 {
                let pa0 = random_momentum(&mut rng, dim);
                let states = integrate(&pa0, 200);
                let (a_num, pa_num) = states.last().unwrap();
                let (a_cl, pa_cl) = sim_closed_form(&pa0, 1.0);
                assert!((a_cl.scaling - a_num.scaling).abs() < 1e-6);
                assert!((&a_cl.rotation - &a_num.rotation).norm() < 1e-6);
                assert!((&a_cl.translation - &a_num.translation).norm() < 1e-6);
                assert!((pa_cl.scaling - pa_num.scaling).abs() < 1e-6);
                assert!((&pa_cl.rotation - &pa_num.rotation).norm() < 1e-6);
                assert!((&pa_cl.translation - &pa_num.translation).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn so_exponential_closed_forms() {
        // r = 0
        assert_eq!(
            so_exponential(&DMatrix::zeros(3, 3), 1.0),
            DMatrix::identity(3, 3)
        );
        // 2D: rotation by θ
        let theta = 0.83;
        let gen2 = DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        assert!((so_exponential(&gen2, 1.0) - rot2(theta)).norm() < 1e-15);

        // 3D: Rodrigues against a truncated series oracle
        let axis = [0.3, -0.6, 0.9];
        let gen3 = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, -axis[2], axis[1],
                axis[2], 0.0, -axis[0],
                -axis[1], axis[0], 0.0,
            ],
        );
        let got = so_exponential(&gen3, 1.0);
        let mut oracle = DMatrix::<f64>::identity(3, 3);
        let mut term = DMatrix::<f64>::identity(3, 3);
        for j in 1..=20 {
            term = (&term * &gen3) / j as f64;
            oracle += &term;
        }
        assert!((got.clone() - oracle).norm() < 1e-12);
        assert!(orthogonality_defect(&got) < 1e-12);

        // d = 4 goes through scaling-and-squaring and stays orthogonal
        let mut gen4 = DMatrix::zeros(4, 4);
        for (i, j, v) in [(1, 0, 0.9), (2, 0, -0.4), (3, 1, 1.7), (3, 2, 0.2)] {
            gen4[(i, j)] = v;
            gen4[(j, i)] = -v;
        }
        let got4 = so_exponential(&gen4, 1.0);
        assert!(orthogonality_defect(&got4) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "skew-symmetric")]
    fn so_exponential_rejects_non_skew() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 1.0, 0.0]);
        so_exponential(&m, 1.0);
    }

    #[test]
    fn action_compatible_with_composition() {
        // a·(b·q) about recomputed centers equals (a∘b)·q about the originals
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let q = MultiscaleConfiguration::new(
                vec![
                    (0..3)
                        .map(|_| vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                        .collect(),
                    (0..5)
                        .map(|_| vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                        .collect(),
                ],
                2,
            )
            .unwrap();
            let a = random_element(&mut rng, 2);
            let b = random_element(&mut rng, 2);
            let centers = crate::state::centers_of_mass(&q).unwrap();
            let via_product = sim_act(&sim_compose(&a, &b), &q, &centers);
            let bq = sim_act(&b, &q, &centers);
            let centers_bq = crate::state::centers_of_mass(&bq).unwrap();
            let via_steps = sim_act(&a, &bq, &centers_bq);
            for (s1, s2) in via_product.scales.iter().zip(&via_steps.scales) {
                for (x1, x2) in s1.iter().zip(s2) {
                    assert!((x1 - x2).norm() < 1e-12, "action incompatible");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn group_axioms_hold(params in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let el = |p: &[f64]| SimElement {
                scaling: 0.5 + (p[0] + 1.0),
                rotation: rot2(p[1] * std::f64::consts::PI),
                translation: vec2(p[2], p[3]),
            };
            let (a, b, c) = (el(&params[0..4]), el(&params[4..8]), el(&params[8..12]));
            // associativity, up to re-association of the float sums/products
            let lhs = sim_compose(&sim_compose(&a, &b), &c);
            let rhs = sim_compose(&a, &sim_compose(&b, &c));
            prop_assert!((lhs.scaling - rhs.scaling).abs() <= 1e-12 * lhs.scaling.abs());
            prop_assert!((lhs.rotation - rhs.rotation).norm() <= 1e-12);
            prop_assert!((lhs.translation - rhs.translation).amax() <= 1e-12);
            // inverse law
            let round = sim_compose(&sim_inverse(&a), &a);
            prop_assert!((round.scaling - 1.0).abs() <= 1e-12);
            prop_assert!((round.rotation - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-12);
            prop_assert_eq!(round.translation, vec2(0.0, 0.0));
        }
    }
}
