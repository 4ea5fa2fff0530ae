//! Joint Hamiltonian of the coupled system and its phase-space dynamics.
//!
//! The Hamiltonian splits into a multiscale landmark part and a similarity
//! part. With the optimal control substituted, the reduced value is
//!
//! `h(q, p, a, p_a) = ½ ⟨μ(q,p), K μ(q,p)⟩ + ½ |s*(a, p_a)|²`
//!
//! where `μ` are the band fields of [`crate::state::bands_from`] and `s*` the
//! similarity control. The two blocks never interact: the landmark equations
//! ignore `(a, p_a)` and vice versa.
//!
//! [`phase_rhs`] evaluates the symplectic gradient. The landmark momentum
//! equation uses the spatial Jacobian of the frozen velocity field,
//! `ṗ_i = -(du_ℓ(q_i))ᵀ p_i`; by the symmetry of the kernels this equals
//! `-∂h/∂q_i` exactly, which the finite-difference tests certify.
//!
//! [`phase_rhs_vjp`] is the hand-coded reverse-mode derivative of
//! [`phase_rhs`]: given a cotangent `w` it returns `(∂ rhs/∂x)ᵀ w`. It is
//! the only derivative the discrete adjoint needs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernel::{
    gaussian, kernel_eval, rkhs_energy, velocity_at, velocity_jacobian_at, ControlField,
    ScaleConfig,
};
use crate::sim::{sim_metric, sim_optimal_control, sim_rhs, skew_part, SimElement, SimMomentum};
use crate::state::{bands_from, MultiscaleConfiguration, MultiscaleMomentum, ShapeError};

/// Joint state `(q, p, a, p_a)` advanced by the Hamiltonian flow.
///
/// The struct doubles as its own tangent and cotangent storage: derivative
/// and gradient values reuse the same slots, so entries (including
/// `sim.scaling`) may then hold any real value.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: MultiscaleConfiguration,
    pub p: MultiscaleMomentum,
    pub sim: SimElement,
    pub sim_momentum: SimMomentum,
}

impl PhasePoint {
    /// Validates shape compatibility of the landmark blocks and dimensional
    /// agreement of the similarity blocks.
    pub fn new(
        q: MultiscaleConfiguration,
        p: MultiscaleMomentum,
        sim: SimElement,
        sim_momentum: SimMomentum,
    ) -> Result<Self, ShapeError> {
        p.compatible_with(&q)?;
        let d = q.shape().dim;
        if sim.dim() != d || sim_momentum.dim() != d {
            return Err(ShapeError::DimMismatch {
                scale: 0,
                index: 0,
                got: sim.dim(),
                expected: d,
            });
        }
        Ok(Self {
            q,
            p,
            sim,
            sim_momentum,
        })
    }

    /// Rest state over a configuration: zero momenta, identity similarity.
    pub fn at_rest(q: MultiscaleConfiguration) -> Self {
        let shape = q.shape();
        Self {
            p: MultiscaleMomentum::zeros(&shape),
            sim: SimElement::identity(shape.dim),
            sim_momentum: SimMomentum::zeros(shape.dim),
            q,
        }
    }

    /// Same shape, every entry zero (tangent/cotangent storage).
    pub fn zeros_like(&self) -> Self {
        let shape = self.q.shape();
        Self {
            q: MultiscaleConfiguration {
                scales: shape
                    .counts
                    .iter()
                    .map(|&n| vec![DVector::zeros(shape.dim); n])
                    .collect(),
            },
            p: MultiscaleMomentum::zeros(&shape),
            sim: SimElement {
                scaling: 0.0,
                rotation: DMatrix::zeros(shape.dim, shape.dim),
                translation: DVector::zeros(shape.dim),
            },
            sim_momentum: SimMomentum::zeros(shape.dim),
        }
    }

    /// `self += alpha * other`, entrywise over all four blocks.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (qs, os) in self.q.scales.iter_mut().zip(&other.q.scales) {
            for (x, ox) in qs.iter_mut().zip(os) {
                x.axpy(alpha, ox, 1.0);
            }
        }
        for (ps, os) in self.p.scales.iter_mut().zip(&other.p.scales) {
            for (x, ox) in ps.iter_mut().zip(os) {
                x.axpy(alpha, ox, 1.0);
            }
        }
        self.sim.scaling += alpha * other.sim.scaling;
        self.sim.rotation += alpha * &other.sim.rotation;
        self.sim
            .translation
            .axpy(alpha, &other.sim.translation, 1.0);
        self.sim_momentum.scaling += alpha * other.sim_momentum.scaling;
        self.sim_momentum.rotation += alpha * &other.sim_momentum.rotation;
        self.sim_momentum
            .translation
            .axpy(alpha, &other.sim_momentum.translation, 1.0);
    }

    /// `self + alpha * other`.
    pub fn added(&self, alpha: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(alpha, other);
        out
    }

    /// Full contraction over all coordinates.
    pub fn dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (qs, os) in self.q.scales.iter().zip(&other.q.scales) {
            for (x, ox) in qs.iter().zip(os) {
                acc += x.dot(ox);
            }
        }
        for (ps, os) in self.p.scales.iter().zip(&other.p.scales) {
            for (x, ox) in ps.iter().zip(os) {
                acc += x.dot(ox);
            }
        }
        acc += self.sim.scaling * other.sim.scaling;
        acc += (self.sim.rotation.transpose() * &other.sim.rotation).trace();
        acc += self.sim.translation.dot(&other.sim.translation);
        acc += self.sim_momentum.scaling * other.sim_momentum.scaling;
        acc += (self.sim_momentum.rotation.transpose() * &other.sim_momentum.rotation).trace();
        acc += self
            .sim_momentum
            .translation
            .dot(&other.sim_momentum.translation);
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn num_coords(&self) -> usize {
        let shape = self.q.shape();
        let d = shape.dim;
        2 * d * shape.total_landmarks() + 2 * (1 + d * d + d)
    }

    /// Flat coordinate view, ordered: all `q` scales, all `p` scales, then
    /// `ρ`, `R` (row-major), `τ`, `p_ρ`, `p_R` (row-major), `p_τ`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_coords());
        for scale in &self.q.scales {
            for x in scale {
                out.extend(x.iter());
            }
        }
        for scale in &self.p.scales {
            for x in scale {
                out.extend(x.iter());
            }
        }
        let d = self.sim.dim();
        out.push(self.sim.scaling);
        for i in 0..d {
            for j in 0..d {
                out.push(self.sim.rotation[(i, j)]);
            }
        }
        out.extend(self.sim.translation.iter());
        out.push(self.sim_momentum.scaling);
        for i in 0..d {
            for j in 0..d {
                out.push(self.sim_momentum.rotation[(i, j)]);
            }
        }
        out.extend(self.sim_momentum.translation.iter());
        out
    }

    /// Inverse of [`PhasePoint::flatten`]; panics on length mismatch.
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_coords(), "flat coordinate mismatch");
        let mut it = flat.iter().copied();
        for scale in &mut self.q.scales {
            for x in scale {
                for v in x.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
        for scale in &mut self.p.scales {
            for x in scale {
                for v in x.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
        let d = self.sim.dim();
        self.sim.scaling = it.next().unwrap();
        for i in 0..d {
            for j in 0..d {
                self.sim.rotation[(i, j)] = it.next().unwrap();
            }
        }
        for v in self.sim.translation.iter_mut() {
            *v = it.next().unwrap();
        }
        self.sim_momentum.scaling = it.next().unwrap();
        for i in 0..d {
            for j in 0..d {
                self.sim_momentum.rotation[(i, j)] = it.next().unwrap();
            }
        }
        for v in self.sim_momentum.translation.iter_mut() {
            *v = it.next().unwrap();
        }
    }
}

/// Landmark control Hamiltonian
/// `Σ_ℓ Σ_i ⟨p_i^ℓ, u_ℓ(q_i^ℓ)⟩ - ½ |A u|²` for an arbitrary control.
pub fn h_landmarks(
    cfg: &ScaleConfig,
    q: &MultiscaleConfiguration,
    p: &MultiscaleMomentum,
    field: &ControlField,
) -> f64 {
    p.compatible_with(q)
        .expect("configuration and momentum must be shape-compatible");
    let mut pairing = 0.0;
    for (ell, (qs, ps)) in q.scales.iter().zip(&p.scales).enumerate() {
        for (x, pv) in qs.iter().zip(ps) {
            pairing += pv.dot(&velocity_at(cfg, field, ell, x));
        }
    }
    pairing - 0.5 * rkhs_energy(cfg, field)
}

/// Reduced Hamiltonian `½ ⟨μ, K μ⟩ + ½ |s*|²` at a phase point.
pub fn reduced_hamiltonian(cfg: &ScaleConfig, x: &PhasePoint) -> f64 {
    let field = bands_from(&x.q, &x.p);
    let s = sim_optimal_control(&x.sim, &x.sim_momentum);
    0.5 * rkhs_energy(cfg, &field) + 0.5 * sim_metric(&s, &s)
}

/// Symplectic gradient of the reduced Hamiltonian, stored slotwise:
/// the `q` slot holds `q̇ = ∂h/∂p`, the `p` slot `ṗ = -∂h/∂q`, the `sim`
/// slot `ȧ = ∂h/∂p_a`, the `sim_momentum` slot `ṗ_a = -∂h/∂a`.
pub fn phase_rhs(cfg: &ScaleConfig, x: &PhasePoint) -> PhasePoint {
    let field = bands_from(&x.q, &x.p);
    let mut out = x.zeros_like();
    for (ell, (qs, ps)) in x.q.scales.iter().zip(&x.p.scales).enumerate() {
        for (i, (xi, pi)) in qs.iter().zip(ps).enumerate() {
            out.q.scales[ell][i] = velocity_at(cfg, &field, ell, xi);
            // frozen-field Jacobian: ṗ = -(du_ℓ(q_i))ᵀ p_i
            let jac = velocity_jacobian_at(cfg, &field, ell, xi);
            out.p.scales[ell][i] = -(jac.transpose() * pi);
        }
    }
    let (da, dpa) = sim_rhs(&x.sim, &x.sim_momentum);
    out.sim = da;
    out.sim_momentum = dpa;
    out
}

/// Cross-scale kernel sums for one ordered landmark pair. With
/// `Γ(x,y) = Σ_{k ≤ min(ℓ,m)} K_k(x,y)`:
/// `gamma = Γ`, `s1 = Σ K_k/σ_k²`, `s2 = Σ K_k/σ_k⁴`, so that
/// `∇_x Γ = -s1 (x-y)` and `∇²_x Γ = s2 (x-y)(x-y)ᵀ - s1 I`.
fn pair_sums(cfg: &ScaleConfig, min_scale: usize, sq_dist: f64) -> (f64, f64, f64) {
    let (mut gamma, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for k in 0..=min_scale {
        let sigma2 = cfg.sigma(k) * cfg.sigma(k);
        let g = gaussian(sq_dist, cfg.sigma(k));
        gamma += g;
        s1 += g / sigma2;
        s2 += g / (sigma2 * sigma2);
    }
    (gamma, s1, s2)
}

/// Reverse-mode derivative of [`phase_rhs`]: returns `(∂ rhs/∂x)ᵀ w`.
///
/// Slot convention of the result: the `q` slot holds the gradient with
/// respect to `q`, the `p` slot with respect to `p`, and likewise for the
/// similarity blocks.
pub fn phase_rhs_vjp(cfg: &ScaleConfig, x: &PhasePoint, w: &PhasePoint) -> PhasePoint {
    let mut out = x.zeros_like();

    // landmark block: flatten (scale, index) for pair iteration
    let indices: Vec<(usize, usize)> = x
        .q
        .scales
        .iter()
        .enumerate()
        .flat_map(|(ell, qs)| (0..qs.len()).map(move |i| (ell, i)))
        .collect();
    for &(ell_a, i_a) in &indices {
        let xa = &x.q.scales[ell_a][i_a];
        let pa = &x.p.scales[ell_a][i_a];
        let wq_a = &w.q.scales[ell_a][i_a];
        let wp_a = &w.p.scales[ell_a][i_a];
        let mut qbar = DVector::zeros(cfg.dim());
        let mut pbar = DVector::zeros(cfg.dim());
        for &(ell_b, i_b) in &indices {
            let xb = &x.q.scales[ell_b][i_b];
            let pb = &x.p.scales[ell_b][i_b];
            let wq_b = &w.q.scales[ell_b][i_b];
            let wp_b = &w.p.scales[ell_b][i_b];
            let diff = xa - xb;
            let (gamma, s1, s2) = pair_sums(cfg, ell_a.min(ell_b), diff.norm_squared());
            // G = ∇_x Γ(x_a, x_b) = -s1 diff ; H v = s2 diff ⟨diff,v⟩ - s1 v
            let pp = pa.dot(pb);
            // q̄_a += (⟨wq_a, p_b⟩ + ⟨wq_b, p_a⟩) G + ⟨p_a,p_b⟩ H (wp_b - wp_a)
            let coeff = wq_a.dot(pb) + wq_b.dot(pa);
            qbar.axpy(-coeff * s1, &diff, 1.0);
            let dwp = wp_b - wp_a;
            qbar.axpy(pp * s2 * diff.dot(&dwp), &diff, 1.0);
            qbar.axpy(-pp * s1, &dwp, 1.0);
            // p̄_a += Γ wq_b + ⟨wp_b - wp_a, G⟩ p_b
            pbar.axpy(gamma, wq_b, 1.0);
            pbar.axpy(-s1 * diff.dot(&dwp), pb, 1.0);
        }
        out.q.scales[ell_a][i_a] = qbar;
        out.p.scales[ell_a][i_a] = pbar;
    }

    // similarity block
    let d = cfg.dim();
    let (rho, rot) = (x.sim.scaling, &x.sim.rotation);
    let (p_rho, p_rot) = (x.sim_momentum.scaling, &x.sim_momentum.rotation);
    let (w_rho, w_rot, w_tau) = (w.sim.scaling, &w.sim.rotation, &w.sim.translation);
    let (w_prho, w_prot, w_ptau) = (
        w.sim_momentum.scaling,
        &w.sim_momentum.rotation,
        &w.sim_momentum.translation,
    );
    let r = skew_part(&(p_rot * rot.transpose()));
    // Λ accumulates the sensitivity through r = skew(p_R Rᵀ)
    let lambda = w_rot * rot.transpose() - p_rot * w_prot.transpose();
    let lambda_skew = skew_part(&lambda);
    out.sim.scaling = 2.0 * w_rho * rho * p_rho - w_prho * p_rho * p_rho;
    out.sim.rotation = r.transpose() * w_rot - &lambda_skew * p_rot;
    out.sim.translation = DVector::zeros(d);
    out.sim_momentum.scaling = w_rho * rho * rho - 2.0 * w_prho * rho * p_rho;
    out.sim_momentum.rotation = -(&r * w_prot) + &lambda_skew * rot;
    out.sim_momentum.translation = w_tau.clone();
    let _ = w_ptau; // ṗ_τ ≡ 0: nothing propagates through it
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum ContractError {
    #[error("momentum at scale {scale}, landmark {index} must be zero for the finest-scale reduction")]
    CoarseMomentumNonZero { scale: usize, index: usize },
}

/// Cross-checks the two optimal-control formulas when only the finest scale
/// carries momentum: the single-endpoint reduction `u_L = Σ_l K_l (ξ_q* p)`
/// against the banded `u_L = Σ_k K_k μ_k`. Returns the maximum velocity
/// discrepancy over all landmark positions; it vanishes identically because
/// both collapse to the same double sum.
pub fn finest_scale_reduction_check(
    cfg: &ScaleConfig,
    q: &MultiscaleConfiguration,
    p: &MultiscaleMomentum,
) -> Result<f64, ContractError> {
    let finest = q.num_scales() - 1;
    for (ell, ps) in p.scales.iter().enumerate().take(finest) {
        for (i, pv) in ps.iter().enumerate() {
            if pv.iter().any(|&v| v != 0.0) {
                return Err(ContractError::CoarseMomentumNonZero {
                    scale: ell,
                    index: i,
                });
            }
        }
    }
    // single-shape-space reading: one Dirac sum over the finest landmarks,
    // smoothed by every kernel
    let finest_band = crate::kernel::BandField::new(
        q.scales[finest]
            .iter()
            .zip(&p.scales[finest])
            .map(|(xq, pv)| crate::kernel::Atom {
                location: xq.clone(),
                weight: pv.clone(),
            })
            .collect(),
    );
    let field = bands_from(q, p);
    let mut worst = 0.0f64;
    for qs in &q.scales {
        for xq in qs {
            let mut u_single = DVector::zeros(cfg.dim());
            for l in 0..cfg.num_scales() {
                u_single += kernel_eval(cfg, l, &finest_band, xq);
            }
            let u_banded = velocity_at(cfg, &field, finest, xq);
            worst = worst.max((u_single - u_banded).norm());
        }
    }
    Ok(worst)
}
