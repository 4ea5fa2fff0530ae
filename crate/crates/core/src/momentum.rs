//! Momentum-map diagnostics: pointwise transport, lift uniqueness, and
//! passive probe advection.
//!
//! The lifted flow carries the initial momentum map coadjointly; for point
//! momenta this is the pointwise identity `J_i(t)ᵀ p_i(t) = p_i(0)` with
//! `J_i` the flow Jacobian from
//! [`variational_transport`](crate::integrator::variational_transport)
//! (`d/dt (Jᵀp) = Jᵀduᵀp - Jᵀduᵀp = 0`). The residual of that identity
//! measures pure integrator error.
//!
//! Probes are passive: they carry no momentum, sample the scale-`ℓ` velocity
//! field reconstructed from the stored trajectory, and never feed back into
//! the dynamics. Advection reuses the exact stage states of the stored
//! discrete flow, so a probe seeded on a landmark reproduces that landmark's
//! discrete path.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hamiltonian::{phase_rhs, PhasePoint};
use crate::integrator::{rk4_stages, shoot, variational_transport, IntegrationError, Scheme, Trajectory};
use crate::kernel::{velocity_at, ScaleConfig};
use crate::state::{bands_from, MultiscaleConfiguration, MultiscaleMomentum};

/// Passive sample points slaved to the velocity field of one scale.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    /// Scale whose velocity `u_ℓ` drives the probes.
    pub scale: usize,
    pub points: Vec<DVector<f64>>,
}

impl ProbeSet {
    /// Regular lattice over an axis-aligned box, `resolution` points per
    /// axis (a single point collapses to the box minimum).
    pub fn grid(min: &DVector<f64>, max: &DVector<f64>, resolution: usize, scale: usize) -> Self {
        assert_eq!(min.len(), max.len(), "bounds must share a dimension");
        assert!(resolution >= 1, "resolution must be >= 1");
        let d = min.len();
        let mut points = vec![DVector::zeros(d)];
        for axis in 0..d {
            let mut extended = Vec::with_capacity(points.len() * resolution);
            for base in &points {
                for i in 0..resolution {
                    let t = if resolution == 1 {
                        0.0
                    } else {
                        i as f64 / (resolution - 1) as f64
                    };
                    let mut x = base.clone();
                    x[axis] = min[axis] + t * (max[axis] - min[axis]);
                    extended.push(x);
                }
            }
            points = extended;
        }
        Self { scale, points }
    }
}

/// Integrates every probe by `ẋ = u_ℓ(x)` along the stored trajectory,
/// using the trajectory's own scheme, steps, and stage states. Returns probe
/// positions per step. Probes are independent; `threads > 1` advects them in
/// parallel chunks with per-probe determinism.
pub fn advect_probes(
    cfg: &ScaleConfig,
    traj: &Trajectory,
    probes: &ProbeSet,
    threads: usize,
) -> Result<Vec<Vec<DVector<f64>>>, IntegrationError> {
    assert!(
        probes.scale < traj.initial().q.num_scales(),
        "probe scale out of range"
    );
    let h = traj.step_size();
    let scale = probes.scale;
    let mut positions = probes.points.clone();
    let mut out = vec![positions.clone()];
    let rhs = |x: &PhasePoint| phase_rhs(cfg, x);

    for step in 0..traj.steps() {
        let x = &traj.states[step];
        // velocity fields at the stage states of this step, shared by probes
        let stage_fields: Vec<crate::kernel::ControlField> = match traj.scheme {
            Scheme::Euler => vec![bands_from(&x.q, &x.p)],
            Scheme::Rk4 => {
                let stages = rk4_stages(&rhs, x, h);
                stages.y.iter().map(|y| bands_from(&y.q, &y.p)).collect()
            }
        };
        let advance = |z: &DVector<f64>| -> DVector<f64> {
            match traj.scheme {
                Scheme::Euler => z + h * velocity_at(cfg, &stage_fields[0], scale, z),
                Scheme::Rk4 => {
                    let k1 = velocity_at(cfg, &stage_fields[0], scale, z);
                    let k2 = velocity_at(cfg, &stage_fields[1], scale, &(z + (h / 2.0) * &k1));
                    let k3 = velocity_at(cfg, &stage_fields[2], scale, &(z + (h / 2.0) * &k2));
                    let k4 = velocity_at(cfg, &stage_fields[3], scale, &(z + h * &k3));
                    z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                }
            }
        };
        if threads <= 1 || positions.len() < 2 {
            positions = positions.iter().map(advance).collect();
        } else {
            let workers = threads.min(positions.len());
            let chunk = positions.len().div_ceil(workers);
            let advance_ref = &advance;
            positions = std::thread::scope(|scope| {
                let handles: Vec<_> = positions
                    .chunks(chunk)
                    .map(|slice| scope.spawn(move || slice.iter().map(advance_ref).collect::<Vec<_>>()))
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|handle| handle.join().expect("probe worker panicked"))
                    .collect()
            });
        }
        if positions.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
            return Err(IntegrationError::Diverged { step: step + 1 });
        }
        out.push(positions.clone());
    }
    Ok(out)
}

/// Residual of the transported-momentum identity at `t = 1`:
/// `max_i |J_i(1)ᵀ p_i(1) - p_i(0)|` over the landmarks of `scale`,
/// with `J_i(0) = I`.
pub fn momentum_transport_residual(
    cfg: &ScaleConfig,
    traj: &Trajectory,
    scale: usize,
) -> Result<f64, IntegrationError> {
    let n = traj.initial().q.scales[scale].len();
    let d = cfg.dim();
    let seeds = vec![DMatrix::<f64>::identity(d, d); n];
    let transported = variational_transport(cfg, traj, scale, &seeds)?;
    let j_end = &transported[traj.steps()];
    let p_end = &traj.terminal().p.scales[scale];
    let p_start = &traj.initial().p.scales[scale];
    let mut worst = 0.0f64;
    for i in 0..n {
        let carried = j_end[i].transpose() * &p_end[i];
        worst = worst.max((carried - &p_start[i]).norm());
    }
    Ok(worst)
}

/// Re-representation of one landmark as collocated copies with momentum
/// fractions. Fractions must sum to 1, so the initial Dirac sum — and hence
/// the whole lifted flow — is preserved.
#[derive(Clone, Debug)]
pub struct SplitSpec {
    pub scale: usize,
    pub landmark: usize,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("fractions sum to {0}, expected 1")]
    FractionsDoNotSumToOne(f64),
    #[error("split needs at least one fraction")]
    Empty,
    #[error("scale {scale} / landmark {landmark} out of range")]
    OutOfRange { scale: usize, landmark: usize },
    #[error("split breaks the nested-count invariant: {0}")]
    Shape(crate::state::ShapeError),
}

/// Applies a momentum-preserving split, duplicating the chosen landmark at
/// its exact position with fractional momenta.
pub fn apply_split(
    q: &MultiscaleConfiguration,
    p: &MultiscaleMomentum,
    split: &SplitSpec,
) -> Result<(MultiscaleConfiguration, MultiscaleMomentum), SplitError> {
    if split.fractions.is_empty() {
        return Err(SplitError::Empty);
    }
    let total: f64 = split.fractions.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(SplitError::FractionsDoNotSumToOne(total));
    }
    let points = q.scales.get(split.scale).ok_or(SplitError::OutOfRange {
        scale: split.scale,
        landmark: split.landmark,
    })?;
    if split.landmark >= points.len() {
        return Err(SplitError::OutOfRange {
            scale: split.scale,
            landmark: split.landmark,
        });
    }
    let mut q2 = q.scales.clone();
    let mut p2 = p.scales.clone();
    let x = q2[split.scale][split.landmark].clone();
    let pv = p2[split.scale][split.landmark].clone();
    q2[split.scale][split.landmark] = x.clone();
    p2[split.scale][split.landmark] = split.fractions[0] * &pv;
    for &f in &split.fractions[1..] {
        q2[split.scale].push(x.clone());
        p2[split.scale].push(f * &pv);
    }
    let dim = x.len();
    let q2 = MultiscaleConfiguration::new(q2, dim).map_err(SplitError::Shape)?;
    Ok((q2, MultiscaleMomentum { scales: p2 }))
}

/// Shoots the original and the split representation, advects the same probe
/// set through both flows, and returns the maximum probe-position
/// discrepancy at `t = 1`. Equal initial momentum maps give equal band
/// fields at every step, so the discrepancy is pure roundoff.
pub fn lift_uniqueness_check(
    cfg: &ScaleConfig,
    q: &MultiscaleConfiguration,
    p: &MultiscaleMomentum,
    split: &SplitSpec,
    probes: &ProbeSet,
    steps: usize,
) -> Result<f64, LiftCheckError> {
    let (q2, p2) = apply_split(q, p, split)?;
    let x1 = PhasePoint::at_rest(q.clone()).with_momentum(p.clone());
    let x2 = PhasePoint::at_rest(q2).with_momentum(p2);
    let t1 = shoot(cfg, &x1, steps, Scheme::Rk4)?;
    let t2 = shoot(cfg, &x2, steps, Scheme::Rk4)?;
    let a1 = advect_probes(cfg, &t1, probes, 1)?;
    let a2 = advect_probes(cfg, &t2, probes, 1)?;
    let mut worst = 0.0f64;
    for (z1, z2) in a1[steps].iter().zip(&a2[steps]) {
        worst = worst.max((z1 - z2).norm());
    }
    Ok(worst)
}

#[derive(Debug, Error, PartialEq)]
pub enum LiftCheckError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

impl PhasePoint {
    /// Replaces the landmark momentum block (similarity block untouched).
    pub fn with_momentum(mut self, p: MultiscaleMomentum) -> Self {
        p.compatible_with(&self.q)
            .expect("momentum must match the configuration");
        self.p = p;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn shot_instance(seed: u64, steps: usize) -> (ScaleConfig, Trajectory) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[2, 4], 0.6);
        let x0 = PhasePoint::at_rest(q).with_momentum(p);
        let traj = shoot(&cfg, &x0, steps, Scheme::Rk4).unwrap();
        (cfg, traj)
    }

    #[test]
    fn probes_stay_put_without_momentum() {
        let cfg = ScaleConfig::new(2, vec![1.0]).unwrap();
        let q = MultiscaleConfiguration::new(vec![vec![vec2(0.0, 0.0), vec2(1.0, 1.0)]], 2).unwrap();
        let traj = shoot(&cfg, &PhasePoint::at_rest(q), 10, Scheme::Rk4).unwrap();
        let probes = ProbeSet {
            scale: 0,
            points: vec![vec2(0.5, 0.5), vec2(-2.0, 3.0)],
        };
        let paths = advect_probes(&cfg, &traj, &probes, 1).unwrap();
        for step in &paths {
            assert_eq!(step[0], vec2(0.5, 0.5));
            assert_eq!(step[1], vec2(-2.0, 3.0));
        }
    }

    #[test]
    fn probe_on_landmark_follows_the_landmark() {
        let (cfg, traj) = shot_instance(21, 50);
        let scale = 1;
        let probes = ProbeSet {
            scale,
            points: traj.initial().q.scales[scale].clone(),
        };
        let paths = advect_probes(&cfg, &traj, &probes, 1).unwrap();
        for (step, state) in traj.states.iter().enumerate() {
            for (i, z) in paths[step].iter().enumerate() {
                let landmark = &state.q.scales[scale][i];
                assert!(
                    (z - landmark).norm() < 1e-10,
                    "step {step} probe {i} drifted from its landmark"
                );
            }
        }
    }

    #[test]
    fn far_field_probe_barely_moves() {
        let (cfg, traj) = shot_instance(22, 50);
        // distance ≫ σ_max: Gaussian tail bounds the displacement
        let probes = ProbeSet {
            scale: 1,
            points: vec![vec2(60.0, 60.0)],
        };
        let paths = advect_probes(&cfg, &traj, &probes, 1).unwrap();
        let drift = (paths[traj.steps()][0].clone() - &probes.points[0]).norm();
        assert!(drift <= 1e-8, "far-field drift {drift:.3e}");
    }

    #[test]
    fn probe_advection_is_thread_count_invariant() {
        let (cfg, traj) = shot_instance(23, 20);
        let probes = ProbeSet::grid(&vec2(-1.0, -1.0), &vec2(1.0, 1.0), 3, 1);
        let serial = advect_probes(&cfg, &traj, &probes, 1).unwrap();
        let parallel = advect_probes(&cfg, &traj, &probes, 4).unwrap();
        assert_eq!(serial, parallel, "thread count must not change results");
    }

    #[test]
    fn probes_do_not_disturb_the_trajectory() {
        let (cfg, traj) = shot_instance(24, 20);
        let before: Vec<_> = traj.states.iter().map(|s| s.flatten()).collect();
        let probes = ProbeSet::grid(&vec2(-1.0, -1.0), &vec2(1.0, 1.0), 4, 0);
        let _ = advect_probes(&cfg, &traj, &probes, 2).unwrap();
        let after: Vec<_> = traj.states.iter().map(|s| s.flatten()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn transport_residual_trivial_cases() {
        let cfg = ScaleConfig::new(2, vec![1.0]).unwrap();
        let q = MultiscaleConfiguration::new(vec![vec![vec2(0.4, 0.0), vec2(-0.4, 0.0)]], 2).unwrap();
        let traj = shoot(&cfg, &PhasePoint::at_rest(q), 10, Scheme::Rk4).unwrap();
        assert_eq!(momentum_transport_residual(&cfg, &traj, 0).unwrap(), 0.0);

        // single landmark: J = I and p constant along the closed-form line
        let q = MultiscaleConfiguration::new(vec![vec![vec2(0.0, 0.0)]], 2).unwrap();
        let p = MultiscaleMomentum {
            scales: vec![vec![vec2(0.8, -0.6)]],
        };
        let traj = shoot(
            &cfg,
            &PhasePoint::at_rest(q).with_momentum(p),
            50,
            Scheme::Rk4,
        )
        .unwrap();
        assert!(momentum_transport_residual(&cfg, &traj, 0).unwrap() < 1e-14);
    }

    #[test]
    fn transport_residual_small_and_fourth_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[4, 4], 0.6);
        let x0 = PhasePoint::at_rest(q).with_momentum(p);
        let res_100 = momentum_transport_residual(
            &cfg,
            &shoot(&cfg, &x0, 100, Scheme::Rk4).unwrap(),
            1,
        )
        .unwrap();
        assert!(res_100 <= 1e-6, "residual {res_100:.3e} at N=100");
        let res_200 = momentum_transport_residual(
            &cfg,
            &shoot(&cfg, &x0, 200, Scheme::Rk4).unwrap(),
            1,
        )
        .unwrap();
        let ratio = res_100 / res_200;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "expected fourth-order decay, got ratio {ratio:.2}"
        );
    }

    #[test]
    fn split_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (_, q, p) = instances::random_instance(&mut rng, 2, &[2], 0.5);
        let bad = SplitSpec {
            scale: 0,
            landmark: 0,
            fractions: vec![0.5, 0.4],
        };
        assert!(matches!(
            apply_split(&q, &p, &bad),
            Err(SplitError::FractionsDoNotSumToOne(_))
        ));
        let oob = SplitSpec {
            scale: 0,
            landmark: 9,
            fractions: vec![1.0],
        };
        assert!(matches!(apply_split(&q, &p, &oob), Err(SplitError::OutOfRange { .. })));
    }

    #[test]
    fn trivial_split_is_exactly_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[3], 0.6);
        let split = SplitSpec {
            scale: 0,
            landmark: 1,
            fractions: vec![1.0],
        };
        let probes = ProbeSet::grid(&vec2(-1.0, -1.0), &vec2(1.0, 1.0), 3, 0);
        let disc = lift_uniqueness_check(&cfg, &q, &p, &split, &probes, 50).unwrap();
        assert_eq!(disc, 0.0, "fraction {{1}} must reproduce the run bit for bit");
    }

    #[test]
    fn momentum_preserving_splits_share_the_lift() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[2, 3], 0.6);
        let probes = ProbeSet::grid(&vec2(-1.2, -1.2), &vec2(1.2, 1.2), 4, 1);
        for fractions in [vec![0.5, 0.5], vec![0.5, 0.3, 0.2]] {
            let split = SplitSpec {
                scale: 1,
                landmark: 0,
                fractions,
            };
            let disc = lift_uniqueness_check(&cfg, &q, &p, &split, &probes, 100).unwrap();
            assert!(disc <= 1e-8, "split discrepancy {disc:.3e}");
        }
    }
}
