//! Seeded invariant suites behind the `check` command.
//!
//! Every structural identity the engine relies on is packaged as a
//! pass/fail check with a pinned tolerance: conservation laws along the
//! flow, closed forms against numerical integration, analytic derivatives
//! against central finite differences, reduction identities between the
//! one-endpoint and banded control formulas, momentum transport, and lift
//! uniqueness under momentum-preserving re-representations.
//!
//! Checks draw their instances from a seeded RNG, so residuals are
//! reproducible. [`Defect`] lets a test harness corrupt one equation on
//! purpose and verify that the affected check actually fails.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hamiltonian::{
    finest_scale_reduction_check, phase_rhs, reduced_hamiltonian, PhasePoint,
};
use crate::instances;
use crate::integrator::{shoot, Scheme};
use crate::kernel::{kernel_eval, velocity_at, ScaleConfig};
use crate::momentum::{
    advect_probes, lift_uniqueness_check, momentum_transport_residual, ProbeSet, SplitSpec,
};
use crate::shooting::{
    endpoint_cost, endpoint_costate, gradient, objective, optimize, InitialMomenta,
    OptimizeOptions, ShootParams,
};
use crate::sim::{sim_optimal_control, sim_rhs, SimElement, SimMomentum};
use crate::state::{bands_from, MultiscaleMomentum, RegistrationProblem};

/// Pass criterion for one measured quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// `measured <= bound`
    AtMost(f64),
    /// `low <= measured <= high`
    InRange(f64, f64),
}

impl Criterion {
    pub fn accepts(&self, measured: f64) -> bool {
        match *self {
            Criterion::AtMost(bound) => measured <= bound,
            Criterion::InRange(low, high) => (low..=high).contains(&measured),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Criterion::AtMost(bound) => write!(f, "<= {bound:.1e}"),
            Criterion::InRange(low, high) => write!(f, "in [{low}, {high}]"),
        }
    }
}

/// One executed check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub criterion: Criterion,
    pub passed: bool,
}

fn outcome(suite: &'static str, name: &'static str, measured: f64, criterion: Criterion) -> CheckOutcome {
    CheckOutcome {
        suite,
        name,
        measured,
        criterion,
        passed: criterion.accepts(measured),
    }
}

/// Deliberately corrupted equations, for mutation sanity of the suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Defect {
    /// Flips the sign of `ṗ_R` in the similarity dynamics.
    SimRotationMomentumSignFlip,
}

impl std::str::FromStr for Defect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim-pr-sign-flip" => Ok(Defect::SimRotationMomentumSignFlip),
            other => Err(format!("unknown defect '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Substring filter on suite names.
    pub filter: Option<&'static str>,
    pub inject: Option<Defect>,
}

/// Runs the selected suites; outcomes preserve suite order.
pub fn run_checks(seed: u64, filter: Option<&str>, inject: Option<Defect>) -> Vec<CheckOutcome> {
    let suites: &[(&'static str, fn(u64, Option<Defect>) -> Vec<CheckOutcome>)] = &[
        ("kernels", kernels_suite),
        ("sim", sim_suite),
        ("hamiltonian", hamiltonian_suite),
        ("integrator", integrator_suite),
        ("momentum", momentum_suite),
        ("shooting", shooting_suite),
    ];
    let mut outcomes = Vec::new();
    for (name, suite) in suites {
        if let Some(pattern) = filter {
            if !name.contains(pattern) {
                continue;
            }
        }
        outcomes.extend(suite(seed, inject));
    }
    outcomes
}

/// Fixed-width table with one line per check and a trailing verdict.
pub fn render_outcomes(outcomes: &[CheckOutcome]) -> String {
    let mut out = format!(
        "{:<12} {:<44} {:>13} {:>16} {}\n",
        "suite", "check", "measured", "criterion", "status"
    );
    for o in outcomes {
        out.push_str(&format!(
            "{:<12} {:<44} {:>13.3e} {:>16} {}\n",
            o.suite,
            o.name,
            o.measured,
            o.criterion.to_string(),
            if o.passed { "pass" } else { "FAIL" }
        ));
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        out.push_str(&format!("all {} checks passed\n", outcomes.len()));
    } else {
        out.push_str(&format!("{failed} of {} checks FAILED\n", outcomes.len()));
    }
    out
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

fn kernels_suite(seed: u64, _inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65726e);
    let cfg = ScaleConfig::new(2, vec![1.3, 0.45]).unwrap();

    // analytic Jacobian vs central differences on 100 random fields
    let mut worst_jacobian = 0.0f64;
    for trial in 0..100 {
        let k = trial % 2;
        let atoms = (0..1 + trial % 4)
            .map(|_| crate::kernel::Atom {
                location: DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
                weight: DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let mu = crate::kernel::BandField::new(atoms);
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let analytic = crate::kernel::kernel_jacobian(&cfg, k, &mu, &x);
        let h = 1e-5 * cfg.sigma(k);
        let mut fd = DMatrix::zeros(2, 2);
        for col in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            fd.set_column(
                col,
                &((kernel_eval(&cfg, k, &mu, &xp) - kernel_eval(&cfg, k, &mu, &xm)) / (2.0 * h)),
            );
        }
        worst_jacobian = worst_jacobian.max((analytic - &fd).norm() / fd.norm().max(1.0));
    }

    // positivity and telescoping on random controls
    let mut min_energy = f64::INFINITY;
    let mut worst_telescope = 0.0f64;
    for _ in 0..50 {
        let q = instances::random_configuration(&mut rng, 2, &[2, 4], 1.5);
        let p = instances::random_momentum(&mut rng, &q.shape(), 1.0);
        let field = bands_from(&q, &p);
        min_energy = min_energy.min(crate::kernel::rkhs_energy(&cfg, &field));
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let lhs = velocity_at(&cfg, &field, 1, &x) - velocity_at(&cfg, &field, 0, &x);
        let rhs = kernel_eval(&cfg, 1, &field.bands[1], &x);
        worst_telescope = worst_telescope.max((lhs - rhs).amax());
    }

    vec![
        outcome("kernels", "jacobian matches central differences", worst_jacobian, Criterion::AtMost(1e-6)),
        outcome("kernels", "rkhs energy is non-negative", -min_energy, Criterion::AtMost(1e-12)),
        outcome("kernels", "velocities telescope across scales", worst_telescope, Criterion::AtMost(1e-13)),
    ]
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

fn sim_rhs_maybe_defective(
    a: &SimElement,
    pa: &SimMomentum,
    inject: Option<Defect>,
) -> (SimElement, SimMomentum) {
    let (da, mut dpa) = sim_rhs(a, pa);
    if inject == Some(Defect::SimRotationMomentumSignFlip) {
        dpa.rotation = -dpa.rotation;
    }
    (da, dpa)
}

fn sim_rk4_states(
    pa0: &SimMomentum,
    steps: usize,
    inject: Option<Defect>,
) -> Vec<(SimElement, SimMomentum)> {
    let dim = pa0.dim();
    let mut a = SimElement::identity(dim);
    let mut pa = pa0.clone();
    let h = 1.0 / steps as f64;
    let add = |a: &SimElement, pa: &SimMomentum, d: &(SimElement, SimMomentum), w: f64| {
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
    let mut states = vec![(a.clone(), pa.clone())];
    for _ in 0..steps {
        let k1 = sim_rhs_maybe_defective(&a, &pa, inject);
        let (a2, pa2) = add(&a, &pa, &k1, h / 2.0);
        let k2 = sim_rhs_maybe_defective(&a2, &pa2, inject);
        let (a3, pa3) = add(&a, &pa, &k2, h / 2.0);
        let k3 = sim_rhs_maybe_defective(&a3, &pa3, inject);
        let (a4, pa4) = add(&a, &pa, &k3, h);
        let k4 = sim_rhs_maybe_defective(&a4, &pa4, inject);
        let (mut na, mut npa) = add(&a, &pa, &k1, h / 6.0);
        (na, npa) = add(&na, &npa, &k2, h / 3.0);
        (na, npa) = add(&na, &npa, &k3, h / 3.0);
        (na, npa) = add(&na, &npa, &k4, h / 6.0);
        a = na;
        pa = npa;
        states.push((a.clone(), pa.clone()));
    }
    states
}

fn sim_suite(seed: u64, inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73696d);
    let mut scaling_drift = 0.0f64;
    let mut rotation_drift = 0.0f64;
    let mut translation_drift = 0.0f64;
    let mut energy_drift = 0.0f64;
    let mut closed_form_gap = 0.0f64;

    for dim in [2usize, 3] {
        for _ in 0..10 {
            let pa0 = instances::random_sim_momentum(&mut rng, dim, 1.0);
            // conserved quantities along RK4 N=100 (defect injectable)
            let states = sim_rk4_states(&pa0, 100, inject);
            let (a0, p0) = &states[0];
            let rp0 = a0.scaling * p0.scaling;
            let rtp0 = a0.rotation.transpose() * &p0.rotation;
            let h0 = {
                let s = sim_optimal_control(a0, p0);
                0.5 * crate::sim::sim_metric(&s, &s)
            };
            for (a, pa) in &states {
                scaling_drift = scaling_drift.max((a.scaling * pa.scaling - rp0).abs());
                rotation_drift =
                    rotation_drift.max((a.rotation.transpose() * &pa.rotation - &rtp0).norm());
                translation_drift =
                    translation_drift.max((&pa.translation - &p0.translation).amax());
                let s = sim_optimal_control(a, pa);
                energy_drift =
                    energy_drift.max((0.5 * crate::sim::sim_metric(&s, &s) - h0).abs());
            }
            // closed form vs a clean RK4 N=200 integration (never defective:
            // the oracle side must stay independent of the injected fault)
            let clean = sim_rk4_states(&pa0, 200, None);
            let (a_num, pa_num) = clean.last().unwrap();
            let (a_cl, pa_cl) = crate::sim::sim_closed_form(&pa0, 1.0);
            closed_form_gap = closed_form_gap
                .max((a_cl.scaling - a_num.scaling).abs())
                .max((&a_cl.rotation - &a_num.rotation).amax())
                .max((&a_cl.translation - &a_num.translation).amax())
                .max((pa_cl.scaling - pa_num.scaling).abs())
                .max((&pa_cl.rotation - &pa_num.rotation).amax())
                .max((&pa_cl.translation - &pa_num.translation).amax());
        }
    }

    // optimal-control stationarity via FD over algebra coordinates
    let mut stationarity = 0.0f64;
    for dim in [2usize, 3] {
        for _ in 0..5 {
            let a = SimElement {
                scaling: rng.random_range(0.5..2.0),
                rotation: instances::random_rotation(&mut rng, dim, 1.0),
                translation: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
            };
            let pa = instances::random_sim_momentum(&mut rng, dim, 1.0);
            let s_star = sim_optimal_control(&a, &pa);
            let h = 1e-6;
            let eval = |s: &crate::sim::SimAlgebra| crate::sim::sim_hamiltonian(&a, &pa, s);
            let mut sp = s_star.clone();
            let mut sm = s_star.clone();
            sp.scaling += h;
            sm.scaling -= h;
            stationarity = stationarity.max(((eval(&sp) - eval(&sm)) / (2.0 * h)).abs());
            for i in 0..dim {
                let mut sp = s_star.clone();
                let mut sm = s_star.clone();
                sp.translation[i] += h;
                sm.translation[i] -= h;
                stationarity = stationarity.max(((eval(&sp) - eval(&sm)) / (2.0 * h)).abs());
                for j in 0..i {
                    let mut basis = DMatrix::zeros(dim, dim);
                    basis[(i, j)] = 1.0;
                    basis[(j, i)] = -1.0;
                    let mut sp = s_star.clone();
                    let mut sm = s_star.clone();
                    sp.rotation += &basis * h;
                    sm.rotation -= &basis * h;
                    stationarity = stationarity.max(((eval(&sp) - eval(&sm)) / (2.0 * h)).abs());
                }
            }
        }
    }

    vec![
        outcome("sim", "rho * p_rho is conserved", scaling_drift, Criterion::AtMost(1e-8)),
        outcome("sim", "Rt p_R is conserved", rotation_drift, Criterion::AtMost(1e-8)),
        outcome("sim", "p_tau is exactly constant", translation_drift, Criterion::AtMost(0.0)),
        outcome("sim", "reduced hamiltonian is constant", energy_drift, Criterion::AtMost(1e-8)),
        outcome("sim", "closed form matches rk4 n=200", closed_form_gap, Criterion::AtMost(1e-6)),
        outcome("sim", "optimal control is stationary", stationarity, Criterion::AtMost(1e-6)),
    ]
}

// ---------------------------------------------------------------------------
// hamiltonian
// ---------------------------------------------------------------------------

fn hamiltonian_suite(seed: u64, _inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x68616d);

    // symplectic-gradient consistency on >= 20 random instances
    let mut worst_symplectic = 0.0f64;
    for trial in 0..20 {
        let dim = if trial % 2 == 0 { 2 } else { 3 };
        let counts: Vec<usize> = match trial % 3 {
            0 => vec![2, 5],
            1 => vec![1, 2, 4],
            _ => vec![3],
        };
        let x = instances::random_phase_point(&mut rng, dim, &counts, 0.8);
        let cfg = ScaleConfig::new(dim, instances::sigma_ladder(counts.len(), 1.4)).unwrap();
        let analytic = phase_rhs(&cfg, &x);
        let flat = x.flatten();
        let shape = x.q.shape();
        let nq = shape.dim * shape.total_landmarks();
        let sim_dim = 1 + shape.dim * shape.dim + shape.dim;
        let h = 1e-6;
        let mut grad = vec![0.0; flat.len()];
        for c in 0..flat.len() {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[c] += h;
            fm[c] -= h;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.assign_from_flat(&fp);
            xm.assign_from_flat(&fm);
            grad[c] =
                (reduced_hamiltonian(&cfg, &xp) - reduced_hamiltonian(&cfg, &xm)) / (2.0 * h);
        }
        let fa = analytic.flatten();
        for c in 0..nq {
            let fd_q = grad[nq + c];
            let fd_p = -grad[c];
            worst_symplectic =
                worst_symplectic.max((fa[c] - fd_q).abs() / (1.0 + fd_q.abs()));
            worst_symplectic =
                worst_symplectic.max((fa[nq + c] - fd_p).abs() / (1.0 + fd_p.abs()));
        }
        let base = 2 * nq;
        for c in 0..sim_dim {
            let fd_a = grad[base + sim_dim + c];
            let fd_pa = -grad[base + c];
            worst_symplectic =
                worst_symplectic.max((fa[base + c] - fd_a).abs() / (1.0 + fd_a.abs()));
            worst_symplectic = worst_symplectic
                .max((fa[base + sim_dim + c] - fd_pa).abs() / (1.0 + fd_pa.abs()));
        }
    }

    // reduction consistency: zero coarse momenta collapse both u_L formulas
    let mut worst_reduction = 0.0f64;
    let mut worst_band_telescope = 0.0f64;
    for _ in 0..10 {
        let (cfg, q, mut p) = instances::random_instance(&mut rng, 2, &[1, 2, 4], 0.8);
        for ell in 0..2 {
            for pv in &mut p.scales[ell] {
                pv.fill(0.0);
            }
        }
        worst_reduction =
            worst_reduction.max(finest_scale_reduction_check(&cfg, &q, &p).unwrap());
        // v_l = K_l mu_l equals u_l - u_{l-1} at random points
        let field = bands_from(&q, &p);
        for _ in 0..5 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            for ell in 1..3 {
                let diff = velocity_at(&cfg, &field, ell, &x) - velocity_at(&cfg, &field, ell - 1, &x);
                let band = kernel_eval(&cfg, ell, &field.bands[ell], &x);
                worst_band_telescope = worst_band_telescope.max((diff - band).amax());
            }
        }
    }

    vec![
        outcome("hamiltonian", "phase rhs is the symplectic fd gradient", worst_symplectic, Criterion::AtMost(1e-5)),
        outcome("hamiltonian", "one-endpoint and banded controls agree", worst_reduction, Criterion::AtMost(1e-12)),
        outcome("hamiltonian", "band velocities telescope", worst_band_telescope, Criterion::AtMost(1e-13)),
    ]
}

// ---------------------------------------------------------------------------
// integrator
// ---------------------------------------------------------------------------

fn integrator_suite(seed: u64, _inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x696e74);

    let mut drift_50 = 0.0f64;
    let mut ratio_low = f64::INFINITY;
    let mut ratio_high = 0.0f64;
    let mut euler_ratio = f64::INFINITY;
    for _ in 0..5 {
        let x0 = instances::random_phase_point(&mut rng, 2, &[2, 4], 0.6);
        let cfg = ScaleConfig::new(2, instances::sigma_ladder(2, 1.4)).unwrap();
        let drift = |traj: &crate::integrator::Trajectory| {
            let h0 = reduced_hamiltonian(&cfg, traj.initial());
            traj.states
                .iter()
                .map(|x| (reduced_hamiltonian(&cfg, x) - h0).abs())
                .fold(0.0, f64::max)
                / h0.abs().max(1e-12)
        };
        let d50 = drift(&shoot(&cfg, &x0, 50, Scheme::Rk4).unwrap());
        let d100 = drift(&shoot(&cfg, &x0, 100, Scheme::Rk4).unwrap());
        let d_euler = drift(&shoot(&cfg, &x0, 100, Scheme::Euler).unwrap());
        drift_50 = drift_50.max(d50);
        let ratio = d50 / d100;
        ratio_low = ratio_low.min(ratio);
        ratio_high = ratio_high.max(ratio);
        euler_ratio = euler_ratio.min(d_euler / d100);
    }

    // single-landmark geodesic is a straight line to machine precision
    let cfg1 = ScaleConfig::new(2, vec![0.9]).unwrap();
    let q = crate::state::MultiscaleConfiguration::new(
        vec![vec![DVector::from_vec(vec![0.2, -0.4])]],
        2,
    )
    .unwrap();
    let p = MultiscaleMomentum {
        scales: vec![vec![DVector::from_vec(vec![0.6, 0.3])]],
    };
    let x0 = PhasePoint::at_rest(q).with_momentum(p);
    let traj = shoot(&cfg1, &x0, 50, Scheme::Rk4).unwrap();
    let line_gap = (traj.terminal().q.scales[0][0].clone()
        - DVector::from_vec(vec![0.8, -0.1]))
    .amax()
    .max((traj.terminal().p.scales[0][0].clone() - DVector::from_vec(vec![0.6, 0.3])).amax());

    // determinism: identical inputs, bit-identical trajectories
    let x0d = instances::random_phase_point(&mut rng, 2, &[3], 0.6);
    let cfgd = ScaleConfig::new(2, vec![1.0]).unwrap();
    let t1 = shoot(&cfgd, &x0d, 60, Scheme::Rk4).unwrap();
    let t2 = shoot(&cfgd, &x0d, 60, Scheme::Rk4).unwrap();
    let determinism = t1
        .states
        .iter()
        .zip(&t2.states)
        .map(|(a, b)| if a == b { 0.0 } else { 1.0 })
        .fold(0.0, f64::max);

    // time symmetry: backward integration returns to the start
    let fwd = shoot(&cfgd, &x0d, 100, Scheme::Rk4).unwrap();
    let mut back_state = fwd.terminal().clone();
    let h = 1.0 / 100.0;
    for _ in 0..100 {
        let neg_rhs = |x: &PhasePoint| {
            let d = phase_rhs(&cfgd, x);
            let mut neg = d.zeros_like();
            neg.axpy(-1.0, &d);
            neg
        };
        back_state = crate::integrator::rk4_step(&neg_rhs, &back_state, h);
    }
    let symmetry = back_state
        .flatten()
        .iter()
        .zip(x0d.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // adjoint sweep against FD of the flow map on a small instance
    let x0a = instances::random_phase_point(&mut rng, 2, &[2], 0.7);
    let cfga = ScaleConfig::new(2, vec![1.1]).unwrap();
    let steps = 12;
    let traj_a = shoot(&cfga, &x0a, steps, Scheme::Rk4).unwrap();
    let costate = instances::random_phase_point(&mut rng, 2, &[2], 1.0);
    let pulled = crate::integrator::adjoint_sweep(&cfga, &traj_a, &costate, Scheme::Rk4).unwrap();
    let flat = x0a.flatten();
    let hfd = 1e-6;
    let mut adjoint_gap = 0.0f64;
    for c in 0..flat.len() {
        let eval = |delta: f64| {
            let mut f = flat.clone();
            f[c] += delta;
            let mut x = x0a.clone();
            x.assign_from_flat(&f);
            costate.dot(shoot(&cfga, &x, steps, Scheme::Rk4).unwrap().terminal())
        };
        let fd = (eval(hfd) - eval(-hfd)) / (2.0 * hfd);
        adjoint_gap = adjoint_gap.max((pulled.flatten()[c] - fd).abs() / (1.0 + fd.abs()));
    }

    vec![
        outcome("integrator", "relative energy drift at n=50", drift_50, Criterion::AtMost(1e-6)),
        outcome("integrator", "drift ratio n=50 vs n=100 (low end)", ratio_low, Criterion::InRange(12.0, 20.0)),
        outcome("integrator", "drift ratio n=50 vs n=100 (high end)", ratio_high, Criterion::InRange(12.0, 20.0)),
        outcome("integrator", "euler drifts >= 1e3 x rk4", 1e3 / euler_ratio, Criterion::AtMost(1.0)),
        outcome("integrator", "single landmark is a straight line", line_gap, Criterion::AtMost(1e-13)),
        outcome("integrator", "trajectories are bit-deterministic", determinism, Criterion::AtMost(0.0)),
        outcome("integrator", "backward integration returns home", symmetry, Criterion::AtMost(1e-6)),
        outcome("integrator", "adjoint sweep matches fd gradient", adjoint_gap, Criterion::AtMost(1e-5)),
    ]
}

// ---------------------------------------------------------------------------
// momentum
// ---------------------------------------------------------------------------

fn momentum_suite(seed: u64, _inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f6d);

    let mut transport_100 = 0.0f64;
    let mut ratio_low = f64::INFINITY;
    let mut ratio_high = 0.0f64;
    for _ in 0..3 {
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[4, 4], 0.6);
        let x0 = PhasePoint::at_rest(q).with_momentum(p);
        let r100 = momentum_transport_residual(
            &cfg,
            &shoot(&cfg, &x0, 100, Scheme::Rk4).unwrap(),
            1,
        )
        .unwrap();
        let r200 = momentum_transport_residual(
            &cfg,
            &shoot(&cfg, &x0, 200, Scheme::Rk4).unwrap(),
            1,
        )
        .unwrap();
        transport_100 = transport_100.max(r100);
        let ratio = r100 / r200;
        ratio_low = ratio_low.min(ratio);
        ratio_high = ratio_high.max(ratio);
    }

    // lift uniqueness under momentum-preserving splits
    let mut lift_gap = 0.0f64;
    for fractions in [vec![0.5, 0.5], vec![0.5, 0.3, 0.2]] {
        let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[2, 3], 0.6);
        let split = SplitSpec {
            scale: 1,
            landmark: 0,
            fractions,
        };
        let probes = ProbeSet::grid(
            &DVector::from_vec(vec![-1.2, -1.2]),
            &DVector::from_vec(vec![1.2, 1.2]),
            4,
            1,
        );
        lift_gap = lift_gap.max(lift_uniqueness_check(&cfg, &q, &p, &split, &probes, 100).unwrap());
    }

    // probe slaved to a landmark reproduces its discrete path
    let (cfg, q, p) = instances::random_instance(&mut rng, 2, &[2, 4], 0.6);
    let x0 = PhasePoint::at_rest(q).with_momentum(p);
    let traj = shoot(&cfg, &x0, 50, Scheme::Rk4).unwrap();
    let probes = ProbeSet {
        scale: 1,
        points: traj.initial().q.scales[1].clone(),
    };
    let paths = advect_probes(&cfg, &traj, &probes, 1).unwrap();
    let mut probe_gap = 0.0f64;
    for (step, state) in traj.states.iter().enumerate() {
        for (i, z) in paths[step].iter().enumerate() {
            probe_gap = probe_gap.max((z - &state.q.scales[1][i]).norm());
        }
    }

    // far-field probe displacement is bounded by the kernel tail
    let far = ProbeSet {
        scale: 1,
        points: vec![DVector::from_vec(vec![60.0, 60.0])],
    };
    let far_paths = advect_probes(&cfg, &traj, &far, 1).unwrap();
    let far_drift = (far_paths[traj.steps()][0].clone() - &far.points[0]).norm();

    vec![
        outcome("momentum", "transport residual at n=100", transport_100, Criterion::AtMost(1e-6)),
        outcome("momentum", "transport decays fourth order (low end)", ratio_low, Criterion::InRange(12.0, 20.0)),
        outcome("momentum", "transport decays fourth order (high end)", ratio_high, Criterion::InRange(12.0, 20.0)),
        outcome("momentum", "momentum-preserving splits share the lift", lift_gap, Criterion::AtMost(1e-8)),
        outcome("momentum", "probe on a landmark follows it", probe_gap, Criterion::AtMost(1e-10)),
        outcome("momentum", "far-field probe stays put", far_drift, Criterion::AtMost(1e-8)),
    ]
}

// ---------------------------------------------------------------------------
// shooting
// ---------------------------------------------------------------------------

fn shooting_suite(seed: u64, _inject: Option<Defect>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73686f);

    // objective gradient vs FD over every coordinate
    let mut grad_gap = 0.0f64;
    {
        let (problem, _) = instances::similarity_recovery_problem(&mut rng, 2, &[2, 3], 0.5);
        let momenta = InitialMomenta {
            p: instances::random_momentum(&mut rng, &problem.source.shape(), 0.4),
            pa: instances::random_sim_momentum(&mut rng, 2, 0.4),
        };
        let params = ShootParams {
            steps: 40,
            scheme: Scheme::Rk4,
        };
        let grad = gradient(&problem, &momenta, params).unwrap();
        let h = 1e-6;
        let eval = |m: &InitialMomenta| objective(&problem, m, params).unwrap();
        for ell in 0..momenta.p.scales.len() {
            for i in 0..momenta.p.scales[ell].len() {
                for c in 0..2 {
                    let mut mp = momenta.clone();
                    let mut mm = momenta.clone();
                    mp.p.scales[ell][i][c] += h;
                    mm.p.scales[ell][i][c] -= h;
                    let fd = (eval(&mp) - eval(&mm)) / (2.0 * h);
                    grad_gap = grad_gap
                        .max((grad.p.scales[ell][i][c] - fd).abs() / (1.0 + fd.abs()));
                }
            }
        }
        let probe_coords: Vec<(f64, Box<dyn Fn(&mut InitialMomenta, f64)>)> = vec![
            (grad.pa.scaling, Box::new(|m, d| m.pa.scaling += d)),
            (grad.pa.rotation[(0, 1)], Box::new(|m, d| m.pa.rotation[(0, 1)] += d)),
            (grad.pa.rotation[(1, 0)], Box::new(|m, d| m.pa.rotation[(1, 0)] += d)),
            (grad.pa.translation[0], Box::new(|m, d| m.pa.translation[0] += d)),
            (grad.pa.translation[1], Box::new(|m, d| m.pa.translation[1] += d)),
        ];
        for (got, bump) in probe_coords {
            let mut mp = momenta.clone();
            let mut mm = momenta.clone();
            bump(&mut mp, h);
            bump(&mut mm, -h);
            let fd = (eval(&mp) - eval(&mm)) / (2.0 * h);
            grad_gap = grad_gap.max((got - fd).abs() / (1.0 + fd.abs()));
        }
    }

    // endpoint costate vs -FD of the data term
    let mut costate_gap = 0.0f64;
    {
        let (problem, _) = instances::similarity_recovery_problem(&mut rng, 2, &[2, 4], 0.5);
        let q1 = instances::random_configuration(&mut rng, 2, &[2, 4], 1.2);
        let a1 = SimElement {
            scaling: rng.random_range(0.8..1.2),
            rotation: instances::random_rotation(&mut rng, 2, 0.6),
            translation: DVector::from_fn(2, |_, _| rng.random_range(-0.3..0.3)),
        };
        let (p1, pa1) = endpoint_costate(&problem, &q1, &a1);
        let h = 1e-6;
        let mut check = |got: f64, fd: f64| {
            costate_gap = costate_gap.max((got - fd).abs() / (1.0 + fd.abs()));
        };
        for ell in 0..2 {
            for i in 0..q1.scales[ell].len() {
                for c in 0..2 {
                    let mut qp = q1.clone();
                    let mut qm = q1.clone();
                    qp.scales[ell][i][c] += h;
                    qm.scales[ell][i][c] -= h;
                    let fd = -(endpoint_cost(&problem, &qp, &a1)
                        - endpoint_cost(&problem, &qm, &a1))
                        / (2.0 * h);
                    check(p1.scales[ell][i][c], fd);
                }
            }
        }
        let mut ap = a1.clone();
        let mut am = a1.clone();
        ap.scaling += h;
        am.scaling -= h;
        check(
            pa1.scaling,
            -(endpoint_cost(&problem, &q1, &ap) - endpoint_cost(&problem, &q1, &am)) / (2.0 * h),
        );
        for i in 0..2 {
            for j in 0..2 {
                let mut ap = a1.clone();
                let mut am = a1.clone();
                ap.rotation[(i, j)] += h;
                am.rotation[(i, j)] -= h;
                check(
                    pa1.rotation[(i, j)],
                    -(endpoint_cost(&problem, &q1, &ap) - endpoint_cost(&problem, &q1, &am))
                        / (2.0 * h),
                );
            }
            let mut ap = a1.clone();
            let mut am = a1.clone();
            ap.translation[i] += h;
            am.translation[i] -= h;
            check(
                pa1.translation[i],
                -(endpoint_cost(&problem, &q1, &ap) - endpoint_cost(&problem, &q1, &am))
                    / (2.0 * h),
            );
        }
    }

    // synthetic similarity recovery within the default iteration budget
    let (problem, _) = instances::similarity_recovery_problem(&mut rng, 2, &[2, 4], 0.5);
    let recovery_opts = OptimizeOptions {
        shoot: ShootParams {
            steps: 50,
            scheme: Scheme::Rk4,
        },
        ..OptimizeOptions::default()
    };
    let result = optimize(&problem, recovery_opts).unwrap();
    let recovery_ratio = result.endpoint_cost_final / result.endpoint_cost_initial.max(1e-300);
    let mut monotone = 0.0f64;
    for pair in result.history.windows(2) {
        if pair[1].objective >= pair[0].objective {
            monotone = 1.0;
        }
    }
    let optimizer_energy_drift = result.energy_drift;

    // transversality at tight convergence on a small instance
    let cfg = ScaleConfig::new(2, vec![0.4]).unwrap();
    let source = crate::state::MultiscaleConfiguration::new(
        vec![vec![
            DVector::from_vec(vec![-0.4, 0.1]),
            DVector::from_vec(vec![0.5, -0.2]),
        ]],
        2,
    )
    .unwrap();
    let target = crate::state::MultiscaleConfiguration::new(
        vec![vec![
            DVector::from_vec(vec![-0.3, 0.35]),
            DVector::from_vec(vec![0.7, 0.0]),
        ]],
        2,
    )
    .unwrap();
    let small = RegistrationProblem::new(source, target, cfg, 1.0, true).unwrap();
    let opts = OptimizeOptions {
        shoot: ShootParams {
            steps: 50,
            scheme: Scheme::Rk4,
        },
        max_iters: 20000,
        grad_tol: 1e-8,
        ..OptimizeOptions::default()
    };
    let tight = optimize(&small, opts).unwrap();
    let transversality = if tight.converged {
        tight.transversality.max_residual()
    } else {
        f64::INFINITY
    };

    vec![
        outcome("shooting", "objective gradient matches fd", grad_gap, Criterion::AtMost(1e-5)),
        outcome("shooting", "endpoint costate matches -fd of g", costate_gap, Criterion::AtMost(1e-6)),
        outcome("shooting", "similarity target is recovered", recovery_ratio, Criterion::AtMost(1e-3)),
        outcome("shooting", "accepted iterates strictly decrease", monotone, Criterion::AtMost(0.0)),
        outcome("shooting", "energy conserved inside the optimizer", optimizer_energy_drift, Criterion::AtMost(1e-6)),
        outcome("shooting", "endpoint conditions hold at optimum", transversality, Criterion::AtMost(1e-5)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes_everything() {
        let outcomes = run_checks(42, None, None);
        assert!(outcomes.len() >= 25, "expected a full battery, got {}", outcomes.len());
        for o in &outcomes {
            assert!(
                o.passed,
                "{}/{} measured {:.3e} vs {}",
                o.suite, o.name, o.measured, o.criterion
            );
        }
    }

    #[test]
    fn injected_sign_flip_fails_the_rotation_conservation() {
        let outcomes = run_checks(42, Some("sim"), Some(Defect::SimRotationMomentumSignFlip));
        let rotation = outcomes
            .iter()
            .find(|o| o.name.contains("Rt p_R"))
            .expect("rotation conservation check must run");
        assert!(!rotation.passed, "sign flip must break Rt p_R conservation");
    }

    #[test]
    fn filter_selects_suites() {
        let outcomes = run_checks(42, Some("kern"), None);
        assert!(!outcomes.is_empty());
        assert!(outcomes.iter().all(|o| o.suite == "kernels"));
    }
}
