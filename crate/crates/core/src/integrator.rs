//! Fixed-step time integration on `[0, 1]` and exact discrete adjoints.
//!
//! Two explicit schemes are supported: Euler for diagnostics and classical
//! RK4 as the default. Trajectories store every step densely, so the
//! variational and adjoint passes can recompute stage states exactly instead
//! of re-simulating.
//!
//! Gradients follow the discretize-then-optimize route: [`adjoint_sweep`]
//! reverse-propagates a terminal cotangent through the *discrete* stepping
//! formulas via hand-coded vector-Jacobian products of each stage, so the
//! returned derivative matches the discrete objective to roundoff.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::hamiltonian::{phase_rhs, phase_rhs_vjp, PhasePoint};
use crate::kernel::{velocity_jacobian_at, ScaleConfig};
use crate::state::bands_from;

/// Explicit stepping scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Euler => write!(f, "euler"),
            Scheme::Rk4 => write!(f, "rk4"),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(format!("unknown scheme '{other}', expected euler|rk4")),
        }
    }
}

/// `N + 1` phase samples at `t_k = k/N`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub states: Vec<PhasePoint>,
}

impl Trajectory {
    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn initial(&self) -> &PhasePoint {
        &self.states[0]
    }

    pub fn terminal(&self) -> &PhasePoint {
        self.states.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IntegrationError {
    #[error("state became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("step count must be >= 1")]
    NoSteps,
    #[error("adjoint scheme {requested} does not match trajectory scheme {stored}")]
    SchemeMismatch { requested: Scheme, stored: Scheme },
}

/// The four RK4 stage states and slopes for one step.
pub(crate) struct Rk4Stages {
    pub y: [PhasePoint; 4],
    pub k: [PhasePoint; 4],
}

pub(crate) fn rk4_stages<F>(f: &F, x: &PhasePoint, h: f64) -> Rk4Stages
where
    F: Fn(&PhasePoint) -> PhasePoint,
{
    let y1 = x.clone();
    let k1 = f(&y1);
    let y2 = x.added(h / 2.0, &k1);
    let k2 = f(&y2);
    let y3 = x.added(h / 2.0, &k2);
    let k3 = f(&y3);
    let y4 = x.added(h, &k3);
    let k4 = f(&y4);
    Rk4Stages {
        y: [y1, y2, y3, y4],
        k: [k1, k2, k3, k4],
    }
}

pub(crate) fn rk4_step<F>(f: &F, x: &PhasePoint, h: f64) -> PhasePoint
where
    F: Fn(&PhasePoint) -> PhasePoint,
{
    let stages = rk4_stages(f, x, h);
    let mut out = x.clone();
    out.axpy(h / 6.0, &stages.k[0]);
    out.axpy(h / 3.0, &stages.k[1]);
    out.axpy(h / 3.0, &stages.k[2]);
    out.axpy(h / 6.0, &stages.k[3]);
    out
}

/// Integrates an arbitrary right-hand side over `[0, 1]`, storing all steps.
pub(crate) fn integrate<F>(
    f: &F,
    x0: &PhasePoint,
    steps: usize,
    scheme: Scheme,
) -> Result<Vec<PhasePoint>, IntegrationError>
where
    F: Fn(&PhasePoint) -> PhasePoint,
{
    if steps == 0 {
        return Err(IntegrationError::NoSteps);
    }
    let h = 1.0 / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for step in 0..steps {
        let x = &states[step];
        let next = match scheme {
            Scheme::Euler => x.added(h, &f(x)),
            Scheme::Rk4 => rk4_step(f, x, h),
        };
        if !next.all_finite() {
            return Err(IntegrationError::Diverged { step: step + 1 });
        }
        states.push(next);
    }
    Ok(states)
}

/// Forward solve of the coupled Hamiltonian system from `x0`.
pub fn shoot(
    cfg: &ScaleConfig,
    x0: &PhasePoint,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory, IntegrationError> {
    let states = integrate(&|x: &PhasePoint| phase_rhs(cfg, x), x0, steps, scheme)?;
    Ok(Trajectory { scheme, states })
}

/// Per-landmark linear transport `J̇_i = du_ℓ(q_i(t)) J_i` along a stored
/// trajectory, for the landmarks of scale `scale`.
///
/// The coefficient field is rebuilt from the exact stage states of the
/// stored discrete flow, so the transported matrices are consistent with the
/// trajectory to integrator accuracy. Returns `J_i(t_k)` for every step.
pub fn variational_transport(
    cfg: &ScaleConfig,
    traj: &Trajectory,
    scale: usize,
    j0: &[DMatrix<f64>],
) -> Result<Vec<Vec<DMatrix<f64>>>, IntegrationError> {
    assert!(scale < traj.initial().q.num_scales(), "scale out of range");
    let n_landmarks = traj.initial().q.scales[scale].len();
    assert_eq!(j0.len(), n_landmarks, "one seed matrix per landmark");
    let h = traj.step_size();
    let rhs = |x: &PhasePoint| phase_rhs(cfg, x);

    let mut current: Vec<DMatrix<f64>> = j0.to_vec();
    let mut all = vec![current.clone()];
    for step in 0..traj.steps() {
        let x = &traj.states[step];
        match traj.scheme {
            Scheme::Euler => {
                let field = bands_from(&x.q, &x.p);
                for (i, j) in current.iter_mut().enumerate() {
                    let du = velocity_jacobian_at(cfg, &field, scale, &x.q.scales[scale][i]);
                    *j += h * (&du * &*j);
                }
            }
            Scheme::Rk4 => {
                let stages = rk4_stages(&rhs, x, h);
                let coeff: Vec<Vec<DMatrix<f64>>> = stages
                    .y
                    .iter()
                    .map(|y| {
                        let field = bands_from(&y.q, &y.p);
                        (0..n_landmarks)
                            .map(|i| {
                                velocity_jacobian_at(cfg, &field, scale, &y.q.scales[scale][i])
                            })
                            .collect()
                    })
                    .collect();
                for (i, j) in current.iter_mut().enumerate() {
                    let m1 = &coeff[0][i] * &*j;
                    let m2 = &coeff[1][i] * (&*j + (h / 2.0) * &m1);
                    let m3 = &coeff[2][i] * (&*j + (h / 2.0) * &m2);
                    let m4 = &coeff[3][i] * (&*j + h * &m3);
                    *j += (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
                }
            }
        }
        if current.iter().any(|j| j.iter().any(|v| !v.is_finite())) {
            return Err(IntegrationError::Diverged { step: step + 1 });
        }
        all.push(current.clone());
    }
    Ok(all)
}

/// Reverse-mode derivative of the discrete flow map: propagates a terminal
/// cotangent back to `t = 0`, returning `∂(cost ∘ flow)/∂x_0` when
/// `terminal = ∂cost/∂x_N`.
///
/// `scheme` must match the trajectory's scheme; stage states are recomputed
/// from the stored steps, which reproduces the forward pass bit for bit.
pub fn adjoint_sweep(
    cfg: &ScaleConfig,
    traj: &Trajectory,
    terminal: &PhasePoint,
    scheme: Scheme,
) -> Result<PhasePoint, IntegrationError> {
    if scheme != traj.scheme {
        return Err(IntegrationError::SchemeMismatch {
            requested: scheme,
            stored: traj.scheme,
        });
    }
    let h = traj.step_size();
    let rhs = |x: &PhasePoint| phase_rhs(cfg, x);
    let mut xbar = terminal.clone();
    for step in (0..traj.steps()).rev() {
        let x = &traj.states[step];
        match traj.scheme {
            Scheme::Euler => {
                // x' = x + h f(x)  ⇒  x̄ += h f'(x)ᵀ x̄
                let pullback = phase_rhs_vjp(cfg, x, &xbar);
                xbar.axpy(h, &pullback);
            }
            Scheme::Rk4 => {
                let stages = rk4_stages(&rhs, x, h);
                // x' = x + h/6 (k1 + 2k2 + 2k3 + k4); peel stages in reverse
                let mut k4bar = xbar.zeros_like();
                k4bar.axpy(h / 6.0, &xbar);
                let y4bar = phase_rhs_vjp(cfg, &stages.y[3], &k4bar);

                let mut k3bar = xbar.zeros_like();
                k3bar.axpy(h / 3.0, &xbar);
                k3bar.axpy(h, &y4bar);
                let y3bar = phase_rhs_vjp(cfg, &stages.y[2], &k3bar);

                let mut k2bar = xbar.zeros_like();
                k2bar.axpy(h / 3.0, &xbar);
                k2bar.axpy(h / 2.0, &y3bar);
                let y2bar = phase_rhs_vjp(cfg, &stages.y[1], &k2bar);

                let mut k1bar = xbar.zeros_like();
                k1bar.axpy(h / 6.0, &xbar);
                k1bar.axpy(h / 2.0, &y2bar);
                let y1bar = phase_rhs_vjp(cfg, &stages.y[0], &k1bar);

                xbar.axpy(1.0, &y1bar);
                xbar.axpy(1.0, &y2bar);
                xbar.axpy(1.0, &y3bar);
                xbar.axpy(1.0, &y4bar);
            }
        }
    }
    Ok(xbar)
}
