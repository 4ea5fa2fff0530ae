//! Multiscale diffeomorphic landmark registration by geodesic shooting.
//!
//! The deformation model couples two layers:
//!
//! * a coarse-to-fine stack of velocity fields, one Gaussian RKHS per scale,
//!   acting on nested landmark clouds ([`kernel`], [`state`]);
//! * a finite-dimensional similarity layer (positive scaling, rotation,
//!   translation) acting on the target cloud about fixed per-scale pivots
//!   ([`sim`]).
//!
//! Both layers share one separable Hamiltonian ([`hamiltonian`]); geodesics
//! are integrated by fixed-step explicit schemes with exact discrete
//! adjoints ([`integrator`]); inexact matching optimizes over initial
//! momenta with Armijo gradient descent ([`shooting`]). The [`momentum`]
//! module verifies the structural identities of the flow — conserved
//! momentum transport, lift uniqueness across re-representations, passive
//! probe advection — and [`checks`] packages every invariant as a seeded
//! pass/fail suite. File formats and table writers live in [`io`].

pub mod checks;
pub mod hamiltonian;
pub mod instances;
pub mod integrator;
pub mod io;
pub mod kernel;
pub mod momentum;
pub mod shooting;
pub mod sim;
pub mod state;

pub use hamiltonian::PhasePoint;
pub use integrator::{Scheme, Trajectory};
pub use kernel::{Atom, BandField, ControlField, ScaleConfig};
pub use sim::{SimAlgebra, SimElement, SimMomentum};
pub use state::{MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem};
