//! Time-varying Gaussian-process bandit optimization with non-constant
//! evaluation time.
//!
//! The objective `f(x, τ)` drifts with wall-clock time and every query takes
//! a point-dependent evaluation time `t(x)`. The crate provides
//!
//! * [`kernels`]: space, time and product kernels;
//! * [`gp`]: exact GP posteriors for the objective and for `log t(x)`;
//! * [`acquisition`]: GP-UCB, the unit-step time-varying baseline and the
//!   CTV-fixed / CTV / CTV-simple acquisitions with analytic gradients;
//! * [`optimize`]: grid plus projected L-BFGS acquisition maximization;
//! * [`theory`]: evaluation-time uniformity, information gain and regret-bound
//!   quantities;
//! * [`envsim`]: the synthetic drifting environment;
//! * [`bandit`]: the interaction loop with regret accounting.

pub mod acquisition;
pub mod bandit;
pub mod envsim;
mod error;
pub mod gp;
pub mod kernels;
pub mod optimize;
pub mod theory;

pub use error::{Error, Result};
