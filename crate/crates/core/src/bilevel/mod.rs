//! The two-level training problem solved on each client.
//!
//! Inner problem (Koopman operator, readout and reconstruction fixed):
//!
//! ```text
//! min_K ‖Φ(X_{t+1}) − K Φ(X_t)‖² + ‖X_{t+1} − Vᵀ K Φ(X_t)‖² + wd ‖K‖²
//! ```
//!
//! Outer problem (eigenvalues `λ` of the aggregated operator fixed):
//!
//! ```text
//! min_{W,V} Σ_traj Σ_j ‖y_j − Vᵀ (Re(λ^j) ⊙ h(W r_0))‖² + wd (‖W‖² + ‖V‖²)
//! ```
//!
//! Both gradients are written out by hand; see the finite-difference checks
//! in the tests.

mod adam;
mod inner;
mod local;
mod model;
mod outer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use inner::{inner_closed_form, inner_grad, inner_loss, inner_loss_grad, InnerBatchView};
pub use local::{local_inner_solve, local_outer_solve, ClientData, LocalSettings, ValidationLoss};
pub use model::ReKoModel;
pub use outer::{outer_grad, outer_loss, outer_loss_grad, OuterGrad, OuterSample, Propagator};
