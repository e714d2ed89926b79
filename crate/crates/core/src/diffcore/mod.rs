//! Named parameters with hand-derived gradients, Adam, and a central
//! finite-difference oracle used to certify every analytic gradient.

mod adam;
mod gradcheck;
mod store;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{fd_gradient_check, GradCheckReport};
pub use store::{Param, ParamStore};
