//! Dual-power transformed Fay–Herriot model for small area estimation.
//!
//! Each area `i = 1..m` has a positive direct estimate `yᵢ` with known
//! sampling variance `Dᵢ` on the transformed scale and covariates `xᵢ`:
//!
//! ```text
//! h(yᵢ, λ) = xᵢ'β + vᵢ + εᵢ,   vᵢ ~ N(0, A),   εᵢ ~ N(0, Dᵢ)
//! h(y, λ)  = (y^λ − y^(−λ)) / (2λ),   h(y, 0) = log y
//! ```
//!
//! The crate estimates `(β, A, λ)`, computes the EBLUP of `ηᵢ = xᵢ'β + vᵢ`,
//! estimates its MSE by parametric bootstrap, and runs Monte Carlo studies.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod lambda;
pub mod model;
pub mod mse;
pub mod prediction;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod simulation;
pub mod transform;
pub mod variance;

pub use error::{Error, Result};
pub use lambda::{fit, fit_fixed_lambda, profile_score, FitResult};
pub use model::{log_likelihood, score_lambda, AreaObservation, Dataset, ModelParams};
pub use mse::{mse_estimate, BootstrapConfig, GForm, MseBreakdown, MseReport};
pub use prediction::{best_predictor, eblup, Prediction};
pub use transform::{Transform, TransformKind};
pub use variance::{estimate_a, AEstimate, VarAStrategy, VarianceMethod};
