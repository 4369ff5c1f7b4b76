//! Best predictor and EBLUP of `ηᵢ = xᵢ'β + vᵢ` on the transformed scale.
//!
//! The original-scale value reported next to each prediction is the plain
//! inverse `h⁻¹(η̂ᵢ, λ̂)`. It is not a predictor of `E[yᵢ | vᵢ]`; no
//! retransformation-bias correction is applied.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lambda::{require_converged, FitResult};
use crate::model::{dot, AreaObservation, Dataset, ModelParams};
use crate::transform::Transform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub area_id: String,
    #[serde(rename = "D")]
    pub d: f64,
    /// `h(yᵢ, λ̂)`, the direct predictor.
    pub h_direct: f64,
    /// `xᵢ'β̂`, the regression-synthetic predictor.
    pub synthetic: f64,
    pub eta_hat: f64,
    /// `Â/(Â + Dᵢ)`
    pub shrinkage_weight: f64,
    pub y_scale_value: f64,
}

/// `xᵢ'β + A/(A+Dᵢ) {h(yᵢ,λ) − xᵢ'β}` with `h` taken at `params.lambda`.
pub fn best_predictor(obs: &AreaObservation, params: &ModelParams) -> Result<f64> {
    let t = Transform::dual_power(params.lambda)?;
    let h = t.forward(obs.y)?;
    Ok(shrink(dot(&obs.x, &params.beta), h, params.a, obs.d))
}

#[inline]
pub(crate) fn shrink(synthetic: f64, direct: f64, a: f64, d: f64) -> f64 {
    synthetic + a / (a + d) * (direct - synthetic)
}

/// EBLUP for every area under a converged fit.
pub fn eblup(ds: &Dataset, fit: &FitResult) -> Result<Vec<Prediction>> {
    require_converged(fit)?;
    let t = fit.transform();
    let a = fit.params.a;
    Ok((0..ds.m())
        .map(|i| {
            let d = ds.d()[i];
            let h_direct = t.h(ds.y()[i]);
            let synthetic = dot(ds.x_row(i), &fit.params.beta);
            let eta_hat = shrink(synthetic, h_direct, a, d);
            Prediction {
                area_id: ds.ids()[i].clone(),
                d,
                h_direct,
                synthetic,
                eta_hat,
                shrinkage_weight: a / (a + d),
                y_scale_value: t.inverse(eta_hat),
            }
        })
        .collect())
}
