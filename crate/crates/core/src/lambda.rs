//! Joint estimation of `(λ, A, β)` from the profiled λ-score.
//!
//! For each λ the variance `Â(λ)` and the GLS coefficients `β̂(λ) = β̂(Â(λ), λ)`
//! are computed, and λ̂ solves `F(λ, Â(λ), β̂(λ)) = 0`. The dual power family
//! is even in λ, so `F(0, ·, ·) = 0` always holds and the log model is a
//! stationary point; it competes with the interior roots on likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, gls_with_h, Dataset, ModelParams};
use crate::roots::{brent, Tolerance};
use crate::transform::{Transform, TransformKind, LAMBDA_MAX};
use crate::variance::{estimate_a_from_h, AEstimate, VarianceMethod, MAX_SOLVER_ITERATIONS};

/// Score tolerance per area (`tol_λ = 1e-8`, certificate `|F| < tol_λ·m`).
pub const TOL_LAMBDA_PER_AREA: f64 = 1e-8;

/// Lower end of the λ search grid.
pub const LAMBDA_FLOOR: f64 = 0.01;

/// Number of geometrically spaced grid points on `[LAMBDA_FLOOR, LAMBDA_MAX]`.
pub const GRID_POINTS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub method: VarianceMethod,
    pub a_estimate: AEstimate,
    /// `|F|` at the solution; zero for log fits and fixed-λ fits.
    pub lambda_residual: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub transform_kind: TransformKind,
    /// True when λ was supplied rather than estimated.
    #[serde(default)]
    pub lambda_fixed: bool,
    /// Profile log-likelihood at the solution (constant dropped).
    pub log_likelihood: f64,
    /// `(λ, F)` pairs of the bracketing grid, kept when no root was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_grid: Option<Vec<(f64, f64)>>,
}

impl FitResult {
    pub fn transform(&self) -> Transform {
        match self.transform_kind {
            TransformKind::Log => Transform::log(),
            TransformKind::DualPower => {
                Transform::dual_power(self.params.lambda).expect("fitted lambda lies in the admissible range")
            }
        }
    }
}

/// Profile quantities at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileScore {
    pub lambda: f64,
    pub f_value: f64,
    pub a_estimate: AEstimate,
    pub beta: Vec<f64>,
    pub log_likelihood: f64,
}

/// Evaluates `F(λ, Â(λ), β̂(λ))` together with `Â(λ)`, `β̂(λ)` and the
/// profile log-likelihood.
pub fn profile_score(ds: &Dataset, lambda: f64, method: VarianceMethod) -> Result<ProfileScore> {
    let t = Transform::dual_power(lambda)?;
    profile_at(ds, &t, method).map_err(|e| e.at_lambda(lambda))
}

fn profile_at(ds: &Dataset, t: &Transform, method: VarianceMethod) -> Result<ProfileScore> {
    let m = ds.m();
    let mut h = Vec::with_capacity(m);
    let mut ratio_sum = 0.0;
    let mut h_lambda = Vec::with_capacity(m);
    let mut log_jac = 0.0;
    for &y in ds.y() {
        let (hv, ratio, hl) = t.score_parts(y);
        h.push(hv);
        h_lambda.push(hl);
        ratio_sum += ratio;
        log_jac += t.log_jacobian(y);
    }
    let a_estimate = estimate_a_from_h(ds, &h, method)?;
    let a = a_estimate.a;
    let beta = gls_with_h(ds, &h, a)?.beta;
    let mut f_value = ratio_sum;
    let mut log_likelihood = log_jac;
    for i in 0..m {
        let v = a + ds.d()[i];
        let e = h[i] - dot(ds.x_row(i), &beta);
        f_value -= e * h_lambda[i] / v;
        log_likelihood -= 0.5 * (v.ln() + e * e / v);
    }
    Ok(ProfileScore { lambda: t.lambda(), f_value, a_estimate, beta, log_likelihood })
}

/// Central-difference slope of the profiled score, a diagnostic for the
/// shape of `F` near a root.
pub fn profile_score_slope(ds: &Dataset, lambda: f64, method: VarianceMethod) -> Result<f64> {
    let step = 1e-5 * lambda.max(1e-2);
    let lo = (lambda - step).max(0.0);
    let hi = (lambda + step).min(LAMBDA_MAX);
    let f_lo = profile_score(ds, lo, method)?.f_value;
    let f_hi = profile_score(ds, hi, method)?.f_value;
    Ok((f_hi - f_lo) / (hi - lo))
}

/// The λ search grid: `GRID_POINTS` values spaced geometrically on
/// `[LAMBDA_FLOOR, LAMBDA_MAX]`.
pub fn lambda_grid() -> Vec<f64> {
    let ratio = LAMBDA_MAX / LAMBDA_FLOOR;
    (0..GRID_POINTS)
        .map(|k| {
            if k + 1 == GRID_POINTS {
                LAMBDA_MAX
            } else {
                LAMBDA_FLOOR * ratio.powf(k as f64 / (GRID_POINTS - 1) as f64)
            }
        })
        .collect()
}

/// Estimates `(λ, A, β)`.
///
/// The log kind fixes λ = 0. For the dual power kind every sign change of the
/// profiled score on [`lambda_grid`] is refined by Brent's method, λ = 0 is
/// added as a candidate, and the candidate with the largest profile
/// log-likelihood is returned. When the score is positive on the whole grid
/// the result has `converged = false` and carries the grid of score values.
pub fn fit(ds: &Dataset, method: VarianceMethod, kind: TransformKind) -> Result<FitResult> {
    match kind {
        TransformKind::Log => fit_at(ds, method, &Transform::log()),
        TransformKind::DualPower => fit_dual_power(ds, method),
    }
}

/// Estimates `A` and `β` with λ held at `lambda`.
pub fn fit_fixed_lambda(ds: &Dataset, method: VarianceMethod, kind: TransformKind, lambda: f64) -> Result<FitResult> {
    let t = Transform::new(kind, lambda)?;
    let mut fit = fit_at(ds, method, &t)?;
    fit.lambda_fixed = kind == TransformKind::DualPower;
    Ok(fit)
}

fn fit_at(ds: &Dataset, method: VarianceMethod, t: &Transform) -> Result<FitResult> {
    let p = profile_at(ds, t, method).map_err(|e| e.at_lambda(t.lambda()))?;
    Ok(FitResult {
        params: ModelParams { beta: p.beta, a: p.a_estimate.a, lambda: t.lambda() },
        method,
        a_estimate: p.a_estimate,
        lambda_residual: 0.0,
        outer_iterations: 0,
        converged: true,
        transform_kind: t.kind(),
        lambda_fixed: false,
        log_likelihood: p.log_likelihood,
        score_grid: None,
    })
}

fn fit_dual_power(ds: &Dataset, method: VarianceMethod) -> Result<FitResult> {
    let m = ds.m() as f64;
    let grid = lambda_grid();
    let mut evaluated = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        evaluated.push(profile_score(ds, lambda, method)?);
    }
    let mut iterations = evaluated.len();
    let mut candidates: Vec<ProfileScore> = Vec::new();

    let tol = Tolerance { xtol: 0.0, ftol: 0.1 * TOL_LAMBDA_PER_AREA * m, max_iter: MAX_SOLVER_ITERATIONS };
    for pair in evaluated.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if lo.f_value == 0.0 {
            candidates.push(lo.clone());
            continue;
        }
        if lo.f_value.signum() == hi.f_value.signum() || hi.f_value == 0.0 {
            continue;
        }
        let root = brent(
            |lambda| profile_score(ds, lambda, method).map(|p| p.f_value),
            lo.lambda,
            hi.lambda,
            lo.f_value,
            hi.f_value,
            tol,
        )?;
        iterations += root.iterations;
        candidates.push(profile_score(ds, root.x, method)?);
    }
    if let Some(last) = evaluated.last().filter(|p| p.f_value == 0.0) {
        candidates.push(last.clone());
    }
    // F(0) = 0 identically; the log model competes on likelihood unless the
    // score is positive everywhere, in which case the likelihood keeps rising
    // towards the upper end and no interior maximum exists
    if !candidates.is_empty() || evaluated[0].f_value < 0.0 {
        candidates.push(profile_score(ds, 0.0, method)?);
    }

    let best = candidates.into_iter().max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood));
    match best {
        Some(best) => {
            let residual = best.f_value.abs();
            Ok(FitResult {
                params: ModelParams { beta: best.beta, a: best.a_estimate.a, lambda: best.lambda },
                method,
                a_estimate: best.a_estimate,
                lambda_residual: residual,
                outer_iterations: iterations,
                converged: residual < TOL_LAMBDA_PER_AREA * m,
                transform_kind: TransformKind::DualPower,
                lambda_fixed: false,
                log_likelihood: best.log_likelihood,
                score_grid: None,
            })
        }
        None => {
            // no root: report the grid end with the larger likelihood
            let edge = evaluated
                .iter()
                .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
                .expect("grid is non-empty")
                .clone();
            Ok(FitResult {
                params: ModelParams { beta: edge.beta, a: edge.a_estimate.a, lambda: edge.lambda },
                method,
                a_estimate: edge.a_estimate,
                lambda_residual: edge.f_value.abs(),
                outer_iterations: iterations,
                converged: false,
                transform_kind: TransformKind::DualPower,
                lambda_fixed: false,
                log_likelihood: edge.log_likelihood,
                score_grid: Some(evaluated.iter().map(|p| (p.lambda, p.f_value)).collect()),
            })
        }
    }
}

/// Fails with [`Error::NotConverged`] unless the fit converged.
pub fn require_converged(fit: &FitResult) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(format!(
            "{} fit: |F| = {} after {} evaluations",
            fit.method.name(),
            fit.lambda_residual,
            fit.outer_iterations
        )))
    }
}
