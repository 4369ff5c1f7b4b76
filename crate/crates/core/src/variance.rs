//! Estimators of the random-effect variance `A` for fixed λ.
//!
//! * Prasad–Rao: closed-form moment estimator based on OLS residuals.
//! * Fay–Herriot: root of `Σ (A+Dⱼ)⁻¹ eⱼ(A)² = m − p`.
//! * ML: root of `Σ (A+Dⱼ)⁻² eⱼ(A)² = Σ (A+Dⱼ)⁻¹`.
//! * REML: the ML equation with the trace correction
//!   `− Σ xⱼ'(Σ (A+Dₖ)⁻¹ xₖxₖ')⁻¹xⱼ / (A+Dⱼ)²` on the right-hand side.
//!
//! `eⱼ(A) = h(yⱼ, λ) − xⱼ'β̂(A, λ)` are GLS residuals. All four are truncated
//! at zero, and the truncation is recorded on the estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, gls_with_h, weighted_ls, Dataset, ModelParams};
use crate::quadrature::GaussHermite;
use crate::roots::{brent, Tolerance};
use crate::transform::{Transform, TransformKind};

/// Residual tolerance per area for the estimating equations (`tol_A = 1e-8·m`).
pub const TOL_A_PER_AREA: f64 = 1e-8;

/// Iteration cap shared by every scalar solve.
pub const MAX_SOLVER_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VarianceMethod {
    PR,
    FH,
    ML,
    REML,
}

impl VarianceMethod {
    pub const ALL: [VarianceMethod; 4] = [Self::ML, Self::REML, Self::FH, Self::PR];

    pub fn name(&self) -> &'static str {
        match self {
            Self::PR => "PR",
            Self::FH => "FH",
            Self::ML => "ML",
            Self::REML => "REML",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pr" => Ok(Self::PR),
            "fh" => Ok(Self::FH),
            "ml" => Ok(Self::ML),
            "reml" => Ok(Self::REML),
            other => Err(Error::InvalidData(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEstimate {
    #[serde(rename = "A")]
    pub a: f64,
    pub truncated_at_zero: bool,
    pub solver_iterations: usize,
    /// `|estimating equation|` at the returned value; zero for Prasad–Rao.
    pub residual: f64,
}

/// Estimates `A` at the transform's λ.
pub fn estimate_a(ds: &Dataset, t: &Transform, method: VarianceMethod) -> Result<AEstimate> {
    let h = ds.transformed(t);
    estimate_a_from_h(ds, &h, method)
}

/// Left-hand side minus right-hand side of the estimating equation of
/// `method` (FH, ML or REML) at `a`.
pub fn estimating_equation(ds: &Dataset, h: &[f64], a: f64, method: VarianceMethod) -> Result<f64> {
    let fit = gls_with_h(ds, h, a)?;
    let m = ds.m();
    let mut value = 0.0;
    for i in 0..m {
        let v = a + ds.d()[i];
        let e = h[i] - dot(ds.x_row(i), &fit.beta);
        value += match method {
            VarianceMethod::FH => e * e / v,
            VarianceMethod::ML => e * e / (v * v) - 1.0 / v,
            VarianceMethod::REML => (e * e + fit.quad_form(ds.x_row(i))) / (v * v) - 1.0 / v,
            VarianceMethod::PR => return Err(Error::Domain("Prasad-Rao has no estimating equation".into())),
        };
    }
    if method == VarianceMethod::FH {
        value -= (m - ds.p()) as f64;
    }
    Ok(value)
}

pub(crate) fn estimate_a_from_h(ds: &Dataset, h: &[f64], method: VarianceMethod) -> Result<AEstimate> {
    if method == VarianceMethod::PR {
        return prasad_rao(ds, h);
    }
    let m = ds.m();
    let g0 = estimating_equation(ds, h, 0.0, method)?;
    if g0 <= 0.0 {
        return Ok(AEstimate {
            a: 0.0,
            truncated_at_zero: g0 < 0.0,
            solver_iterations: 0,
            residual: if g0 < 0.0 { 0.0 } else { g0.abs() },
        });
    }
    let a_max = 100.0 * sample_variance(h);
    let g_max = if a_max > 0.0 { estimating_equation(ds, h, a_max, method)? } else { f64::NAN };
    if !(g_max < 0.0) {
        return Err(Error::Solver(format!(
            "{} equation has no sign change on [0, {a_max}]: G(0) = {g0}, G(A_max) = {g_max}",
            method.name()
        )));
    }
    let tol =
        Tolerance { xtol: 1e-13 * a_max, ftol: 1e-3 * TOL_A_PER_AREA * m as f64, max_iter: MAX_SOLVER_ITERATIONS };
    let root = brent(|a| estimating_equation(ds, h, a, method), 0.0, a_max, g0, g_max, tol)?;
    Ok(AEstimate { a: root.x, truncated_at_zero: false, solver_iterations: root.iterations, residual: root.fx.abs() })
}

/// Untruncated Prasad–Rao value
/// `(m−p)⁻¹ {Σ (hⱼ − xⱼ'β̂_OLS)² − Σ Dⱼ (1 − xⱼ'(X'X)⁻¹xⱼ)}`.
pub fn prasad_rao_raw(ds: &Dataset, h: &[f64]) -> Result<f64> {
    let m = ds.m();
    let ols = weighted_ls(ds, h, &vec![1.0; m])?;
    let mut rss = 0.0;
    let mut correction = 0.0;
    for i in 0..m {
        let x = ds.x_row(i);
        let e = h[i] - dot(x, &ols.beta);
        rss += e * e;
        correction += ds.d()[i] * (1.0 - ols.quad_form(x));
    }
    Ok((rss - correction) / (m - ds.p()) as f64)
}

fn prasad_rao(ds: &Dataset, h: &[f64]) -> Result<AEstimate> {
    let raw = prasad_rao_raw(ds, h)?;
    Ok(AEstimate { a: raw.max(0.0), truncated_at_zero: raw < 0.0, solver_iterations: 0, residual: 0.0 })
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Large-`m` variance of `Â`:
/// ML/REML `2/Σ(A+Dⱼ)⁻²`, FH `2m/(Σ(A+Dⱼ)⁻¹)²`, PR `2m⁻² Σ(A+Dⱼ)²`.
pub fn var_a_asymptotic(ds: &Dataset, a: f64, method: VarianceMethod) -> f64 {
    let m = ds.m() as f64;
    let d = ds.d();
    match method {
        VarianceMethod::ML | VarianceMethod::REML => 2.0 / d.iter().map(|dj| (a + dj).powi(-2)).sum::<f64>(),
        VarianceMethod::FH => 2.0 * m / d.iter().map(|dj| 1.0 / (a + dj)).sum::<f64>().powi(2),
        VarianceMethod::PR => 2.0 / (m * m) * d.iter().map(|dj| (a + dj).powi(2)).sum::<f64>(),
    }
}

/// Source of `Var(Â)` for the MSE approximation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarAStrategy {
    #[default]
    Asymptotic,
    /// An externally supplied value, e.g. a bootstrap variance.
    Supplied(f64),
}

impl VarAStrategy {
    pub fn var_a(&self, ds: &Dataset, a: f64, method: VarianceMethod) -> f64 {
        match *self {
            VarAStrategy::Asymptotic => var_a_asymptotic(ds, a, method),
            VarAStrategy::Supplied(v) => v,
        }
    }
}

/// `E[(Z − μ) h_λ(h⁻¹(Z))]` for `Z ~ N(μ, σ²)`.
pub(crate) fn expected_residual_h_lambda(t: &Transform, mu: f64, var: f64, rule: &GaussHermite) -> f64 {
    rule.expect(mu, var, |z| (z - mu) * t.h_lambda(t.inverse(z)))
}

/// `E[h_λ(h⁻¹(Z))]` for `Z ~ N(μ, σ²)`.
pub(crate) fn expected_h_lambda(t: &Transform, mu: f64, var: f64, rule: &GaussHermite) -> f64 {
    rule.expect(mu, var, |z| t.h_lambda(t.inverse(z)))
}

/// Leading term `r(A)` of `E[∂Â(λ)/∂λ]`.
///
/// With `Eⱼ = E[{h(yⱼ,λ) − xⱼ'β} h_λ(yⱼ,λ)]` under `h(yⱼ,λ) ~ N(xⱼ'β, A+Dⱼ)`:
/// PR gives `2(m−p)⁻¹ Σ Eⱼ`; FH (`k = 1`) and ML/REML (`k = 2`) give
/// `2 Σ (A+Dⱼ)⁻ᵏ Eⱼ / Σ (A+Dⱼ)⁻ᵏ`, the implicit-function derivative
/// `−G_λ/G_A` of the estimating equation.
pub fn r_a(
    ds: &Dataset,
    params: &ModelParams,
    kind: TransformKind,
    method: VarianceMethod,
    quad_order: usize,
) -> Result<f64> {
    if kind == TransformKind::Log {
        return Err(Error::Unsupported("r(A) is defined through ∂/∂λ"));
    }
    let t = Transform::dual_power(params.lambda)?;
    let rule = GaussHermite::new(quad_order);
    let per_area: Vec<(f64, f64)> = (0..ds.m())
        .map(|i| {
            let v = params.a + ds.d()[i];
            let mu = dot(ds.x_row(i), &params.beta);
            (v, expected_residual_h_lambda(&t, mu, v, &rule))
        })
        .collect();
    let r = match method {
        VarianceMethod::PR => 2.0 / (ds.m() - ds.p()) as f64 * per_area.iter().map(|(_, e)| e).sum::<f64>(),
        VarianceMethod::FH | VarianceMethod::ML | VarianceMethod::REML => {
            let k = if method == VarianceMethod::FH { 1 } else { 2 };
            let (num, den) = per_area.iter().fold((0.0, 0.0), |(num, den), (v, e)| {
                let w = v.powi(-k);
                (num + w * e, den + w)
            });
            2.0 * num / den
        }
    };
    Ok(r)
}
