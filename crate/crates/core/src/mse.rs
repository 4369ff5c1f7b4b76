//! Mean squared error of the EBLUP.
//!
//! The second-order approximation is `g1 + g2 + g3 + g4 + g5`. The first three
//! terms have closed forms; `g4` and `g5`, which carry the estimation error of
//! λ, are estimated by parametric bootstrap together with a bootstrap bias
//! correction of `g1`:
//!
//! ```text
//! ḡ1 = 2 g1(Â) − E*[g1(Â*)]
//! ḡ4 = E*[(η̂ᴱᴮ* − η̂ᴱᴮ¹*)²]
//! ḡ5 = 2 E*[(η̂ᴱᴮ* − η̂ᴱᴮ¹*)(η̂ᴱᴮ¹* − η̂ᴮ*)]
//! MSE = ḡ1 + g2 + g3 + ḡ4 + ḡ5
//! ```
//!
//! `η̂ᴮ*` uses the original estimates, `η̂ᴱᴮ¹*` re-estimates `A` and `β` on the
//! bootstrap sample at the original λ̂, and `η̂ᴱᴮ*` re-estimates all three.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::{fit, fit_fixed_lambda, require_converged, FitResult};
use crate::model::{dot, gls_with_h, Dataset, ModelParams};
use crate::prediction::shrink;
use crate::quadrature::GaussHermite;
use crate::rng::{label_id, Role, StreamKey};
use crate::transform::{Transform, TransformKind};
use crate::variance::{expected_h_lambda, r_a, VarAStrategy, VarianceMethod};

/// Fraction of failed bootstrap replicates above which an estimate is flagged.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

/// Smallest bootstrap size accepted by [`mse_estimate`].
pub const MIN_BOOTSTRAP: usize = 100;

/// Closed forms used for `g2` and `g3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GForm {
    /// `g2 = Dᵢ(A+Dᵢ)⁻² xᵢ'M⁻¹xᵢ`, `g3 = ½ Dᵢ(A+Dᵢ)⁻² Var(Â)`.
    #[default]
    Printed,
    /// `g2 = Dᵢ²(A+Dᵢ)⁻² xᵢ'M⁻¹xᵢ`, `g3 = Dᵢ²(A+Dᵢ)⁻³ Var(Â)`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GTerms {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown {
    pub area_id: String,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g1_bar: f64,
    pub g4_bar: f64,
    pub g5_bar: f64,
    pub total: f64,
    /// Bootstrap replicates that entered the averages.
    pub bootstrap_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityTerms {
    pub r1: f64,
    pub r2: Vec<f64>,
    pub r3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub seed: u64,
    /// Re-estimate λ when computing `E*[g1(Â*)]`; otherwise use `Â*(λ̂)`.
    pub g1_refit_lambda: bool,
    pub g_form: GForm,
    pub var_a: VarAStrategy,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 1000,
            seed: 0,
            g1_refit_lambda: true,
            g_form: GForm::Printed,
            var_a: VarAStrategy::Asymptotic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseReport {
    pub areas: Vec<MseBreakdown>,
    pub requested_b: usize,
    pub failed_replicates: usize,
    /// More than [`MAX_FAILED_FRACTION`] of the replicates failed.
    pub unreliable: bool,
    pub warnings: Vec<String>,
}

/// `g1`, `g2`, `g3` for area `i` at variance `a`.
pub fn g_terms(
    ds: &Dataset,
    a: f64,
    i: usize,
    method: VarianceMethod,
    var_a: VarAStrategy,
    form: GForm,
) -> Result<GTerms> {
    let gls = gls_with_h(ds, &vec![0.0; ds.m()], a)?;
    Ok(g_terms_with(ds, a, i, gls.quad_form(ds.x_row(i)), var_a.var_a(ds, a, method), form))
}

fn g_terms_with(ds: &Dataset, a: f64, i: usize, leverage: f64, var_a: f64, form: GForm) -> GTerms {
    let d = ds.d()[i];
    let v = a + d;
    let (g2, g3) = match form {
        GForm::Printed => (d / (v * v) * leverage, 0.5 * d / (v * v) * var_a),
        GForm::Standard => (d * d / (v * v) * leverage, d * d / (v * v * v) * var_a),
    };
    GTerms { g1: g1(a, d), g2, g3 }
}

#[inline]
pub fn g1(a: f64, d: f64) -> f64 {
    a * d / (a + d)
}

/// Leading-order terms of `∂η̂ᵢᴱᴮ¹/∂λ` (`R1`), `∂η̂ᵢᴮ/∂β` (`R2`) and
/// `∂η̂ᵢᴮ/∂A` (`R3`). Expectations under `h(yⱼ,λ) ~ N(xⱼ'β, A+Dⱼ)` use
/// Gauss–Hermite quadrature of order `quad_order`.
pub fn sensitivity_terms(
    ds: &Dataset,
    params: &ModelParams,
    i: usize,
    method: VarianceMethod,
    kind: TransformKind,
    quad_order: usize,
) -> Result<SensitivityTerms> {
    if kind == TransformKind::Log {
        return Err(Error::Unsupported("λ-derivative terms"));
    }
    let t = Transform::dual_power(params.lambda)?;
    let rule = GaussHermite::new(quad_order);
    let a = params.a;
    let p = ds.p();

    let mut weighted = vec![0.0; p];
    for j in 0..ds.m() {
        let v = a + ds.d()[j];
        let e_hl = expected_h_lambda(&t, dot(ds.x_row(j), &params.beta), v, &rule);
        for (acc, x) in weighted.iter_mut().zip(ds.x_row(j)) {
            *acc += x * e_hl / v;
        }
    }
    let gls = gls_with_h(ds, &vec![0.0; ds.m()], a)?;
    let beta_slope = gls.solve(&weighted);

    let xi = ds.x_row(i);
    let d = ds.d()[i];
    let v = a + d;
    let y = ds.y()[i];
    let resid = t.h(y) - dot(xi, &params.beta);
    let r = r_a(ds, params, kind, method, quad_order)?;
    let r1 = a / v * t.h_lambda(y) + d / v * dot(xi, &beta_slope) + d / (v * v) * resid * r;
    Ok(SensitivityTerms { r1, r2: xi.iter().map(|x| d / v * x).collect(), r3: d / (v * v) * resid })
}

/// Draws `yᵢ* = h⁻¹(xᵢ'β̂ + vᵢ* + εᵢ*, λ̂)` with `vᵢ* ~ N(0, Â)`, `εᵢ* ~ N(0, Dᵢ)`.
pub fn bootstrap_generate<R: Rng + ?Sized>(ds: &Dataset, fit: &FitResult, rng: &mut R) -> Result<Dataset> {
    require_converged(fit)?;
    let t = fit.transform();
    let sd_a = fit.params.a.sqrt();
    let y = (0..ds.m())
        .map(|i| {
            let v: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z = dot(ds.x_row(i), &fit.params.beta) + sd_a * v + ds.d()[i].sqrt() * e;
            t.inverse(z)
        })
        .collect();
    ds.with_y(y)
}

/// Re-estimation used inside the bootstrap.
pub trait Refit: Sync {
    /// Full re-estimation of `(λ, A, β)`.
    fn full(&self, ds: &Dataset) -> Result<FitResult>;
    /// Re-estimation of `(A, β)` at a fixed λ.
    fn at_lambda(&self, ds: &Dataset, lambda: f64) -> Result<FitResult>;
}

/// Refits with the same estimator and transform kind as the original fit.
#[derive(Debug, Clone, Copy)]
pub struct SameMethod {
    pub method: VarianceMethod,
    pub kind: TransformKind,
}

impl Refit for SameMethod {
    fn full(&self, ds: &Dataset) -> Result<FitResult> {
        fit(ds, self.method, self.kind)
    }

    fn at_lambda(&self, ds: &Dataset, lambda: f64) -> Result<FitResult> {
        fit_fixed_lambda(ds, self.method, self.kind, lambda)
    }
}

struct ReplicateTerms {
    g1_star: Vec<f64>,
    sq: Vec<f64>,
    cross: Vec<f64>,
}

/// Bootstrap MSE estimate for every area.
pub fn mse_estimate(ds: &Dataset, fit: &FitResult, cfg: &BootstrapConfig) -> Result<MseReport> {
    let refit = SameMethod { method: fit.method, kind: fit.transform_kind };
    mse_estimate_with(ds, fit, cfg, &refit)
}

pub fn mse_estimate_with<R: Refit>(
    ds: &Dataset,
    fit: &FitResult,
    cfg: &BootstrapConfig,
    refit: &R,
) -> Result<MseReport> {
    require_converged(fit)?;
    if cfg.b < MIN_BOOTSTRAP {
        return Err(Error::Domain(format!("bootstrap size {} below the minimum {MIN_BOOTSTRAP}", cfg.b)));
    }
    let key = StreamKey::new(cfg.seed, label_id("bootstrap"), Role::Bootstrap);
    let replicates: Vec<Option<ReplicateTerms>> =
        (0..cfg.b).into_par_iter().map(|b| replicate(ds, fit, cfg, refit, &key, b as u64).ok()).collect();
    mse_from_replicates(ds, fit, cfg, replicates)
}

/// Like [`mse_estimate`] but without spawning parallel work; used when the
/// caller already parallelizes over datasets.
pub(crate) fn mse_estimate_sequential(ds: &Dataset, fit: &FitResult, cfg: &BootstrapConfig) -> Result<MseReport> {
    require_converged(fit)?;
    let refit = SameMethod { method: fit.method, kind: fit.transform_kind };
    let key = StreamKey::new(cfg.seed, label_id("bootstrap"), Role::Bootstrap);
    let replicates = (0..cfg.b).map(|b| replicate(ds, fit, cfg, &refit, &key, b as u64).ok()).collect();
    mse_from_replicates(ds, fit, cfg, replicates)
}

fn replicate<R: Refit>(
    ds: &Dataset,
    fit: &FitResult,
    cfg: &BootstrapConfig,
    refit: &R,
    key: &StreamKey,
    index: u64,
) -> Result<ReplicateTerms> {
    let mut rng = key.stream(index);
    let star = bootstrap_generate(ds, fit, &mut rng)?;
    let full = refit.full(&star)?;
    require_converged(&full)?;
    let fixed = refit.at_lambda(&star, fit.params.lambda)?;

    let t_hat = fit.transform();
    let t_star = full.transform();
    let a_hat = fit.params.a;
    let m = ds.m();
    let mut out =
        ReplicateTerms { g1_star: Vec::with_capacity(m), sq: Vec::with_capacity(m), cross: Vec::with_capacity(m) };
    let g1_a = if cfg.g1_refit_lambda { full.params.a } else { fixed.params.a };
    for i in 0..m {
        let x = ds.x_row(i);
        let d = ds.d()[i];
        let y = star.y()[i];
        let h_hat = t_hat.h(y);
        let best = shrink(dot(x, &fit.params.beta), h_hat, a_hat, d);
        let eb1 = shrink(dot(x, &fixed.params.beta), h_hat, fixed.params.a, d);
        let eb = shrink(dot(x, &full.params.beta), t_star.h(y), full.params.a, d);
        out.g1_star.push(g1(g1_a, d));
        out.sq.push((eb - eb1) * (eb - eb1));
        out.cross.push((eb - eb1) * (eb1 - best));
    }
    Ok(out)
}

fn mse_from_replicates(
    ds: &Dataset,
    fit: &FitResult,
    cfg: &BootstrapConfig,
    replicates: Vec<Option<ReplicateTerms>>,
) -> Result<MseReport> {
    let m = ds.m();
    let mut g1_sum = vec![0.0; m];
    let mut sq_sum = vec![0.0; m];
    let mut cross_sum = vec![0.0; m];
    let mut used = 0usize;
    for r in replicates.iter().flatten() {
        used += 1;
        for i in 0..m {
            g1_sum[i] += r.g1_star[i];
            sq_sum[i] += r.sq[i];
            cross_sum[i] += r.cross[i];
        }
    }
    let failed = cfg.b - used;
    if used == 0 {
        return Err(Error::NotConverged("every bootstrap replicate failed".into()));
    }
    let a = fit.params.a;
    let gls = gls_with_h(ds, &vec![0.0; m], a)?;
    let var_a = cfg.var_a.var_a(ds, a, fit.method);
    let n = used as f64;
    let mut warnings = Vec::new();
    let areas = (0..m)
        .map(|i| {
            let g = g_terms_with(ds, a, i, gls.quad_form(ds.x_row(i)), var_a, cfg.g_form);
            let g1_bar = 2.0 * g.g1 - g1_sum[i] / n;
            let g4_bar = sq_sum[i] / n;
            let g5_bar = 2.0 * cross_sum[i] / n;
            let total = g1_bar + g.g2 + g.g3 + g4_bar + g5_bar;
            if g1_bar < 0.0 {
                warnings.push(format!("area {}: bias-corrected g1 is negative ({g1_bar})", ds.ids()[i]));
            }
            if total < 0.5 * g.g1 {
                warnings.push(format!("area {}: MSE estimate {total} below g1/2", ds.ids()[i]));
            }
            MseBreakdown {
                area_id: ds.ids()[i].clone(),
                g1: g.g1,
                g2: g.g2,
                g3: g.g3,
                g1_bar,
                g4_bar,
                g5_bar,
                total,
                bootstrap_b: used,
            }
        })
        .collect();
    Ok(MseReport {
        areas,
        requested_b: cfg.b,
        failed_replicates: failed,
        unreliable: failed as f64 > MAX_FAILED_FRACTION * cfg.b as f64,
        warnings,
    })
}
