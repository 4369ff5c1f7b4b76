//! Area-level data, GLS regression, likelihood and the λ-score.
//!
//! The model is `h(yᵢ, λ) = xᵢ'β + vᵢ + εᵢ` with `vᵢ ~ N(0, A)` and
//! `εᵢ ~ N(0, Dᵢ)` independent, `Dᵢ` known.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{Transform, TransformKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaObservation {
    pub area_id: String,
    pub y: f64,
    pub x: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
}

/// An immutable set of `m` areas with a full-rank `m × p` design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    y: Vec<f64>,
    d: Vec<f64>,
    /// Row-major `m × p`.
    x: Vec<f64>,
    p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    pub lambda: f64,
}

impl Dataset {
    pub fn new(areas: Vec<AreaObservation>) -> Result<Self> {
        let p = areas.first().map(|a| a.x.len()).ok_or_else(|| Error::InvalidData("dataset has no areas".into()))?;
        let m = areas.len();
        if m <= p {
            return Err(Error::ModelSize { m, p });
        }
        let mut ids = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        let mut d = Vec::with_capacity(m);
        let mut x = Vec::with_capacity(m * p);
        for area in areas {
            if area.x.len() != p {
                return Err(Error::InvalidData(format!(
                    "area {}: {} covariates, expected {p}",
                    area.area_id,
                    area.x.len()
                )));
            }
            if !(area.y > 0.0 && area.y.is_finite()) {
                return Err(Error::InvalidData(format!("area {}: y = {} must be positive", area.area_id, area.y)));
            }
            if !(area.d > 0.0 && area.d.is_finite()) {
                return Err(Error::InvalidData(format!("area {}: D = {} must be positive", area.area_id, area.d)));
            }
            if area.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("area {}: non-finite covariate", area.area_id)));
            }
            ids.push(area.area_id);
            y.push(area.y);
            d.push(area.d);
            x.extend_from_slice(&area.x);
        }
        let ds = Dataset { ids, y, d, x, p };
        let dependent = ds.dependent_columns(&vec![1.0; m]);
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent });
        }
        Ok(ds)
    }

    /// Same design and variances with new responses.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.m() {
            return Err(Error::InvalidData(format!("{} responses for {} areas", y.len(), self.m())));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidData(format!("area {}: y = {v} must be positive", self.ids[i])));
        }
        Ok(Dataset { y, ..self.clone() })
    }

    /// Same design and responses with new sampling variances.
    pub fn with_d(&self, d: Vec<f64>) -> Result<Self> {
        if d.len() != self.m() || d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidData("sampling variances must be positive".into()));
        }
        Ok(Dataset { d, ..self.clone() })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn area(&self, i: usize) -> AreaObservation {
        AreaObservation { area_id: self.ids[i].clone(), y: self.y[i], x: self.x_row(i).to_vec(), d: self.d[i] }
    }

    pub fn areas(&self) -> Vec<AreaObservation> {
        (0..self.m()).map(|i| self.area(i)).collect()
    }

    /// `max D / min D`, a finite-ratio diagnostic for the sampling variances.
    pub fn d_ratio(&self) -> f64 {
        let max = self.d.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.d.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// `h(yⱼ, λ)` for every area.
    pub fn transformed(&self, t: &Transform) -> Vec<f64> {
        self.y.iter().map(|&y| t.h(y)).collect()
    }

    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|i| dot(self.x_row(i), beta)).collect()
    }

    /// Columns that are (numerically) linear combinations of earlier ones
    /// under the row weights `w`, found by modified Gram–Schmidt.
    fn dependent_columns(&self, w: &[f64]) -> Vec<usize> {
        let m = self.m();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut dependent = Vec::new();
        for j in 0..self.p {
            let mut col: Vec<f64> = (0..m).map(|i| self.x[i * self.p + j] * w[i].sqrt()).collect();
            let norm0 = norm(&col);
            for q in &basis {
                let proj = dot(q, &col);
                col.iter_mut().zip(q).for_each(|(c, qv)| *c -= proj * qv);
            }
            let norm1 = norm(&col);
            if norm0 == 0.0 || norm1 <= 1e-10 * norm0 {
                dependent.push(j);
            } else {
                basis.push(col.into_iter().map(|c| c / norm1).collect());
            }
        }
        dependent
    }
}

/// Weighted least-squares solution with its normal-matrix factorization.
pub(crate) struct GlsFit {
    pub beta: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GlsFit {
    /// `x'(Σ wⱼ xⱼxⱼ')^{-1} x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let s = self.chol.solve(&v);
        v.dot(&s)
    }

    /// `(Σ wⱼ xⱼxⱼ')^{-1} b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
    }
}

/// Solves `(Σ wⱼ xⱼxⱼ') β = Σ wⱼ xⱼ zⱼ` by Cholesky.
pub(crate) fn weighted_ls(ds: &Dataset, z: &[f64], w: &[f64]) -> Result<GlsFit> {
    let p = ds.p;
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for i in 0..ds.m() {
        let xi = ds.x_row(i);
        for r in 0..p {
            let wx = w[i] * xi[r];
            rhs[r] += wx * z[i];
            for c in 0..=r {
                normal[(r, c)] += wx * xi[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            normal[(c, r)] = normal[(r, c)];
        }
    }
    let chol = Cholesky::new(normal).ok_or_else(|| Error::RankDeficient { columns: ds.dependent_columns(w) })?;
    let beta = chol.solve(&rhs).as_slice().to_vec();
    Ok(GlsFit { beta, chol })
}

pub(crate) fn gls_with_h(ds: &Dataset, h: &[f64], a: f64) -> Result<GlsFit> {
    let w: Vec<f64> = ds.d.iter().map(|d| 1.0 / (a + d)).collect();
    weighted_ls(ds, h, &w)
}

/// GLS estimate `{Σ(A+Dⱼ)⁻¹ xⱼxⱼ'}⁻¹ Σ(A+Dⱼ)⁻¹ xⱼ h(yⱼ, λ)`.
pub fn gls_beta(ds: &Dataset, a: f64, t: &Transform) -> Result<Vec<f64>> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("A = {a} must be non-negative")));
    }
    let h = ds.transformed(t);
    Ok(gls_with_h(ds, &h, a)?.beta)
}

/// Log-likelihood up to the `−(m/2) log 2π` constant.
pub fn log_likelihood(ds: &Dataset, params: &ModelParams) -> Result<f64> {
    let t = Transform::dual_power(params.lambda)?;
    check_params(ds, params)?;
    let mut ll = 0.0;
    for i in 0..ds.m() {
        let v = params.a + ds.d[i];
        let r = t.h(ds.y[i]) - dot(ds.x_row(i), &params.beta);
        ll += -0.5 * v.ln() - 0.5 * r * r / v + t.log_jacobian(ds.y[i]);
    }
    Ok(ll)
}

/// `F(λ, A, β) = ∂L/∂λ = Σ h_yλ/h_y − Σ (A+Dⱼ)⁻¹ {h(yⱼ,λ) − xⱼ'β} h_λ(yⱼ,λ)`.
pub fn score_lambda(ds: &Dataset, params: &ModelParams, kind: TransformKind) -> Result<f64> {
    if kind == TransformKind::Log {
        return Err(Error::Unsupported("the λ-score needs a dual power transform"));
    }
    let t = Transform::dual_power(params.lambda)?;
    check_params(ds, params)?;
    let mut f = 0.0;
    for i in 0..ds.m() {
        let (h, ratio, h_lambda) = t.score_parts(ds.y[i]);
        let r = h - dot(ds.x_row(i), &params.beta);
        f += ratio - r * h_lambda / (params.a + ds.d[i]);
    }
    Ok(f)
}

fn check_params(ds: &Dataset, params: &ModelParams) -> Result<()> {
    if params.beta.len() != ds.p {
        return Err(Error::Domain(format!("beta has length {}, design has p = {}", params.beta.len(), ds.p)));
    }
    if !(params.a >= 0.0) {
        return Err(Error::Domain(format!("A = {} must be non-negative", params.a)));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
