//! Dual power transformation `h(y, λ) = (y^λ − y^{−λ}) / 2λ` and its log limit.
//!
//! Writing `L = log y` and `u = λL`, the family is `h = sinh(u)/λ = L·sinh(u)/u`,
//! which makes every quantity an entire function of `u`. All evaluations go through
//! that form: closed expressions for moderate `|u|` and Taylor series near `u = 0`,
//! so the `λ → 0` limit (`h → log y`) is reached without a `0/0`.
//!
//! The map is a bijection from `(0, ∞)` onto `ℝ` for every `λ ≥ 0`, with inverse
//! `y = (λz + √(λ²z² + 1))^{1/λ} = exp(asinh(λz)/λ)`.
//!
//! The Box–Cox family `(y^λ − 1)/λ` is deliberately absent: its range is bounded
//! below by `−1/λ` for `λ > 0`, so a normal model on the transformed scale cannot
//! hold and the likelihood estimator of `λ` is not consistent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;

/// Below this value a dual power transform is evaluated by its `λ → 0` limit.
pub const LAMBDA_EPS: f64 = 1e-8;

/// Upper end of the admissible transformation parameter range.
pub const LAMBDA_MAX: f64 = 10.0;

/// Below this `|u| = |λ log y|` the series expansions are used.
const SERIES_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    DualPower,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    kind: TransformKind,
    lambda: f64,
}

/// Value of `h` and its partial derivatives at one point `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformDerivatives {
    pub h: f64,
    pub h_y: f64,
    pub h_lambda: f64,
    pub h_lambda_lambda: f64,
    pub h_y_lambda: f64,
    /// `d/dλ (h_yλ / h_y)`.
    pub d_score_term: f64,
}

/// Gauss–Hermite estimates of the four moments required to be bounded when
/// `h(y, λ)` is normally distributed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    /// `E[h² h_λ²]`
    pub h2_hl2: f64,
    /// `E[h_λ²]`
    pub hl2: f64,
    /// `E[|h_λλ|]`
    pub abs_hll: f64,
    /// `E[|d/dλ (h_yλ/h_y)|]`
    pub abs_d_score: f64,
    /// Set when an integrand evaluated to a non-finite number.
    pub violation: Option<String>,
}

impl IntegrabilityReport {
    pub fn all_finite(&self) -> bool {
        self.violation.is_none()
            && [self.h2_hl2, self.hl2, self.abs_hll, self.abs_d_score].iter().all(|v| v.is_finite())
    }
}

impl Transform {
    pub fn dual_power(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || !(0.0..=LAMBDA_MAX).contains(&lambda) {
            return Err(Error::Domain(format!("lambda = {lambda} outside [0, {LAMBDA_MAX}]")));
        }
        Ok(Transform { kind: TransformKind::DualPower, lambda })
    }

    pub fn log() -> Self {
        Transform { kind: TransformKind::Log, lambda: 0.0 }
    }

    /// Builds a transform of the given kind; `lambda` is ignored for `Log`.
    pub fn new(kind: TransformKind, lambda: f64) -> Result<Self> {
        match kind {
            TransformKind::DualPower => Self::dual_power(lambda),
            TransformKind::Log => Ok(Self::log()),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// λ used in the formulas: zero for the log kind and below [`LAMBDA_EPS`].
    fn effective_lambda(&self) -> f64 {
        match self.kind {
            TransformKind::Log => 0.0,
            TransformKind::DualPower if self.lambda < LAMBDA_EPS => 0.0,
            TransformKind::DualPower => self.lambda,
        }
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        check_positive(y)?;
        Ok(self.h(y))
    }

    /// `h(y, λ)` without the domain check; `y` must be positive.
    #[inline]
    pub fn h(&self, y: f64) -> f64 {
        let log_y = y.ln();
        let lambda = self.effective_lambda();
        log_y * sinhc(lambda * log_y)
    }

    /// `h^{-1}(z, λ)`, computed as `exp(asinh(λz)/λ)` so that small λ with
    /// large `|z|` does not overflow an intermediate power.
    pub fn inverse(&self, z: f64) -> f64 {
        self.inverse_log(z).exp()
    }

    /// `log h^{-1}(z, λ)`.
    pub fn inverse_log(&self, z: f64) -> f64 {
        let lambda = self.effective_lambda();
        if lambda == 0.0 {
            z
        } else {
            (lambda * z).asinh() / lambda
        }
    }

    pub fn derivatives(&self, y: f64) -> Result<TransformDerivatives> {
        check_positive(y)?;
        Ok(self.derivatives_unchecked(y))
    }

    pub(crate) fn derivatives_unchecked(&self, y: f64) -> TransformDerivatives {
        let log_y = y.ln();
        if self.kind == TransformKind::Log {
            return TransformDerivatives {
                h: log_y,
                h_y: 1.0 / y,
                h_lambda: 0.0,
                h_lambda_lambda: 0.0,
                h_y_lambda: 0.0,
                d_score_term: 0.0,
            };
        }
        let lambda = self.effective_lambda();
        let u = lambda * log_y;
        let (sinh_u, cosh_u) = (u.sinh(), u.cosh());
        let l2 = log_y * log_y;
        TransformDerivatives {
            h: log_y * sinhc(u),
            h_y: cosh_u / y,
            h_lambda: l2 * q(u),
            h_lambda_lambda: l2 * log_y * q_prime(u),
            h_y_lambda: log_y * sinh_u / y,
            d_score_term: l2 / (cosh_u * cosh_u),
        }
    }

    /// `∂h/∂λ` alone; zero for the log kind.
    #[inline]
    pub fn h_lambda(&self, y: f64) -> f64 {
        if self.kind == TransformKind::Log {
            return 0.0;
        }
        let log_y = y.ln();
        log_y * log_y * q(self.effective_lambda() * log_y)
    }

    /// `(h, h_yλ/h_y, h_λ)` at `y`, the three quantities the λ-score needs.
    #[inline]
    pub(crate) fn score_parts(&self, y: f64) -> (f64, f64, f64) {
        let log_y = y.ln();
        if self.kind == TransformKind::Log {
            return (log_y, 0.0, 0.0);
        }
        let u = self.effective_lambda() * log_y;
        (log_y * sinhc(u), log_y * u.tanh(), log_y * log_y * q(u))
    }

    /// `log h_y(y, λ)`.
    #[inline]
    pub(crate) fn log_jacobian(&self, y: f64) -> f64 {
        let log_y = y.ln();
        let u = self.effective_lambda() * log_y;
        log_cosh(u) - log_y
    }

    /// Evaluates the four integrability moments by Gauss–Hermite quadrature
    /// over `z = h(y, λ) ~ N(mu, sigma2)`.
    pub fn check_integrability(&self, mu: f64, sigma2: f64, n_quad: usize) -> Result<IntegrabilityReport> {
        if n_quad < 16 {
            return Err(Error::Domain(format!("n_quad = {n_quad} < 16")));
        }
        if !(sigma2 > 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!("need finite mu and sigma2 > 0, got ({mu}, {sigma2})")));
        }
        let rule = GaussHermite::new(n_quad);
        let mut violation = None;
        let mut moments = [0.0f64; 4];
        for (z, w) in rule.normal_points(mu, sigma2) {
            let y = self.inverse(z);
            let d = if y > 0.0 && y.is_finite() {
                self.derivatives_unchecked(y)
            } else {
                violation.get_or_insert_with(|| format!("inverse({z}) = {y} is not a positive finite number"));
                continue;
            };
            let terms = [
                d.h * d.h * d.h_lambda * d.h_lambda,
                d.h_lambda * d.h_lambda,
                d.h_lambda_lambda.abs(),
                d.d_score_term.abs(),
            ];
            if terms.iter().any(|t| !t.is_finite()) {
                violation.get_or_insert_with(|| format!("non-finite integrand at z = {z}"));
                continue;
            }
            for (acc, t) in moments.iter_mut().zip(terms) {
                *acc += w * t;
            }
        }
        Ok(IntegrabilityReport {
            h2_hl2: moments[0],
            hl2: moments[1],
            abs_hll: moments[2],
            abs_d_score: moments[3],
            violation,
        })
    }
}

fn check_positive(y: f64) -> Result<()> {
    if y > 0.0 && y.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("y = {y} must be positive and finite")))
    }
}

/// `sinh(u)/u`
#[inline]
fn sinhc(u: f64) -> f64 {
    if u.abs() < SERIES_CUTOFF {
        // Σ u^{2k}/(2k+1)!
        let u2 = u * u;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=8 {
            term *= u2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += term;
        }
        sum
    } else {
        u.sinh() / u
    }
}

/// `(u cosh u − sinh u)/u²`, so that `h_λ = (log y)² q(λ log y)`.
#[inline]
fn q(u: f64) -> f64 {
    if u.abs() < SERIES_CUTOFF {
        // Σ_{k≥1} 2k u^{2k−1}/(2k+1)!
        let u2 = u * u;
        let mut pow_fact = u / 6.0; // u^{1}/3!
        let mut sum = 2.0 * pow_fact;
        for k in 2..=9 {
            pow_fact *= u2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += (2 * k) as f64 * pow_fact;
        }
        sum
    } else {
        (u * u.cosh() - u.sinh()) / (u * u)
    }
}

/// `q'(u)`, so that `h_λλ = (log y)³ q'(λ log y)`.
#[inline]
fn q_prime(u: f64) -> f64 {
    if u.abs() < SERIES_CUTOFF {
        // Σ_{k≥1} 2k(2k−1) u^{2k−2}/(2k+1)!
        let u2 = u * u;
        let mut pow_fact = 1.0 / 6.0;
        let mut sum = 2.0 * pow_fact;
        for k in 2..=9 {
            pow_fact *= u2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += ((2 * k) * (2 * k - 1)) as f64 * pow_fact;
        }
        sum
    } else {
        sinhc(u) - 2.0 * q(u) / u
    }
}

#[inline]
fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    // log cosh a = a + log1p(e^{−2a}) − log 2
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
