//! Monte Carlo studies under the transformed Fay–Herriot model.
//!
//! Covariates are drawn once per scenario and frozen across replicates.
//! Random effects and sampling errors come from separate keyed streams, one
//! stream per replicate, so a replicate can be regenerated on its own and the
//! results do not depend on the number of worker threads. Changing only the
//! true λ of a scenario keeps its label and therefore its draws, which gives
//! common random numbers across a λ sweep.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_sig;
use crate::lambda::fit;
use crate::model::{dot, AreaObservation, Dataset, ModelParams};
use crate::mse::{g1, mse_estimate_sequential, BootstrapConfig, GForm};
use crate::prediction::{eblup, shrink};
use crate::rng::{label_id, Role, StreamKey};
use crate::transform::{Transform, TransformKind};
use crate::variance::{VarAStrategy, VarianceMethod};

/// Number of equally sized area groups; `Dᵢ` is constant within a group for
/// the built-in patterns.
pub const GROUPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DPattern {
    A,
    B,
    C,
    Explicit(Vec<f64>),
}

impl DPattern {
    pub fn group_values(&self) -> Option<[f64; GROUPS]> {
        match self {
            DPattern::A => Some([0.1, 0.2, 0.3, 0.4, 0.5]),
            DPattern::B => Some([0.1, 0.3, 0.5, 0.8, 1.0]),
            DPattern::C => Some([0.1, 0.4, 0.7, 1.1, 1.5]),
            DPattern::Explicit(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DPattern::A => "a",
            DPattern::B => "b",
            DPattern::C => "c",
            DPattern::Explicit(_) => "explicit",
        }
    }

    /// Sampling variances for `m` areas.
    pub fn values(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            DPattern::Explicit(d) if d.len() == m => Ok(d.clone()),
            DPattern::Explicit(d) => Err(Error::Domain(format!("explicit D list has {} entries for m = {m}", d.len()))),
            _ if !m.is_multiple_of(GROUPS) || m == 0 => {
                Err(Error::Domain(format!("m = {m} is not a positive multiple of {GROUPS}")))
            }
            _ => {
                let g = self.group_values().expect("built-in pattern");
                Ok((0..m).map(|i| g[group_of(i, m)]).collect())
            }
        }
    }
}

/// Group index of area `i` among `m` areas.
pub fn group_of(i: usize, m: usize) -> usize {
    i * GROUPS / m
}

/// Distribution of the random effect, always with mean zero and variance `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectLaw {
    #[default]
    Normal,
    /// Laplace with scale `b = √(A/2)`.
    DoubleExponential,
    /// `E − √A` with `E ~ Exponential(scale √A)`.
    LocationExponential,
}

impl EffectLaw {
    pub fn sample<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        match self {
            EffectLaw::Normal => a.sqrt() * rng.sample::<f64, _>(StandardNormal),
            EffectLaw::DoubleExponential => {
                let b = (0.5 * a).sqrt();
                let e: f64 = rng.sample(Exp::new(1.0).expect("unit rate"));
                if rng.random::<bool>() {
                    b * e
                } else {
                    -b * e
                }
            }
            EffectLaw::LocationExponential => {
                let s = a.sqrt();
                s * rng.sample::<f64, _>(Exp::new(1.0).expect("unit rate")) - s
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EffectLaw::Normal => "normal",
            EffectLaw::DoubleExponential => "double_exponential",
            EffectLaw::LocationExponential => "location_exponential",
        }
    }
}

/// Which study a scenario file asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    #[default]
    Estimation,
    ZeroEstimates,
    TrueMse,
    MseEstimator,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Estimation => "estimation",
            StudyKind::ZeroEstimates => "zero_estimates",
            StudyKind::TrueMse => "true_mse",
            StudyKind::MseEstimator => "mse_estimator",
        }
    }
}

fn default_methods() -> Vec<VarianceMethod> {
    VarianceMethod::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_bootstrap() -> usize {
    300
}

fn default_truth_replicates() -> usize {
    10_000
}

fn default_mse_method() -> VarianceMethod {
    VarianceMethod::REML
}

fn default_zero_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Scenario label; selects the random streams together with `seed`.
    pub label: String,
    #[serde(default)]
    pub study: StudyKind,
    pub m: usize,
    pub d_pattern: DPattern,
    /// True `(β, A, λ)`. `β` has length `p`; its first entry multiplies the
    /// intercept and the remaining ones standard normal covariates.
    pub true_params: ModelParams,
    #[serde(default)]
    pub effect_law: EffectLaw,
    pub n_replicates: usize,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Dual-power estimators run by the estimation studies.
    #[serde(default = "default_methods")]
    pub methods: Vec<VarianceMethod>,
    /// Also fit the log model by ML.
    #[serde(default = "default_true")]
    pub include_log: bool,
    /// Estimator of `A` used by the MSE studies.
    #[serde(default = "default_mse_method")]
    pub mse_method: VarianceMethod,
    /// Replicates for the true MSE that the MSE-estimator study compares to.
    #[serde(default = "default_truth_replicates")]
    pub n_truth_replicates: usize,
    /// True λ values of the zero-estimate sweep.
    #[serde(default = "default_zero_grid")]
    pub zero_grid: Vec<f64>,
    #[serde(default)]
    pub g_form: GForm,
}

impl ScenarioConfig {
    /// A scenario with the defaults of the estimation study.
    pub fn new(
        label: &str,
        m: usize,
        d_pattern: DPattern,
        true_params: ModelParams,
        n_replicates: usize,
        seed: u64,
    ) -> Self {
        ScenarioConfig {
            label: label.to_string(),
            study: StudyKind::Estimation,
            m,
            d_pattern,
            true_params,
            effect_law: EffectLaw::Normal,
            n_replicates,
            n_bootstrap: default_bootstrap(),
            seed,
            methods: default_methods(),
            include_log: true,
            mse_method: default_mse_method(),
            n_truth_replicates: default_truth_replicates(),
            zero_grid: default_zero_grid(),
            g_form: GForm::Printed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.d_pattern.values(self.m)?;
        let p = self.true_params.beta.len();
        if p == 0 || self.m <= p {
            return Err(Error::ModelSize { m: self.m, p });
        }
        if !(self.true_params.a >= 0.0) {
            return Err(Error::Domain(format!("true A = {} is negative", self.true_params.a)));
        }
        Transform::dual_power(self.true_params.lambda)?;
        for &l in &self.zero_grid {
            Transform::dual_power(l)?;
        }
        if self.n_replicates == 0 {
            return Err(Error::Domain("n_replicates must be positive".into()));
        }
        Ok(())
    }

    /// `<study>_<pattern>_<lambda>`, the stem of the report file name.
    pub fn file_stem(&self) -> String {
        let lambda = match self.study {
            StudyKind::ZeroEstimates => "sweep".to_string(),
            _ => format!("{}", self.true_params.lambda),
        };
        format!("{}_{}_{}", self.study.name(), self.d_pattern.name(), lambda)
    }

    fn key(&self, role: Role) -> StreamKey {
        StreamKey::new(self.seed, label_id(&self.label), role)
    }

    /// Rows `xᵢ = (1, zᵢ₁, …)` with `zᵢⱼ ~ N(0,1)`, identical for every
    /// replicate of the scenario.
    pub fn covariates(&self) -> Vec<Vec<f64>> {
        let p = self.true_params.beta.len();
        let mut rng = self.key(Role::Covariates).stream(0);
        (0..self.m)
            .map(|_| {
                let mut row = vec![1.0];
                row.extend((1..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
                row
            })
            .collect()
    }
}

/// Frozen parts of a scenario shared by all replicates.
struct Design {
    x: Vec<Vec<f64>>,
    d: Vec<f64>,
    mean: Vec<f64>,
}

impl Design {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let x = cfg.covariates();
        let mean = x.iter().map(|r| dot(r, &cfg.true_params.beta)).collect();
        Ok(Design { x, d: cfg.d_pattern.values(cfg.m)?, mean })
    }
}

/// Transformed-scale draws `(vᵢ, εᵢ)` of replicate `rep`.
fn draws(cfg: &ScenarioConfig, d: &[f64], rep: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rv = cfg.key(Role::RandomEffect).stream(rep as u64);
    let mut re = cfg.key(Role::SamplingError).stream(rep as u64);
    let v = (0..cfg.m).map(|_| cfg.effect_law.sample(cfg.true_params.a, &mut rv)).collect();
    let e = d.iter().map(|d| d.sqrt() * re.sample::<f64, _>(StandardNormal)).collect();
    (v, e)
}

fn build(cfg: &ScenarioConfig, design: &Design, rep: usize) -> Result<Dataset> {
    let t = Transform::dual_power(cfg.true_params.lambda)?;
    let (v, e) = draws(cfg, &design.d, rep);
    let areas = (0..cfg.m)
        .map(|i| AreaObservation {
            area_id: format!("{}", i + 1),
            y: t.inverse(design.mean[i] + v[i] + e[i]),
            x: design.x[i].clone(),
            d: design.d[i],
        })
        .collect();
    Dataset::new(areas)
}

/// Replicate `rep` of the scenario: `yᵢ = h⁻¹(xᵢ'β + vᵢ + εᵢ, λ)`.
pub fn generate_replicate(cfg: &ScenarioConfig, rep: usize) -> Result<Dataset> {
    let design = Design::new(cfg)?;
    build(cfg, &design, rep)
}

/// Mean and replicate standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { f64::NAN };
        Summary { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationCell {
    /// `ML`, `REML`, `FH`, `PR`, or `log`.
    pub estimator: String,
    pub lambda: Summary,
    pub a: Summary,
    pub beta: Vec<Summary>,
    /// Percentage of converged replicates with `Â = 0`.
    pub zero_pct: f64,
    pub n_converged: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub cells: Vec<EstimationCell>,
}

impl EstimationReport {
    pub fn cell(&self, estimator: &str) -> Option<&EstimationCell> {
        self.cells.iter().find(|c| c.estimator == estimator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroRow {
    pub lambda: f64,
    pub estimator: String,
    pub zero_pct: f64,
    pub n_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroReport {
    pub rows: Vec<ZeroRow>,
}

impl ZeroReport {
    /// Zero percentages of `estimator` in grid order.
    pub fn series(&self, estimator: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.estimator == estimator).map(|r| (r.lambda, r.zero_pct)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMse {
    pub group: usize,
    pub d: f64,
    pub mse_eblup: f64,
    pub mse_direct: f64,
    /// `100 (MSE_DP − MSE_EBLUP) / MSE_DP`
    pub gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMseReport {
    pub groups: Vec<GroupMse>,
    pub area_mse_eblup: Vec<f64>,
    pub area_mse_direct: Vec<f64>,
    pub n_converged: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub group: usize,
    pub d: f64,
    pub mean_estimate: f64,
    pub true_mse: f64,
    /// `100 (E[MSE estimate] − MSE) / MSE`
    pub rel_bias_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseEstimatorReport {
    pub groups: Vec<GroupBias>,
    pub n_used: usize,
    pub n_failed: usize,
    /// Datasets whose bootstrap lost more than 5% of its replicates.
    pub n_unreliable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyResult {
    Estimation(EstimationReport),
    ZeroEstimates(ZeroReport),
    TrueMse(TrueMseReport),
    MseEstimator(MseEstimatorReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: ScenarioConfig,
    pub result: StudyResult,
    /// Not serialized, so report files stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl StudyReport {
    /// Writes one CSV row per table cell; numbers carry 6 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let s = &self.scenario;
        let prefix = [s.study.name().to_string(), s.d_pattern.name().to_string(), s.effect_law.name().to_string()];
        match &self.result {
            StudyResult::Estimation(r) => {
                w.write_record([
                    "study",
                    "pattern",
                    "law",
                    "true_lambda",
                    "estimator",
                    "parameter",
                    "mean",
                    "sd",
                    "n",
                ])?;
                for c in &r.cells {
                    let mut rows = vec![("lambda".to_string(), c.lambda), ("A".to_string(), c.a)];
                    rows.extend(c.beta.iter().enumerate().map(|(k, b)| (format!("beta{}", k + 1), *b)));
                    rows.push(("zero_pct".to_string(), Summary { mean: c.zero_pct, sd: f64::NAN }));
                    for (name, v) in rows {
                        w.write_record(prefix.iter().cloned().chain([
                            format_sig(s.true_params.lambda),
                            c.estimator.clone(),
                            name,
                            format_sig(v.mean),
                            format_sig(v.sd),
                            c.n_converged.to_string(),
                        ]))?;
                    }
                }
            }
            StudyResult::ZeroEstimates(r) => {
                w.write_record(["study", "pattern", "law", "true_lambda", "estimator", "zero_pct", "n"])?;
                for row in &r.rows {
                    w.write_record(prefix.iter().cloned().chain([
                        format_sig(row.lambda),
                        row.estimator.clone(),
                        format_sig(row.zero_pct),
                        row.n_converged.to_string(),
                    ]))?;
                }
            }
            StudyResult::TrueMse(r) => {
                w.write_record([
                    "study",
                    "pattern",
                    "law",
                    "true_lambda",
                    "group",
                    "D",
                    "mse_eblup_x100",
                    "mse_direct_x100",
                    "gain_pct",
                ])?;
                for g in &r.groups {
                    w.write_record(prefix.iter().cloned().chain([
                        format_sig(s.true_params.lambda),
                        format!("G{}", g.group + 1),
                        format_sig(g.d),
                        format_sig(100.0 * g.mse_eblup),
                        format_sig(100.0 * g.mse_direct),
                        format_sig(g.gain_pct),
                    ]))?;
                }
            }
            StudyResult::MseEstimator(r) => {
                w.write_record([
                    "study",
                    "pattern",
                    "law",
                    "true_lambda",
                    "group",
                    "D",
                    "estimate_x100",
                    "true_mse_x100",
                    "rel_bias_pct",
                ])?;
                for g in &r.groups {
                    w.write_record(prefix.iter().cloned().chain([
                        format_sig(s.true_params.lambda),
                        format!("G{}", g.group + 1),
                        format_sig(g.d),
                        format_sig(100.0 * g.mean_estimate),
                        format_sig(100.0 * g.true_mse),
                        format_sig(g.rel_bias_pct),
                    ]))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the study named in `cfg.study`.
pub fn run(cfg: &ScenarioConfig) -> Result<StudyReport> {
    let start = Instant::now();
    let result = match cfg.study {
        StudyKind::Estimation => StudyResult::Estimation(run_estimation_study(cfg)?),
        StudyKind::ZeroEstimates => StudyResult::ZeroEstimates(run_zero_estimate_sweep(cfg)?),
        StudyKind::TrueMse => StudyResult::TrueMse(run_true_mse_study(cfg)?),
        StudyKind::MseEstimator => {
            let truth_cfg = ScenarioConfig { n_replicates: cfg.n_truth_replicates, ..cfg.clone() };
            let truth = run_true_mse_study(&truth_cfg)?;
            StudyResult::MseEstimator(run_mse_estimator_study(cfg, &truth)?)
        }
    };
    Ok(StudyReport { scenario: cfg.clone(), result, wall_clock_secs: start.elapsed().as_secs_f64() })
}

type Estimate = Option<(f64, f64, Vec<f64>)>;

/// Fits every configured estimator, plus the log model by ML, to each
/// replicate and summarizes `λ̂`, `Â`, `β̂` by mean and replicate sd.
/// Non-converged fits are counted and left out of the summaries.
pub fn run_estimation_study(cfg: &ScenarioConfig) -> Result<EstimationReport> {
    let design = Design::new(cfg)?;
    let mut estimators: Vec<(String, VarianceMethod, TransformKind)> =
        cfg.methods.iter().map(|&m| (m.name().to_string(), m, TransformKind::DualPower)).collect();
    if cfg.include_log {
        estimators.push(("log".to_string(), VarianceMethod::ML, TransformKind::Log));
    }
    let per_rep: Vec<Vec<Estimate>> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let ds = build(cfg, &design, rep).ok();
            estimators
                .iter()
                .map(|&(_, method, kind)| {
                    let f = fit(ds.as_ref()?, method, kind).ok().filter(|f| f.converged)?;
                    Some((f.params.lambda, f.params.a, f.params.beta))
                })
                .collect()
        })
        .collect();

    let p = cfg.true_params.beta.len();
    let cells = estimators
        .iter()
        .enumerate()
        .map(|(k, (name, _, _))| {
            let ok: Vec<&(f64, f64, Vec<f64>)> = per_rep.iter().filter_map(|r| r[k].as_ref()).collect();
            let lambdas: Vec<f64> = ok.iter().map(|e| e.0).collect();
            let a: Vec<f64> = ok.iter().map(|e| e.1).collect();
            let zeros = a.iter().filter(|&&a| a == 0.0).count();
            EstimationCell {
                estimator: name.clone(),
                lambda: Summary::of(&lambdas),
                a: Summary::of(&a),
                beta: (0..p).map(|j| Summary::of(&ok.iter().map(|e| e.2[j]).collect::<Vec<_>>())).collect(),
                zero_pct: 100.0 * zeros as f64 / ok.len().max(1) as f64,
                n_converged: ok.len(),
                n_failed: cfg.n_replicates - ok.len(),
            }
        })
        .collect();
    Ok(EstimationReport { cells })
}

/// Percentage of zero estimates of `A` for each true λ in `cfg.zero_grid`.
pub fn run_zero_estimate_sweep(cfg: &ScenarioConfig) -> Result<ZeroReport> {
    let mut rows = Vec::new();
    for &lambda in &cfg.zero_grid {
        let point = ScenarioConfig { true_params: ModelParams { lambda, ..cfg.true_params.clone() }, ..cfg.clone() };
        let report = run_estimation_study(&point)?;
        rows.extend(report.cells.into_iter().map(|c| ZeroRow {
            lambda,
            estimator: c.estimator,
            zero_pct: c.zero_pct,
            n_converged: c.n_converged,
        }));
    }
    Ok(ZeroReport { rows })
}

fn group_means(cfg: &ScenarioConfig, values: &[f64]) -> Vec<f64> {
    let mut sum = [0.0; GROUPS];
    let mut count = [0usize; GROUPS];
    for (i, v) in values.iter().enumerate() {
        sum[group_of(i, cfg.m)] += v;
        count[group_of(i, cfg.m)] += 1;
    }
    (0..GROUPS).map(|g| sum[g] / count[g] as f64).collect()
}

/// `Dᵢ` of the first area of every group.
fn group_d(cfg: &ScenarioConfig, d: &[f64]) -> Vec<f64> {
    (0..GROUPS).map(|g| d[(0..cfg.m).find(|&i| group_of(i, cfg.m) == g).unwrap_or(0)]).collect()
}

/// True MSE of the EBLUP and of the direct predictor `h(yᵢ, λ̂)` by
///
/// ```text
/// MSE ≈ S⁻¹ Σₛ (η̂ᵢ⁽ˢ⁾ − η̂ᵢᴮ⁽ˢ⁾)² + A Dᵢ/(A + Dᵢ)
/// ```
///
/// where `η̂ᴮ` is the best predictor at the true parameters.
pub fn run_true_mse_study(cfg: &ScenarioConfig) -> Result<TrueMseReport> {
    let design = Design::new(cfg)?;
    let truth = &cfg.true_params;
    let t_true = Transform::dual_power(truth.lambda)?;
    let per_rep: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let ds = build(cfg, &design, rep).ok()?;
            let f = fit(&ds, cfg.mse_method, TransformKind::DualPower).ok().filter(|f| f.converged)?;
            let pred = eblup(&ds, &f).ok()?;
            let mut eb = Vec::with_capacity(cfg.m);
            let mut dp = Vec::with_capacity(cfg.m);
            for (i, p) in pred.iter().enumerate() {
                let best = shrink(design.mean[i], t_true.h(ds.y()[i]), truth.a, design.d[i]);
                eb.push((p.eta_hat - best) * (p.eta_hat - best));
                dp.push((p.h_direct - best) * (p.h_direct - best));
            }
            Some((eb, dp))
        })
        .collect();

    let mut eb_sum = vec![0.0; cfg.m];
    let mut dp_sum = vec![0.0; cfg.m];
    let mut n = 0usize;
    for (eb, dp) in per_rep.iter().flatten() {
        n += 1;
        for i in 0..cfg.m {
            eb_sum[i] += eb[i];
            dp_sum[i] += dp[i];
        }
    }
    if n == 0 {
        return Err(Error::NotConverged("no replicate produced a converged fit".into()));
    }
    let leading: Vec<f64> = design.d.iter().map(|&d| g1(truth.a, d)).collect();
    let area_mse_eblup: Vec<f64> = (0..cfg.m).map(|i| eb_sum[i] / n as f64 + leading[i]).collect();
    let area_mse_direct: Vec<f64> = (0..cfg.m).map(|i| dp_sum[i] / n as f64 + leading[i]).collect();
    let eb_g = group_means(cfg, &area_mse_eblup);
    let dp_g = group_means(cfg, &area_mse_direct);
    let d_g = group_d(cfg, &design.d);
    let groups = (0..GROUPS)
        .map(|g| GroupMse {
            group: g,
            d: d_g[g],
            mse_eblup: eb_g[g],
            mse_direct: dp_g[g],
            gain_pct: 100.0 * (dp_g[g] - eb_g[g]) / dp_g[g],
        })
        .collect();
    Ok(TrueMseReport { groups, area_mse_eblup, area_mse_direct, n_converged: n, n_failed: cfg.n_replicates - n })
}

/// Average of the bootstrap MSE estimate over `cfg.n_replicates` datasets
/// with `cfg.n_bootstrap` replicates each, compared with `truth`.
pub fn run_mse_estimator_study(cfg: &ScenarioConfig, truth: &TrueMseReport) -> Result<MseEstimatorReport> {
    let design = Design::new(cfg)?;
    if truth.area_mse_eblup.len() != cfg.m {
        return Err(Error::Domain("true MSE report has a different number of areas".into()));
    }
    let per_rep: Vec<Option<(Vec<f64>, bool)>> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let ds = build(cfg, &design, rep).ok()?;
            let f = fit(&ds, cfg.mse_method, TransformKind::DualPower).ok().filter(|f| f.converged)?;
            let boot = BootstrapConfig {
                b: cfg.n_bootstrap,
                seed: cfg.seed ^ (rep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                g1_refit_lambda: true,
                g_form: cfg.g_form,
                var_a: VarAStrategy::Asymptotic,
            };
            let report = mse_estimate_sequential(&ds, &f, &boot).ok()?;
            Some((report.areas.iter().map(|a| a.total).collect(), report.unreliable))
        })
        .collect();

    let mut sum = vec![0.0; cfg.m];
    let mut n = 0usize;
    let mut unreliable = 0usize;
    for (est, flag) in per_rep.iter().flatten() {
        n += 1;
        unreliable += *flag as usize;
        for i in 0..cfg.m {
            sum[i] += est[i];
        }
    }
    if n == 0 {
        return Err(Error::NotConverged("no dataset produced an MSE estimate".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let est_g = group_means(cfg, &mean);
    let d_g = group_d(cfg, &design.d);
    let groups = (0..GROUPS)
        .map(|g| GroupBias {
            group: g,
            d: d_g[g],
            mean_estimate: est_g[g],
            true_mse: truth.groups[g].mse_eblup,
            rel_bias_pct: 100.0 * (est_g[g] - truth.groups[g].mse_eblup) / truth.groups[g].mse_eblup,
        })
        .collect();
    Ok(MseEstimatorReport { groups, n_used: n, n_failed: cfg.n_replicates - n, n_unreliable: unreliable })
}
