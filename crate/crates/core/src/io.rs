//! CSV input and output, run settings, and iterative estimation of the
//! sampling variances from historical panels.
//!
//! Area files have the header `area_id,y,D,x1,...,xp`; panel files are long
//! format `area_id,t,y`. Both are UTF-8 with a header row and `.` as the
//! decimal separator.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::{fit, fit_fixed_lambda, FitResult};
use crate::model::{AreaObservation, Dataset};
use crate::transform::{Transform, TransformKind};
use crate::variance::VarianceMethod;

/// `x` with 6 significant digits, trailing zeros removed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("exponent form");
    let exp: i32 = e.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_f64(field: Option<&str>, name: &str, line: usize) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse { line, message: format!("missing field {name}") })?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse { line, message: format!("{name}: cannot parse {raw:?} as a number") })
}

fn line_of(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        csv_error(e)
    }
}

/// Reads an area file. With `add_intercept` a constant column is placed
/// before `x1`.
pub fn read_dataset<R: Read>(input: R, add_intercept: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 3 || names[0] != "area_id" || names[1] != "y" || names[2] != "D" {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with area_id,y,D; found {}", names.join(",")),
        });
    }
    let p_file = names.len() - 3;
    let mut areas = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record, k + 2);
        let mut x = Vec::with_capacity(p_file + 1);
        if add_intercept {
            x.push(1.0);
        }
        for j in 0..p_file {
            x.push(parse_f64(record.get(3 + j), names[3 + j], line)?);
        }
        let obs = AreaObservation {
            area_id: record.get(0).unwrap_or_default().trim().to_string(),
            y: parse_f64(record.get(1), "y", line)?,
            x,
            d: parse_f64(record.get(2), "D", line)?,
        };
        if !(obs.y > 0.0) {
            return Err(Error::Parse { line, message: format!("y = {} must be positive", obs.y) });
        }
        if !(obs.d > 0.0) {
            return Err(Error::Parse { line, message: format!("D = {} must be positive", obs.d) });
        }
        areas.push(obs);
    }
    Dataset::new(areas)
}

/// Writes an area file with every number at full precision, so that
/// [`read_dataset`] returns an identical dataset.
pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["area_id".to_string(), "y".into(), "D".into()];
    header.extend((1..=ds.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..ds.m() {
        let mut row = vec![ds.ids()[i].clone(), format!("{:?}", ds.y()[i]), format!("{:?}", ds.d()[i])];
        row.extend(ds.x_row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Past values of one area, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalPanel {
    pub area_id: String,
    pub y_history: Vec<f64>,
}

/// Shortest accepted history.
pub const MIN_HISTORY: usize = 3;

impl HistoricalPanel {
    pub fn new(area_id: String, y_history: Vec<f64>) -> Result<Self> {
        if y_history.len() < MIN_HISTORY {
            return Err(Error::InvalidData(format!(
                "area {area_id}: history has {} values, at least {MIN_HISTORY} required",
                y_history.len()
            )));
        }
        if let Some(v) = y_history.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidData(format!("area {area_id}: history value {v} is not positive")));
        }
        Ok(HistoricalPanel { area_id, y_history })
    }

    /// Sample variance (divisor `T − 1`) of the transformed history.
    pub fn transformed_variance(&self, t: &Transform) -> f64 {
        let h: Vec<f64> = self.y_history.iter().map(|&y| t.h(y)).collect();
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    }
}

/// Reads a long-format panel file `area_id,t,y`. Areas keep the order of
/// their first appearance; each history is sorted by `t`.
pub fn read_panels<R: Read>(input: R) -> Result<Vec<HistoricalPanel>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["area_id", "t", "y"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("panel header must be area_id,t,y; found {}", names.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<(f64, f64)>> = Default::default();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record, k + 2);
        let id = record.get(0).unwrap_or_default().trim().to_string();
        let t = parse_f64(record.get(1), "t", line)?;
        let y = parse_f64(record.get(2), "y", line)?;
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, y));
    }
    order
        .into_iter()
        .map(|id| {
            let mut v = rows.remove(&id).expect("recorded id");
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            HistoricalPanel::new(id, v.into_iter().map(|(_, y)| y).collect())
        })
        .collect()
}

/// Settings shared by the command-line subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimator: VarianceMethod,
    pub transform: TransformKind,
    pub bootstrap_b: usize,
    pub seed: u64,
    pub d_iteration_tol: f64,
    pub d_max_iterations: usize,
    /// Skip λ estimation and use this value.
    pub fixed_lambda: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            estimator: VarianceMethod::REML,
            transform: TransformKind::DualPower,
            bootstrap_b: 1000,
            seed: 1,
            d_iteration_tol: 1e-4,
            d_max_iterations: 50,
            fixed_lambda: None,
        }
    }
}

impl RunConfig {
    /// Fit under these settings.
    pub fn fit(&self, ds: &Dataset) -> Result<FitResult> {
        match self.fixed_lambda {
            Some(l) => fit_fixed_lambda(ds, self.estimator, self.transform, l),
            None => fit(ds, self.estimator, self.transform),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DIteration {
    /// Final sampling variances in the order of the dataset.
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    /// `λ̂⁽ᵏ⁾` of every step.
    pub lambda_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Correlations between the transformed histories of every pair of
    /// areas at the last λ̂; present when all histories have equal length.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub mean_abs_correlation: Option<f64>,
}

/// Iterates `D⁽ᵏ⁺¹⁾ = Var_t h(y_it, λ̂⁽ᵏ⁾)` starting from the sample
/// variances of the log history, where `λ̂⁽ᵏ⁾` is fitted on `current` with
/// `D⁽ᵏ⁾`. Stops when the largest relative change falls below
/// `cfg.d_iteration_tol`; after `cfg.d_max_iterations` steps the last iterate
/// is returned with `converged = false`.
pub fn estimate_d_iterative(panels: &[HistoricalPanel], current: &Dataset, cfg: &RunConfig) -> Result<DIteration> {
    let ordered: Vec<&HistoricalPanel> = current
        .ids()
        .iter()
        .map(|id| {
            panels
                .iter()
                .find(|p| &p.area_id == id)
                .ok_or_else(|| Error::InvalidData(format!("no history for area {id}")))
        })
        .collect::<Result<_>>()?;
    let variances = |t: &Transform| -> Result<Vec<f64>> {
        ordered
            .iter()
            .map(|p| {
                let v = p.transformed_variance(t);
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(Error::InvalidData(format!("area {}: history has zero variance", p.area_id)))
                }
            })
            .collect()
    };

    let mut d = variances(&Transform::log())?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last = Transform::log();
    while trace.len() < cfg.d_max_iterations {
        let f = cfg.fit(&current.with_d(d.clone())?)?;
        trace.push(f.params.lambda);
        last = f.transform();
        let next = variances(&last)?;
        let change = next.iter().zip(&d).map(|(n, o)| ((n - o) / o).abs()).fold(0.0, f64::max);
        d = next;
        if change < cfg.d_iteration_tol {
            converged = true;
            break;
        }
    }
    let correlation = correlation_matrix(&ordered, &last);
    let mean_abs_correlation = correlation.as_ref().map(|c| {
        let m = c.len();
        let off: f64 =
            (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| c[i][j].abs()).sum();
        off / (m * (m - 1)).max(1) as f64
    });
    Ok(DIteration { d, iterations: trace.len(), lambda_trace: trace, converged, correlation, mean_abs_correlation })
}

fn correlation_matrix(panels: &[&HistoricalPanel], t: &Transform) -> Option<Vec<Vec<f64>>> {
    let len = panels.first()?.y_history.len();
    if panels.iter().any(|p| p.y_history.len() != len) {
        return None;
    }
    let centered: Vec<Vec<f64>> = panels
        .iter()
        .map(|p| {
            let h: Vec<f64> = p.y_history.iter().map(|&y| t.h(y)).collect();
            let mean = h.iter().sum::<f64>() / len as f64;
            let h: Vec<f64> = h.iter().map(|v| v - mean).collect();
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            h.iter().map(|v| v / norm).collect()
        })
        .collect();
    Some(
        centered.iter().map(|a| centered.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect(),
    )
}
