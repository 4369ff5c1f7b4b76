#![allow(dead_code)]

use tfh::simulation::{generate_replicate, DPattern, ScenarioConfig};
use tfh::transform::Transform;
use tfh::{AreaObservation, Dataset, ModelParams};

/// Dataset whose transformed responses under `t` equal `h`.
pub fn from_h(t: &Transform, h: &[f64], d: &[f64], x: &[Vec<f64>]) -> Dataset {
    let areas = (0..h.len())
        .map(|i| AreaObservation { area_id: format!("a{i}"), y: t.inverse(h[i]), x: x[i].clone(), d: d[i] })
        .collect();
    Dataset::new(areas).unwrap()
}

pub fn params(a: f64, lambda: f64) -> ModelParams {
    ModelParams { beta: vec![0.5, 1.0], a, lambda }
}

pub fn scenario(label: &str, m: usize, a: f64, lambda: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig::new(label, m, DPattern::A, params(a, lambda), 1, seed)
}

pub fn draw(cfg: &ScenarioConfig, rep: usize) -> Dataset {
    generate_replicate(cfg, rep).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn var(v: &[f64]) -> f64 {
    let mu = mean(v);
    v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}
