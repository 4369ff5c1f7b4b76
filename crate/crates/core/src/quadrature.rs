//! Gauss–Hermite quadrature for expectations under a normal law.

use std::f64::consts::PI;

/// Nodes and weights for `∫ exp(−x²) f(x) dx ≈ Σ wᵢ f(xᵢ)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes an `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence (stable for several hundred points).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let pim4 = PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z_prev = z;
                z = z_prev - p1 / pp;
                if (z - z_prev).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `(zᵢ, πᵢ)` pairs with `E[f(Z)] ≈ Σ πᵢ f(zᵢ)` for `Z ~ N(mean, variance)`.
    pub fn normal_points(&self, mean: f64, variance: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = (2.0 * variance).sqrt();
        let norm = PI.sqrt().recip();
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mean + scale * x, w * norm))
    }

    /// `E[f(Z)]` for `Z ~ N(mean, variance)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, variance: f64, mut f: F) -> f64 {
        self.normal_points(mean, variance).map(|(z, w)| w * f(z)).sum()
    }
}
