//! Deterministic composite-trapezoid quadrature on boxes in one or two
//! dimensions. Used both as the "exact" evaluation path for small-dimension
//! divergences and as the independent oracle in tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::IsotropicGaussian;

/// Half-width of the integration box in units of the widest component.
pub const TAIL_SIGMAS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub nodes_1d: usize,
    /// Nodes per axis of the tensor grid used in two dimensions.
    pub nodes_2d: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes_1d: 4096,
            nodes_2d: 512,
        }
    }
}

/// Composite trapezoid rule with `nodes` equally spaced points on `[lo, hi]`.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, nodes: usize) -> f64 {
    assert!(nodes >= 2, "trapezoid rule needs at least two nodes");
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut sum = 0.5 * (f(lo) + f(hi));
    for i in 1..nodes - 1 {
        sum += f(lo + i as f64 * h);
    }
    sum * h
}

/// `ln ∫ exp(log_f)` by the trapezoid rule, evaluated with a running max so
/// integrands far outside the `f64` range are still representable.
pub fn log_trapezoid<F: Fn(f64) -> f64>(log_f: F, lo: f64, hi: f64, nodes: usize) -> f64 {
    assert!(nodes >= 2, "trapezoid rule needs at least two nodes");
    let h = (hi - lo) / (nodes - 1) as f64;
    let vals: Vec<f64> = (0..nodes)
        .map(|i| {
            let w = if i == 0 || i == nodes - 1 { 0.5f64.ln() } else { 0.0 };
            log_f(lo + i as f64 * h) + w
        })
        .collect();
    log_sum_exp(&vals) + h.ln()
}

/// Finds an interval carrying all but a negligible part of `exp(log_f)`.
///
/// Starts from `[lo, hi]`, doubles outwards while either endpoint is within
/// `drop` nats of the running maximum, then trims both ends back to the
/// region where `log_f > max - drop`. Only point evaluations of the
/// integrand are used.
pub fn significant_support<F: Fn(f64) -> f64>(log_f: F, lo: f64, hi: f64, drop: f64) -> (f64, f64) {
    const SCAN: usize = 2049;
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..60 {
        let width = hi - lo;
        let step = width / (SCAN - 1) as f64;
        let vals: Vec<f64> = (0..SCAN).map(|i| log_f(lo + i as f64 * step)).collect();
        let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let left_open = vals[0] > peak - drop;
        let right_open = vals[SCAN - 1] > peak - drop;
        if !left_open && !right_open {
            let first = vals.iter().position(|&v| v > peak - drop).unwrap_or(0);
            let last = vals.iter().rposition(|&v| v > peak - drop).unwrap_or(SCAN - 1);
            let new_lo = lo + first.saturating_sub(1) as f64 * step;
            let new_hi = lo + (last + 1).min(SCAN - 1) as f64 * step;
            return (new_lo, new_hi);
        }
        if left_open {
            lo -= width;
        }
        if right_open {
            hi += width;
        }
    }
    (lo, hi)
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-axis bounds `[min mu - 10 sigma_max, max mu + 10 sigma_max]` covering
/// every supplied component.
pub fn gaussian_box<'a, I>(components: I) -> Vec<(f64, f64)>
where
    I: IntoIterator<Item = &'a IsotropicGaussian>,
{
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    let mut sigma_max = 0.0f64;
    for g in components {
        if lo.is_empty() {
            lo = vec![f64::INFINITY; g.dim()];
            hi = vec![f64::NEG_INFINITY; g.dim()];
        }
        for (j, &m) in g.mean().iter().enumerate() {
            lo[j] = lo[j].min(m);
            hi[j] = hi[j].max(m);
        }
        sigma_max = sigma_max.max(g.sigma());
    }
    lo.iter()
        .zip(&hi)
        .map(|(&l, &h)| (l - TAIL_SIGMAS * sigma_max, h + TAIL_SIGMAS * sigma_max))
        .collect()
}

/// Integrates `f` over a box of dimension one or two.
pub fn integrate<F>(spec: &QuadratureSpec, bounds: &[(f64, f64)], f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    match bounds.len() {
        1 => {
            let (lo, hi) = bounds[0];
            Ok(trapezoid(|x| f(&[x]), lo, hi, spec.nodes_1d))
        }
        2 => {
            let n = spec.nodes_2d;
            let (xlo, xhi) = bounds[0];
            let (ylo, yhi) = bounds[1];
            let hx = (xhi - xlo) / (n - 1) as f64;
            let hy = (yhi - ylo) / (n - 1) as f64;
            let edge = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let total: f64 = (0..n)
                .into_par_iter()
                .map(|i| {
                    let x = xlo + i as f64 * hx;
                    let mut row = 0.0;
                    for j in 0..n {
                        let y = ylo + j as f64 * hy;
                        row += edge(j) * f(&[x, y]);
                    }
                    edge(i) * row
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(total * hx * hy)
        }
        d => Err(Error::Unsupported(format!(
            "quadrature is only available for d <= 2 (got d = {d})"
        ))),
    }
}
