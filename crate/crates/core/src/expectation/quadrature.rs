//! Globally adaptive composite Gauss–Legendre quadrature for vector-valued
//! integrands.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Number of Gauss–Legendre nodes per panel.
    pub order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_subdivisions: 2048,
            order: 15,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.order < 2 {
            return Err(Error::InvalidArgument(
                "quadrature order must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule on `[a, b]`.
    pub fn apply<F>(&self, f: &F, a: f64, b: f64, dim: usize) -> Result<Vec<f64>>
    where
        F: Fn(f64) -> Result<Vec<f64>>,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = vec![0.0; dim];
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x)?;
            for (s, vi) in acc.iter_mut().zip(&v) {
                *s += w * half * vi;
            }
        }
        Ok(acc)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error).is_eq()
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub error_bound: f64,
    pub subdivisions: usize,
}

/// Integrates `f : ℝ → ℝ^dim` over the union of `intervals`, refining the
/// panel with the largest error until the summed max-norm error estimate is
/// within tolerance.
pub fn integrate<F>(
    f: &F,
    intervals: &[(f64, f64)],
    dim: usize,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let rule = GaussLegendre::new(cfg.order);
    let mut heap = BinaryHeap::new();
    for &(a, b) in intervals {
        if b > a {
            heap.push(panel(&rule, f, a, b, dim)?);
        }
    }

    let mut subdivisions = 0;
    loop {
        let (value, error) = totals(&heap, dim);
        let scale = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if error <= cfg.abs_tol.max(cfg.rel_tol * scale) {
            return Ok(Integral {
                value,
                error_bound: error,
                subdivisions,
            });
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(Error::Accuracy {
                estimate: value,
                error_bound: error,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("nonempty when error is positive");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            return Err(Error::Accuracy {
                estimate: value,
                error_bound: error,
                subdivisions,
            });
        }
        heap.push(panel(&rule, f, worst.a, mid, dim)?);
        heap.push(panel(&rule, f, mid, worst.b, dim)?);
        subdivisions += 1;
    }
}

fn panel<F>(rule: &GaussLegendre, f: &F, a: f64, b: f64, dim: usize) -> Result<Panel>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let mid = 0.5 * (a + b);
    let whole = rule.apply(f, a, b, dim)?;
    let left = rule.apply(f, a, mid, dim)?;
    let right = rule.apply(f, mid, b, dim)?;
    let value: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
    let error = value
        .iter()
        .zip(&whole)
        .fold(0.0f64, |m, (v, w)| m.max((v - w).abs()));
    Ok(Panel { a, b, value, error })
}

fn totals(heap: &BinaryHeap<Panel>, dim: usize) -> (Vec<f64>, f64) {
    // Sum in interval order so the result does not depend on heap layout.
    let mut panels: Vec<&Panel> = heap.iter().collect();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut value = vec![0.0; dim];
    let mut error = 0.0;
    for p in panels {
        for (s, v) in value.iter_mut().zip(&p.value) {
            *s += v;
        }
        error += p.error;
    }
    (value, error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(5);
        assert_relative_eq!(rule.weights().iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        // Degree 9 is the limit for 5 nodes.
        let f = |x: f64| Ok(vec![x.powi(8), x.powi(9) + 1.0]);
        let v = rule.apply(&f, -1.0, 1.0, 2).unwrap();
        assert_relative_eq!(v[0], 2.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(v[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        for n in [2, 7, 15, 20] {
            let rule = GaussLegendre::new(n);
            let nodes = rule.nodes();
            assert!(nodes.windows(2).all(|w| w[0] < w[1]));
            for i in 0..n {
                assert_relative_eq!(nodes[i], -nodes[n - 1 - i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn adaptive_exponential_integral() {
        let cfg = QuadratureConfig::default();
        let f = |h: f64| Ok(vec![(-h).exp(), h.sin()]);
        let r = integrate(&f, &[(1.0, 3.0)], 2, &cfg).unwrap();
        let expected = (-1f64).exp() - (-3f64).exp();
        assert_relative_eq!(r.value[0], expected, epsilon = 1e-13);
        assert_relative_eq!(r.value[1], 1f64.cos() - 3f64.cos(), epsilon = 1e-13);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let cfg = QuadratureConfig::default();
        let f = |x: f64| Ok(vec![1.0 / (1e-4 + (x - 0.3).powi(2))]);
        let r = integrate(&f, &[(0.0, 1.0)], 1, &cfg).unwrap();
        let s: f64 = 1e-2;
        let expected = ((0.7 / s).atan() + (0.3 / s).atan()) / s;
        assert_relative_eq!(r.value[0], expected, max_relative = 1e-9);
        assert!(r.subdivisions > 0);
    }

    #[test]
    fn budget_exhaustion_reports_best_estimate() {
        let cfg = QuadratureConfig {
            max_subdivisions: 2,
            ..Default::default()
        };
        let f = |x: f64| Ok(vec![x.abs().sqrt().recip()]);
        match integrate(&f, &[(-1.0, 1.0)], 1, &cfg) {
            Err(Error::Accuracy {
                estimate,
                error_bound,
                ..
            }) => {
                assert_eq!(estimate.len(), 1);
                assert!(error_bound > 0.0);
            }
            other => panic!("expected accuracy failure, got {other:?}"),
        }
    }
}
