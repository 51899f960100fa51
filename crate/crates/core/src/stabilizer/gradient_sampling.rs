//! Gradient sampling for nonsmooth, locally Lipschitz objectives.
//!
//! Each iteration samples gradients at random points in a ball of radius `ε`
//! around the iterate, finds the minimum-norm element `g*` of their convex
//! hull, and takes an Armijo backtracking step along `−g*/‖g*‖`. When `‖g*‖`
//! falls below the stationarity target `ν`, or no descent is found, both `ε`
//! and `ν` are halved. The run ends when `ε` drops below its floor or the
//! iteration budget is spent.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective value and (almost-everywhere) gradient at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Whether the point satisfies the caller's side conditions; the
    /// minimizer remembers the best feasible iterate separately.
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientSamplingConfig {
    pub max_iterations: usize,
    pub initial_radius: f64,
    pub min_radius: f64,
    pub initial_tolerance: f64,
    /// Gradients sampled per iteration besides the iterate itself; `None`
    /// uses the parameter count.
    pub samples: Option<usize>,
    /// First trial step length of the line search.
    pub initial_step: f64,
    /// Cap on the trial step; each search starts at twice the last accepted
    /// step, so long flat valleys are crossed in few iterations.
    pub max_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for GradientSamplingConfig {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            initial_radius: 0.1,
            min_radius: 1e-6,
            initial_tolerance: 1e-4,
            samples: None,
            initial_step: 1.0,
            max_step: 64.0,
            armijo: 1e-6,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub value: f64,
    /// Best objective value seen so far.
    pub best_value: f64,
    pub radius: f64,
    pub min_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOutcome {
    pub best: Minimum,
    pub best_feasible: Option<Minimum>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    /// The budget ran out, or the line search failed at the smallest radius.
    pub stalled: bool,
}

/// Minimizes `objective` from `x0`.
pub fn gradient_sampling_minimize<F, R>(
    objective: F,
    x0: &[f64],
    cfg: &GradientSamplingConfig,
    rng: &mut R,
) -> Result<MinimizeOutcome>
where
    F: Fn(&[f64]) -> Result<Sample>,
    R: Rng + ?Sized,
{
    let dim = x0.len();
    let samples = cfg.samples.unwrap_or(dim.max(1));
    let mut x = x0.to_vec();
    let mut current = objective(&x)?;
    check_sample(&current, dim)?;

    let mut best = Minimum {
        x: x.clone(),
        value: current.value,
    };
    let mut best_feasible = current.feasible.then(|| best.clone());
    let mut radius = cfg.initial_radius;
    let mut tolerance = cfg.initial_tolerance;
    let mut trace = Vec::new();
    let mut stalled = true;
    let mut iterations = 0;
    let mut step = cfg.initial_step;

    if dim == 0 {
        return Ok(MinimizeOutcome {
            best,
            best_feasible,
            trace,
            iterations,
            stalled: false,
        });
    }

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut gradients = vec![current.gradient.clone()];
        for _ in 0..samples {
            let y = sample_ball(&x, radius, rng);
            // Points where the objective cannot be evaluated are skipped.
            if let Ok(s) = objective(&y) {
                if s.gradient.len() == dim && s.gradient.iter().all(|g| g.is_finite()) {
                    gradients.push(s.gradient);
                }
            }
        }
        let g = min_norm_element(&gradients);
        let g_norm = norm(&g);

        let mut moved = false;
        if g_norm > tolerance {
            let dir: Vec<f64> = g.iter().map(|v| -v / g_norm).collect();
            let mut t = step;
            for _ in 0..cfg.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                if let Ok(s) = objective(&trial) {
                    if s.value.is_finite()
                        && s.gradient.len() == dim
                        && s.value < current.value
                        && s.value <= current.value - cfg.armijo * t * g_norm
                    {
                        x = trial;
                        current = s;
                        moved = true;
                        step =
                            (2.0 * t).clamp(cfg.initial_step, cfg.max_step.max(cfg.initial_step));
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if !moved {
            radius *= 0.5;
            tolerance *= 0.5;
            step = cfg.initial_step;
        }

        if current.value < best.value {
            best = Minimum {
                x: x.clone(),
                value: current.value,
            };
        }
        if current.feasible
            && best_feasible
                .as_ref()
                .is_none_or(|b| current.value < b.value)
        {
            best_feasible = Some(Minimum {
                x: x.clone(),
                value: current.value,
            });
        }
        trace.push(TraceEntry {
            iteration: iterations,
            value: current.value,
            best_value: best.value,
            radius,
            min_norm: g_norm,
        });

        if radius < cfg.min_radius {
            stalled = false;
            break;
        }
    }

    Ok(MinimizeOutcome {
        best,
        best_feasible,
        trace,
        iterations,
        stalled,
    })
}

fn check_sample(s: &Sample, dim: usize) -> Result<()> {
    if s.gradient.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: s.gradient.len(),
        });
    }
    if !s.value.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the start point".into(),
        ));
    }
    Ok(())
}

fn sample_ball<R: Rng + ?Sized>(x: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let dim = x.len();
    let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let len = norm(&dir).max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    x.iter().zip(&dir).map(|(a, d)| a + r * d / len).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tolerance on successive iterates of the simplex QP.
pub const QP_TOL: f64 = 1e-10;
const QP_MAX_ITER: usize = 20_000;

/// Minimum-norm element of the convex hull of `vectors`, by accelerated
/// projected gradient on the simplex of convex weights.
///
/// Starts from the shortest input vector and returns the best point visited,
/// so the result is never longer than any input.
pub fn min_norm_element(vectors: &[Vec<f64>]) -> Vec<f64> {
    let k = vectors.len();
    let dim = vectors.first().map_or(0, Vec::len);
    if k == 1 {
        return vectors[0].clone();
    }
    // Gram matrix, rescaled to unit largest diagonal.
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let d: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = d;
            gram[j][i] = d;
        }
    }
    let scale = (0..k).map(|i| gram[i][i]).fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![0.0; dim];
    }
    for row in gram.iter_mut() {
        for v in row.iter_mut() {
            *v /= scale;
        }
    }
    let lipschitz = 2.0 * largest_eigenvalue(&gram).max(1e-300);
    let objective = |lam: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += lam[i] * gram[i][j] * lam[j];
            }
        }
        s
    };

    let start = (0..k)
        .min_by(|&a, &b| gram[a][a].total_cmp(&gram[b][b]))
        .expect("nonempty");
    let mut lam = vec![0.0; k];
    lam[start] = 1.0;
    let mut best = lam.clone();
    let mut best_val = objective(&lam);
    let mut y = lam.clone();
    let mut t = 1.0f64;

    for _ in 0..QP_MAX_ITER {
        let grad: Vec<f64> = (0..k)
            .map(|i| 2.0 * (0..k).map(|j| gram[i][j] * y[j]).sum::<f64>())
            .collect();
        let step: Vec<f64> = y
            .iter()
            .zip(&grad)
            .map(|(a, g)| a - g / lipschitz)
            .collect();
        let next = project_simplex(&step);
        let change = next
            .iter()
            .zip(&lam)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let val = objective(&next);
        if val < best_val {
            best_val = val;
            best = next.clone();
        }
        if val > objective(&lam) {
            // Restart momentum when the objective goes up.
            y = lam.clone();
            t = 1.0;
            continue;
        }
        y = next
            .iter()
            .zip(&lam)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        lam = next;
        t = t_next;
        if change < QP_TOL {
            break;
        }
    }

    let mut out = vec![0.0; dim];
    for (w, v) in best.iter().zip(vectors) {
        if *w != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }
    out
}

fn largest_eigenvalue(sym: &[Vec<f64>]) -> f64 {
    let k = sym.len();
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| sym[i][j]);
    m.symmetric_eigenvalues().max()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
