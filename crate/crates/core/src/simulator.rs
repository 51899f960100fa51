//! Seeded sample paths and Monte-Carlo moment estimates.
//!
//! Between switches the flow is `x(t) = e^{A_σ (t − t_k)} x(t_k)`, evaluated
//! with the matrix exponential, so paths carry no time-stepping error. At a
//! switch the reset is applied to the left limit. Each path owns a ChaCha
//! stream seeded from `(base_seed, path index)`, and ensemble sums are taken
//! pairwise over the path-ordered results, so estimates do not depend on the
//! number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::matrix_exponential;
use crate::kron_lift::MultiIndexBasis;
use crate::model::SemiMarkovModel;

/// State entries above this magnitude mark a path as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e300;

/// Minimum ensemble size accepted by the estimators.
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath {
    pub seed: u64,
    /// `t_0 = 0, t_1, …`: switching instants within the horizon.
    pub switch_times: Vec<f64>,
    /// Mode active on `[t_k, t_{k+1})`.
    pub modes: Vec<usize>,
    /// Reset applied at `t_{k+1}`.
    #[serde(skip)]
    pub jumps: Vec<DMatrix<f64>>,
    /// Dense output grid.
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<DVector<f64>>,
    /// Mode active at each grid time.
    pub grid_modes: Vec<usize>,
    /// `x_d(k) = x(t_k)`.
    #[serde(skip)]
    pub discrete: Vec<DVector<f64>>,
    pub diverged: bool,
}

/// Which norm of the state the ensemble statistics average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Euclidean,
    Manhattan,
}

impl NormKind {
    fn eval(self, x: &DVector<f64>) -> f64 {
        match self {
            NormKind::Euclidean => x.norm(),
            NormKind::Manhattan => x.iter().map(|v| v.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleOptions {
    pub norm: NormKind,
    /// Also estimate `E[e_σ ⊗ x^[m]]` on the grid.
    pub lifted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub degree: usize,
    pub norm: NormKind,
    pub times: Vec<f64>,
    /// Mean of `‖x(t)‖^m` per grid time.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Mean of `e_σ(t) ⊗ x(t)^[m]` per grid time, when requested.
    #[serde(skip)]
    pub lifted_mean: Option<Vec<DVector<f64>>>,
    #[serde(skip)]
    pub lifted_stderr: Option<Vec<DVector<f64>>>,
    /// Mean of `‖x_d(k)‖^m` for switch indices reached by every path.
    pub discrete_mean: Vec<f64>,
    pub discrete_stderr: Vec<f64>,
    pub diverged_paths: usize,
}

impl EnsembleStats {
    /// True when at least 1% of the paths diverged.
    pub fn divergence_warning(&self) -> bool {
        self.diverged_paths * 100 >= self.paths && self.diverged_paths > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMomentStats {
    pub paths: usize,
    /// Sample mean of `e_{σ_k} ⊗ x_d(k)^[m]`, `k = 0..=k_max`.
    pub mean: Vec<DVector<f64>>,
    pub stderr: Vec<DVector<f64>>,
    pub diverged_paths: usize,
}

/// Seed of path `index` in an ensemble.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_start(model: &SemiMarkovModel, x0: &[f64], mode: usize) -> Result<()> {
    model.validate().into_result()?;
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "initial state must be nonnegative".into(),
        ));
    }
    if mode >= model.mode_count() {
        return Err(Error::InvalidArgument(format!(
            "initial mode {} out of range 1..={}",
            mode + 1,
            model.mode_count()
        )));
    }
    Ok(())
}

fn diverged(x: &DVector<f64>) -> bool {
    x.iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Dense output grid `0, dt, 2dt, …` up to `horizon`.
pub fn output_grid(horizon: f64, output_dt: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && output_dt > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(
            "horizon and output step must be positive".into(),
        ));
    }
    let count = (horizon / output_dt + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|k| (k as f64 * output_dt).min(horizon))
        .collect())
}

/// Walks one path, reporting dense grid samples and switches.
///
/// Stops at the first switch beyond `horizon`, after `max_switches`
/// switches, or on divergence; returns whether the path diverged.
#[allow(clippy::too_many_arguments)]
fn walk<G, S>(
    model: &SemiMarkovModel,
    x0: &[f64],
    mode0: usize,
    rng: &mut ChaCha8Rng,
    horizon: f64,
    grid: &[f64],
    max_switches: usize,
    mut on_grid: G,
    mut on_switch: S,
) -> Result<bool>
where
    G: FnMut(usize, &DVector<f64>, usize),
    S: FnMut(f64, usize, &DMatrix<f64>, &DVector<f64>),
{
    let mut x = DVector::from_row_slice(x0);
    let mut mode = mode0;
    let mut t = 0.0;
    let mut next_grid = 0;
    let mut switches = 0;
    loop {
        let to = model.sample_next_mode(mode, rng);
        let h = model
            .dwell(mode, to)
            .expect("validated model has a dwell law on every edge")
            .sample(rng);
        let jump = model.jump(mode, to).sample(rng);
        let a = model.mode(mode);
        let t_next = t + h;

        while next_grid < grid.len() && grid[next_grid] < t_next {
            let xt = matrix_exponential(a, grid[next_grid] - t)? * &x;
            on_grid(next_grid, &xt, mode);
            next_grid += 1;
        }
        if t_next > horizon || switches >= max_switches {
            return Ok(false);
        }
        let x_next = jump * (matrix_exponential(a, h)? * &x);
        if diverged(&x_next) {
            return Ok(true);
        }
        on_switch(t_next, to, jump, &x_next);
        x = x_next;
        mode = to;
        t = t_next;
        switches += 1;
    }
}

/// One sample path on `[0, horizon]` with dense output every `output_dt`.
pub fn simulate_path(
    model: &SemiMarkovModel,
    x0: &[f64],
    mode0: usize,
    horizon: f64,
    output_dt: f64,
    seed: u64,
) -> Result<SamplePath> {
    check_start(model, x0, mode0)?;
    let grid = output_grid(horizon, output_dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = SamplePath {
        seed,
        switch_times: vec![0.0],
        modes: vec![mode0],
        jumps: Vec::new(),
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        grid_modes: Vec::with_capacity(grid.len()),
        discrete: vec![DVector::from_row_slice(x0)],
        diverged: false,
    };
    let mut grid_samples = Vec::with_capacity(grid.len());
    let mut switches = Vec::new();
    path.diverged = walk(
        model,
        x0,
        mode0,
        &mut rng,
        horizon,
        &grid,
        usize::MAX,
        |k, x, mode| grid_samples.push((grid[k], x.clone(), mode)),
        |t, to, jump, x| switches.push((t, to, jump.clone(), x.clone())),
    )?;
    for (t, x, mode) in grid_samples {
        path.times.push(t);
        path.states.push(x);
        path.grid_modes.push(mode);
    }
    for (t, to, jump, x) in switches {
        path.switch_times.push(t);
        path.modes.push(to);
        path.jumps.push(jump);
        path.discrete.push(x);
    }
    Ok(path)
}

struct PathSummary {
    grid_norms: Vec<f64>,
    grid_lifted: Vec<f64>,
    discrete_norms: Vec<f64>,
    diverged: bool,
}

/// Monte-Carlo estimate of `E[‖x(t)‖^m]` on the output grid.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mean_norm(
    model: &SemiMarkovModel,
    x0: &[f64],
    mode0: usize,
    degree: usize,
    horizon: f64,
    output_dt: f64,
    paths: usize,
    base_seed: u64,
    options: EnsembleOptions,
) -> Result<EnsembleStats> {
    check_start(model, x0, mode0)?;
    check_paths(paths)?;
    let grid = output_grid(horizon, output_dt)?;
    let basis = MultiIndexBasis::new(model.dim(), degree)?;
    let count = model.mode_count();
    let d = basis.len();
    let m = degree as i32;

    let summaries = (0..paths)
        .into_par_iter()
        .map(|index| -> Result<PathSummary> {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(base_seed, index as u64));
            let mut grid_norms = vec![f64::INFINITY; grid.len()];
            let mut grid_lifted = if options.lifted {
                vec![0.0; grid.len() * d * count]
            } else {
                Vec::new()
            };
            let mut discrete_norms = vec![options.norm.eval(&DVector::from_row_slice(x0)).powi(m)];
            let mut lift_err = None;
            let diverged = walk(
                model,
                x0,
                mode0,
                &mut rng,
                horizon,
                &grid,
                usize::MAX,
                |k, x, mode| {
                    grid_norms[k] = options.norm.eval(x).powi(m);
                    if options.lifted {
                        match basis.lift_vector(x.as_slice()) {
                            Ok(v) => {
                                let off = k * d * count + mode * d;
                                grid_lifted[off..off + d].copy_from_slice(v.as_slice());
                            }
                            Err(e) => lift_err = Some(e),
                        }
                    }
                },
                |_, _, _, x| discrete_norms.push(options.norm.eval(x).powi(m)),
            )?;
            if let Some(e) = lift_err {
                return Err(e);
            }
            Ok(PathSummary {
                grid_norms,
                grid_lifted,
                discrete_norms,
                diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean, stderr) = column_stats(&summaries, grid.len(), |s, k| s.grid_norms[k]);
    let reached = summaries
        .iter()
        .map(|s| s.discrete_norms.len())
        .min()
        .unwrap_or(0);
    let (discrete_mean, discrete_stderr) =
        column_stats(&summaries, reached, |s, k| s.discrete_norms[k]);

    let (lifted_mean, lifted_stderr) = if options.lifted {
        let width = d * count;
        let (mu, se) = column_stats(&summaries, grid.len() * width, |s, k| s.grid_lifted[k]);
        let split = |v: Vec<f64>| {
            v.chunks(width)
                .map(DVector::from_row_slice)
                .collect::<Vec<_>>()
        };
        (Some(split(mu)), Some(split(se)))
    } else {
        (None, None)
    };

    Ok(EnsembleStats {
        paths,
        degree,
        norm: options.norm,
        times: grid,
        mean,
        stderr,
        lifted_mean,
        lifted_stderr,
        discrete_mean,
        discrete_stderr,
        diverged_paths: summaries.iter().filter(|s| s.diverged).count(),
    })
}

/// Monte-Carlo estimate of `E[e_{σ_k} ⊗ x_d(k)^[m]]` for `k = 0..=k_max`.
pub fn estimate_lifted_moment(
    model: &SemiMarkovModel,
    x0: &[f64],
    mode0: usize,
    degree: usize,
    k_max: usize,
    paths: usize,
    base_seed: u64,
) -> Result<LiftedMomentStats> {
    check_start(model, x0, mode0)?;
    check_paths(paths)?;
    let basis = MultiIndexBasis::new(model.dim(), degree)?;
    let d = basis.len();
    let width = d * model.mode_count();
    let v0 = basis.lift_vector(x0)?;

    let summaries = (0..paths)
        .into_par_iter()
        .map(|index| -> Result<(Vec<f64>, bool)> {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(base_seed, index as u64));
            let mut out = vec![0.0; (k_max + 1) * width];
            out[mode0 * d..mode0 * d + d].copy_from_slice(v0.as_slice());
            let mut k = 0;
            let mut lift_err = None;
            let diverged = walk(
                model,
                x0,
                mode0,
                &mut rng,
                f64::INFINITY,
                &[],
                k_max,
                |_, _, _| {},
                |_, to, _, x| {
                    k += 1;
                    match basis.lift_vector(x.as_slice()) {
                        Ok(v) => {
                            let off = k * width + to * d;
                            out[off..off + d].copy_from_slice(v.as_slice());
                        }
                        Err(e) => lift_err = Some(e),
                    }
                },
            )?;
            if let Some(e) = lift_err {
                return Err(e);
            }
            if diverged {
                for v in &mut out[(k + 1) * width..] {
                    *v = f64::INFINITY;
                }
            }
            Ok((out, diverged))
        })
        .collect::<Result<Vec<_>>>()?;

    let (mu, se) = column_stats(&summaries, (k_max + 1) * width, |s, k| s.0[k]);
    let split = |v: Vec<f64>| {
        v.chunks(width)
            .map(DVector::from_row_slice)
            .collect::<Vec<_>>()
    };
    Ok(LiftedMomentStats {
        paths,
        mean: split(mu),
        stderr: split(se),
        diverged_paths: summaries.iter().filter(|s| s.1).count(),
    })
}

fn check_paths(paths: usize) -> Result<()> {
    if paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!(
            "ensemble needs at least {MIN_PATHS} paths, got {paths}"
        )));
    }
    Ok(())
}

/// Per-column mean and standard error over the path-ordered summaries.
fn column_stats<T, F>(rows: &[T], columns: usize, get: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&T, usize) -> f64,
{
    let count = rows.len() as f64;
    let mut mean = Vec::with_capacity(columns);
    let mut stderr = Vec::with_capacity(columns);
    let mut buf = vec![0.0; rows.len()];
    for k in 0..columns {
        for (b, r) in buf.iter_mut().zip(rows) {
            *b = get(r, k);
        }
        let mu = pairwise_sum(&buf) / count;
        for b in buf.iter_mut() {
            *b = (*b - mu) * (*b - mu);
        }
        let var = if rows.len() > 1 {
            pairwise_sum(&buf) / (count - 1.0)
        } else {
            0.0
        };
        mean.push(mu);
        stderr.push((var / count).sqrt());
    }
    (mean, stderr)
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
