//! Positivity-preserving output-feedback design for Markovian jump linear
//! systems.
//!
//! For plants `(A_i, B_i, C_i)` and mode-dependent gains `K_i`, the closed
//! loop runs `A_{K,i} = A_i + B_i K_i C_i`. Gains and the off-diagonal rates
//! of the generator `Q` are chosen to minimize
//!
//! ```text
//! η(Qᵀ ⊗ I + diag(A_{K,i})) + Γ (Σ_i d(A_{K,i}) + Σ_{i≠j} max(−q_ij, 0))
//! ```
//!
//! where `d` is the total negative off-diagonal mass (zero exactly for
//! Metzler matrices). With a rate cap `q̄` the term
//! `Γ Σ max(q_ij − q̄, 0)` is added. Diagonal rates are closed by row sums.

pub mod gradient_sampling;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

pub use self::gradient_sampling::{
    gradient_sampling_minimize, min_norm_element, GradientSamplingConfig, MinimizeOutcome, Sample,
    TraceEntry,
};

use crate::analyzer::lifted_markov_generator;
use crate::analyzer::spectral::{rightmost_eigenpair, spectral_abscissa, C64};
use crate::error::{Error, Result};
use crate::kron_lift::MultiIndexBasis;
use crate::model::MarkovModel;
use crate::simulator::path_seed;

/// Default penalty weight.
pub const DEFAULT_GAMMA: f64 = 1e5;
/// Eigenvalue separation below which the analytic gradient is not trusted.
pub const EIGEN_GAP_TOL: f64 = 1e-6;
/// Central-difference step for the fallback gradient.
pub const FD_STEP: f64 = 1e-7;
/// Sampled gradients per iteration, per free parameter. Positivity
/// constraints and eigenvalue crossings are often active together at the
/// optimum, and `d + 1` samples rarely see every smooth piece.
pub const SAMPLES_PER_PARAMETER: usize = 5;
/// Slack on the rate constraints in the feasibility test.
pub const RATE_SLACK: f64 = 1e-9;

/// `d(A, 𝕄_n) = Σ_{i≠j} max(−A_ij, 0)`.
pub fn metzler_distance(a: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j {
                s += (-a[(i, j)]).max(0.0);
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub plants: Vec<Plant>,
    pub gamma: f64,
    pub rate_cap: Option<f64>,
    /// Optional first starting point: gains and generator.
    pub initial: Option<(Vec<DMatrix<f64>>, DMatrix<f64>)>,
    pub optimizer: GradientSamplingConfig,
    /// Standard deviation of random initial gains.
    pub gain_scale: f64,
    /// Scale of random initial rates (absolute Gaussians).
    pub rate_scale: f64,
}

impl SynthesisProblem {
    pub fn new(plants: Vec<Plant>) -> Self {
        let mut problem = Self {
            plants,
            gamma: DEFAULT_GAMMA,
            rate_cap: None,
            initial: None,
            optimizer: GradientSamplingConfig::default(),
            gain_scale: 1.0,
            rate_scale: 1.0,
        };
        if !problem.plants.is_empty() {
            problem.optimizer.samples = Some(SAMPLES_PER_PARAMETER * problem.parameter_count());
        }
        problem
    }

    pub fn with_rate_cap(mut self, cap: f64) -> Self {
        self.rate_cap = Some(cap);
        self
    }

    pub fn modes(&self) -> usize {
        self.plants.len()
    }

    /// `(n, n_u, n_y)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let p = &self.plants[0];
        (p.a.nrows(), p.b.ncols(), p.c.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.plants.is_empty() {
            problems.push("problem has no modes".to_string());
        } else {
            let (n, nu, ny) = self.dims();
            for (i, p) in self.plants.iter().enumerate() {
                if p.a.shape() != (n, n) || p.b.shape() != (n, nu) || p.c.shape() != (ny, n) {
                    problems.push(format!("mode {} has inconsistent dimensions", i + 1));
                } else if !crate::expectation::expm::is_metzler(&p.a) {
                    problems.push(format!("mode {} not Metzler", i + 1));
                }
            }
            if let Some((gains, q)) = &self.initial {
                if gains.len() != self.plants.len() || gains.iter().any(|k| k.shape() != (nu, ny)) {
                    problems.push("initial gains have the wrong shape".into());
                }
                if q.shape() != (self.modes(), self.modes()) {
                    problems.push("initial generator has the wrong shape".into());
                }
            }
        }
        if !(self.gamma > 0.0) {
            problems.push("penalty weight must be positive".into());
        }
        if self.rate_cap.is_some_and(|q| !(q > 0.0)) {
            problems.push("rate cap must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(problems))
        }
    }

    /// Number of free parameters: all gain entries plus off-diagonal rates.
    pub fn parameter_count(&self) -> usize {
        let (_, nu, ny) = self.dims();
        let n = self.modes();
        n * nu * ny + n * (n - 1)
    }

    /// Parameter vector for given gains and generator.
    pub fn pack(&self, gains: &[DMatrix<f64>], q: &DMatrix<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for k in gains {
            for r in 0..k.nrows() {
                for c in 0..k.ncols() {
                    out.push(k[(r, c)]);
                }
            }
        }
        let n = self.modes();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                out.push(q[(i, j)]);
            }
        }
        out
    }

    /// Gains and generator (diagonal closed by row sums) from parameters.
    pub fn unpack(&self, params: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let (_, nu, ny) = self.dims();
        let n = self.modes();
        let mut it = params.iter().copied();
        let gains = (0..n)
            .map(|_| DMatrix::from_row_iterator(nu, ny, it.by_ref().take(nu * ny)))
            .collect();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                q[(i, j)] = it.next().expect("parameter vector too short");
            }
            q[(i, i)] = -(0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum::<f64>();
        }
        (gains, q)
    }

    /// `A_i + B_i K_i C_i` for every mode.
    pub fn closed_loop_modes(&self, gains: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.plants
            .iter()
            .zip(gains)
            .map(|(p, k)| &p.a + &p.b * k * &p.c)
            .collect()
    }

    fn closed_loop_generator(
        &self,
        gains: &[DMatrix<f64>],
        q: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let model = MarkovModel::new(self.closed_loop_modes(gains), q.clone());
        let basis = MultiIndexBasis::new(model.dim(), 1)?;
        lifted_markov_generator(&model, &basis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Penalties {
    /// `Σ_i d(A_{K,i}, 𝕄_n)`.
    pub metzler: f64,
    /// `Σ_{i≠j} max(−q_ij, 0)`.
    pub negative_rates: f64,
    /// `Σ_{i≠j} max(q_ij − q̄, 0)`, zero without a cap.
    pub rate_excess: f64,
}

impl Penalties {
    pub fn total(&self) -> f64 {
        self.metzler + self.negative_rates + self.rate_excess
    }
}

/// Objective value, its parts and a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub eta: f64,
    pub penalties: Penalties,
    pub gradient: Vec<f64>,
    /// False when the rightmost eigenvalue was not simple and the spectral
    /// part of the gradient came from finite differences.
    pub analytic_gradient: bool,
    pub feasible: bool,
}

/// Penalized spectral abscissa and a (sub)gradient at `params`.
pub fn objective(problem: &SynthesisProblem, params: &[f64]) -> Result<Evaluation> {
    if params.len() != problem.parameter_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.parameter_count(),
            got: params.len(),
        });
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite parameters".into()));
    }
    let (gains, q) = problem.unpack(params);
    let t = problem.closed_loop_generator(&gains, &q)?;
    let (pair, gap) = rightmost_eigenpair(&t)?;
    let eta = pair.value.re;

    let (eta_gradient, analytic) = if gap >= EIGEN_GAP_TOL {
        (spectral_gradient(problem, &pair.left, &pair.right), true)
    } else {
        (finite_difference_eta(problem, params)?, false)
    };

    let (n, nu, ny) = problem.dims();
    let modes = problem.modes();
    let gamma = problem.gamma;
    let mut grad = eta_gradient;
    let closed = problem.closed_loop_modes(&gains);

    let mut metzler = 0.0;
    for (i, (ak, plant)) in closed.iter().zip(&problem.plants).enumerate() {
        for r in 0..n {
            for c in (0..n).filter(|&c| c != r) {
                if ak[(r, c)] < 0.0 {
                    metzler -= ak[(r, c)];
                    // ∂(−A_K[r,c]) / ∂K[p,s] = −B[r,p] C[s,c]
                    for p in 0..nu {
                        for s in 0..ny {
                            grad[i * nu * ny + p * ny + s] -=
                                gamma * plant.b[(r, p)] * plant.c[(s, c)];
                        }
                    }
                }
            }
        }
    }

    let offset = modes * nu * ny;
    let mut negative_rates = 0.0;
    let mut rate_excess = 0.0;
    let rates = &params[offset..];
    for (k, &rate) in rates.iter().enumerate() {
        if rate < 0.0 {
            negative_rates -= rate;
            grad[offset + k] -= gamma;
        }
        if let Some(cap) = problem.rate_cap {
            if rate > cap {
                rate_excess += rate - cap;
                grad[offset + k] += gamma;
            }
        }
    }

    let penalties = Penalties {
        metzler,
        negative_rates,
        rate_excess,
    };
    let feasible = closed.iter().all(|a| metzler_distance(a) == 0.0)
        && rates.iter().all(|&r| r >= -RATE_SLACK)
        && problem
            .rate_cap
            .is_none_or(|cap| rates.iter().all(|&r| r <= cap + RATE_SLACK));

    Ok(Evaluation {
        value: eta + gamma * penalties.total(),
        eta,
        penalties,
        gradient: grad,
        analytic_gradient: analytic,
        feasible,
    })
}

/// `∂η/∂θ = Re(wᵀ (∂T/∂θ) v) / Re…` from the left/right eigenvectors of the
/// rightmost eigenvalue.
fn spectral_gradient(
    problem: &SynthesisProblem,
    left: &DVector<C64>,
    right: &DVector<C64>,
) -> Vec<f64> {
    let (n, nu, ny) = problem.dims();
    let modes = problem.modes();
    let denom: C64 = left.iter().zip(right.iter()).map(|(a, b)| a * b).sum();
    let block = |v: &DVector<C64>, i: usize| v.rows(i * n, n).into_owned();
    let mut grad = Vec::with_capacity(problem.parameter_count());

    for (i, plant) in problem.plants.iter().enumerate() {
        let w = block(left, i);
        let v = block(right, i);
        let b = plant.b.map(|x| C64::new(x, 0.0));
        let c = plant.c.map(|x| C64::new(x, 0.0));
        let wb = w.transpose() * b;
        let cv = c * v;
        for p in 0..nu {
            for s in 0..ny {
                grad.push((wb[p] * cv[s] / denom).re);
            }
        }
    }
    for i in 0..modes {
        let vi = block(right, i);
        let wi = block(left, i);
        let own: C64 = wi.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
        for j in (0..modes).filter(|&j| j != i) {
            // q_ij enters Qᵀ ⊗ I at block (j, i) and, through q_ii, at (i, i).
            let wj = block(left, j);
            let cross: C64 = wj.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
            grad.push(((cross - own) / denom).re);
        }
    }
    grad
}

fn finite_difference_eta(problem: &SynthesisProblem, params: &[f64]) -> Result<Vec<f64>> {
    let eta_at = |p: &[f64]| -> Result<f64> {
        let (gains, q) = problem.unpack(p);
        Ok(spectral_abscissa(&problem.closed_loop_generator(&gains, &q)?)?.value)
    };
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = work[k];
        work[k] = orig + FD_STEP;
        let plus = eta_at(&work)?;
        work[k] = orig - FD_STEP;
        let minus = eta_at(&work)?;
        work[k] = orig;
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisResult {
    #[serde(serialize_with = "serialize_matrices")]
    pub gains: Vec<DMatrix<f64>>,
    #[serde(serialize_with = "crate::analyzer::serialize_rows")]
    pub generator: DMatrix<f64>,
    pub eta: f64,
    pub objective: f64,
    pub penalties: Penalties,
    pub feasible: bool,
    pub start: usize,
    pub iterations: usize,
    pub stalled: bool,
    pub trace: Vec<TraceEntry>,
}

fn serialize_matrices<S: serde::Serializer>(
    ms: &[DMatrix<f64>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        seq.serialize_element(&rows)?;
    }
    seq.end()
}

impl SynthesisResult {
    /// Closed-loop Markov model of the design.
    pub fn closed_loop(&self, problem: &SynthesisProblem) -> MarkovModel {
        MarkovModel::new(
            problem.closed_loop_modes(&self.gains),
            self.generator.clone(),
        )
    }
}

/// One gradient-sampling run from `x0`.
pub fn minimize_from(
    problem: &SynthesisProblem,
    x0: &[f64],
    seed: u64,
    start: usize,
) -> Result<SynthesisResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = gradient_sampling_minimize(
        |p: &[f64]| {
            objective(problem, p).map(|e| Sample {
                value: e.value,
                gradient: e.gradient,
                feasible: e.feasible,
            })
        },
        x0,
        &problem.optimizer,
        &mut rng,
    )?;
    let chosen = outcome.best_feasible.as_ref().unwrap_or(&outcome.best);
    let eval = objective(problem, &chosen.x)?;
    let (gains, generator) = problem.unpack(&chosen.x);
    Ok(SynthesisResult {
        gains,
        generator,
        eta: eval.eta,
        objective: eval.value,
        penalties: eval.penalties,
        feasible: eval.feasible,
        start,
        iterations: outcome.iterations,
        stalled: outcome.stalled,
        trace: outcome.trace,
    })
}

/// Random starting point: Gaussian gains, absolute-Gaussian rates.
pub fn random_start<R: Rng + ?Sized>(problem: &SynthesisProblem, rng: &mut R) -> Vec<f64> {
    let (_, nu, ny) = problem.dims();
    let modes = problem.modes();
    let mut out = Vec::with_capacity(problem.parameter_count());
    for _ in 0..modes * nu * ny {
        out.push(problem.gain_scale * rng.sample::<f64, _>(StandardNormal));
    }
    for _ in 0..modes * (modes - 1) {
        let mut r = problem.rate_scale * rng.sample::<f64, _>(StandardNormal).abs();
        if let Some(cap) = problem.rate_cap {
            r = r.min(cap);
        }
        out.push(r);
    }
    out
}

/// Multistart minimization; the best feasible run wins, then the lowest
/// spectral abscissa.
pub fn solve(problem: &SynthesisProblem, starts: usize, base_seed: u64) -> Result<SynthesisResult> {
    problem.validate()?;
    if starts == 0 {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    let runs = (0..starts)
        .into_par_iter()
        .map(|s| {
            let seed = path_seed(base_seed, s as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = match (&problem.initial, s) {
                (Some((gains, q)), 0) => problem.pack(gains, q),
                _ => random_start(problem, &mut rng),
            };
            minimize_from(problem, &x0, rng.random(), s)
        })
        .collect::<Vec<_>>();

    let mut best: Option<SynthesisResult> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (r.feasible, -r.eta, -r.objective) > (b.feasible, -b.eta, -b.objective)
                            && !(b.feasible && !r.feasible)
                    }
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(first_err.expect("at least one run")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use approx::assert_relative_eq;

    #[test]
    fn metzler_distance_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -3.0]);
        assert_eq!(metzler_distance(&a), 0.0);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.2, -0.3, -5.0]);
        assert_relative_eq!(metzler_distance(&a), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn published_fast_design_is_positive() {
        let problem = catalog::two_mode_feedback_problem();
        let (gains, _) = catalog::fast_switching_design();
        let closed = problem.closed_loop_modes(&gains);
        let expected = DMatrix::from_row_slice(2, 2, &[-0.6, 0.0, 0.6, 0.8]);
        assert_relative_eq!(closed[0], expected, epsilon = 1e-4);
        assert_eq!(metzler_distance(&closed[0]), 0.0);
        assert_eq!(metzler_distance(&closed[1]), 0.0);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let problem = catalog::two_mode_feedback_problem();
        let (gains, q) = catalog::slow_switching_design();
        let p = problem.pack(&gains, &q);
        assert_eq!(p.len(), 4);
        let (g2, q2) = problem.unpack(&p);
        assert_eq!(g2, gains);
        assert_relative_eq!(q2, q, epsilon = 1e-15);
    }

    #[test]
    fn objective_at_published_designs() {
        let problem = catalog::two_mode_feedback_problem();
        let (gains, q) = catalog::fast_switching_design();
        let e = objective(&problem, &problem.pack(&gains, &q)).unwrap();
        assert_relative_eq!(e.value, -0.1936, epsilon = 2e-3);
        assert_eq!(e.penalties.total(), 0.0);
        assert!(e.feasible);

        let capped = problem.clone().with_rate_cap(2.0);
        let (gains, q) = catalog::slow_switching_design();
        let e = objective(&capped, &capped.pack(&gains, &q)).unwrap();
        assert_relative_eq!(e.value, -0.02251, epsilon = 2e-3);
        assert_eq!(e.penalties.total(), 0.0);
        assert!(e.feasible);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let problem = catalog::two_mode_feedback_problem();
        // Feasible interior point with a simple rightmost eigenvalue.
        let x = [-2.0, -1.0, 1.3, 0.7];
        let e = objective(&problem, &x).unwrap();
        assert!(e.analytic_gradient && e.feasible);
        let h = 1e-6;
        for dir in [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.3, -0.5, 0.2, 0.4],
        ] {
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            let fd = (objective(&problem, &plus).unwrap().value
                - objective(&problem, &minus).unwrap().value)
                / (2.0 * h);
            let an: f64 = e.gradient.iter().zip(&dir).map(|(g, d)| g * d).sum();
            assert_relative_eq!(an, fd, max_relative = 1e-4);
        }
    }

    #[test]
    fn penalty_subgradients() {
        let problem = catalog::two_mode_feedback_problem().with_rate_cap(2.0);
        // Gain 1 too negative (A_K1[0][1] < 0), rate 1 negative, rate 2 above cap.
        let x = [-4.0, -1.0, -0.5, 3.0];
        let e = objective(&problem, &x).unwrap();
        assert!(!e.feasible);
        assert_relative_eq!(e.penalties.metzler, 0.04, epsilon = 1e-12);
        assert_relative_eq!(e.penalties.negative_rates, 0.5, epsilon = 1e-15);
        assert_relative_eq!(e.penalties.rate_excess, 1.0, epsilon = 1e-15);
        // d/dK1 of Γ·(−0.2 − 0.06 K1) = −0.06 Γ dominates the spectral part.
        assert!(e.gradient[0] < -0.05 * problem.gamma);
        assert!(e.gradient[2] < -0.9 * problem.gamma);
        assert!(e.gradient[3] > 0.9 * problem.gamma);
    }

    #[test]
    fn ineffective_control_keeps_open_loop_abscissa() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
        let mut problem = SynthesisProblem::new(vec![Plant {
            a: a.clone(),
            b: DMatrix::zeros(2, 1),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        }]);
        problem.optimizer.max_iterations = 50;
        let r = solve(&problem, 2, 1).unwrap();
        let eta = spectral_abscissa(&a).unwrap().value;
        assert_relative_eq!(r.eta, eta, epsilon = 1e-12);
        assert!(r.feasible);
    }

    #[test]
    fn result_recomputes_identically() {
        let mut problem = catalog::two_mode_feedback_problem();
        problem.optimizer.max_iterations = 40;
        let r = solve(&problem, 2, 5).unwrap();
        let again = objective(&problem, &problem.pack(&r.gains, &r.generator)).unwrap();
        assert_eq!(again.value, r.objective);
        assert_eq!(again.eta, r.eta);
        assert!(r
            .trace
            .windows(2)
            .all(|w| w[1].best_value <= w[0].best_value));
    }
}
