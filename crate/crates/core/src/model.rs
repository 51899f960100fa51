//! System classes: positive semi-Markovian jump linear systems, their
//! discrete-time counterparts, and Markovian jump linear systems.
//!
//! The switching kernel of a semi-Markov model is stored factored as
//! next-mode probability `p_ij`, then a dwell-time law and a jump-map mixture
//! attached to the edge `(i, j)`. The jump map is drawn independently of the
//! dwell time given the edge.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::expm::is_metzler;

const MASS_TOL: f64 = 1e-12;

/// Probability law of the time spent in a mode before the next switch.
///
/// Every law is supported in `(0, T]` for a finite `T`; the continuous part
/// has a density and the remaining mass sits on finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DwellLaw {
    /// Uniform density on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Weibull law cut at `t_p = scale·(−ln p)^{1/shape}`, with the tail
    /// mass `p` placed on an atom at `t_p`.
    TruncatedWeibull {
        shape: f64,
        scale: f64,
        tail_mass: f64,
    },
    /// Point mass at `value`.
    Deterministic { value: f64 },
    /// Exponential law with the mass beyond `cap` placed on an atom at `cap`.
    TruncatedExponential { rate: f64, cap: f64 },
    /// Equal mass on every listed sample.
    Empirical { samples: Vec<f64> },
}

impl DwellLaw {
    pub fn empirical(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        DwellLaw::Empirical { samples }
    }

    /// Cut point of a truncated Weibull law, where the untruncated CDF is `1 - p`.
    pub fn weibull_cut(shape: f64, scale: f64, tail_mass: f64) -> f64 {
        scale * (-tail_mass.ln()).powf(shape.recip())
    }

    /// Upper end `T` of the support.
    pub fn support_max(&self) -> f64 {
        match *self {
            DwellLaw::Uniform { hi, .. } => hi,
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            } => Self::weibull_cut(shape, scale, tail_mass),
            DwellLaw::Deterministic { value } => value,
            DwellLaw::TruncatedExponential { cap, .. } => cap,
            DwellLaw::Empirical { ref samples } => samples.last().copied().unwrap_or(0.0),
        }
    }

    /// Atoms as `(location, mass)`, sorted by location.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match *self {
            DwellLaw::Uniform { .. } => Vec::new(),
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            } => vec![(Self::weibull_cut(shape, scale, tail_mass), tail_mass)],
            DwellLaw::Deterministic { value } => vec![(value, 1.0)],
            DwellLaw::TruncatedExponential { rate, cap } => vec![(cap, (-rate * cap).exp())],
            DwellLaw::Empirical { ref samples } => {
                let w = 1.0 / samples.len() as f64;
                let mut out: Vec<(f64, f64)> = Vec::new();
                for &s in samples {
                    match out.last_mut() {
                        Some((t, mass)) if *t == s => *mass += w,
                        _ => out.push((s, w)),
                    }
                }
                out
            }
        }
    }

    /// Intervals on which the continuous part has a smooth density.
    pub fn continuous_intervals(&self) -> Vec<(f64, f64)> {
        match *self {
            DwellLaw::Uniform { lo, hi } => vec![(lo, hi)],
            DwellLaw::TruncatedWeibull { .. } => vec![(0.0, self.support_max())],
            DwellLaw::TruncatedExponential { cap, .. } => vec![(0.0, cap)],
            DwellLaw::Deterministic { .. } | DwellLaw::Empirical { .. } => Vec::new(),
        }
    }

    /// Density of the continuous part at `t` (zero off its support).
    pub fn density(&self, t: f64) -> f64 {
        match *self {
            DwellLaw::Uniform { lo, hi } => {
                if (lo..=hi).contains(&t) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            DwellLaw::TruncatedWeibull { shape, scale, .. } => {
                if t <= 0.0 || t > self.support_max() {
                    return 0.0;
                }
                let z = t / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
            DwellLaw::TruncatedExponential { rate, cap } => {
                if t < 0.0 || t > cap {
                    0.0
                } else {
                    rate * (-rate * t).exp()
                }
            }
            DwellLaw::Deterministic { .. } | DwellLaw::Empirical { .. } => 0.0,
        }
    }

    /// Right-continuous distribution function, atoms included.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            DwellLaw::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            DwellLaw::TruncatedWeibull { shape, scale, .. } => {
                if t >= self.support_max() {
                    1.0
                } else {
                    -(-(t / scale).powf(shape)).exp_m1()
                }
            }
            DwellLaw::Deterministic { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
            DwellLaw::TruncatedExponential { rate, cap } => {
                if t >= cap {
                    1.0
                } else {
                    -(-rate * t).exp_m1()
                }
            }
            DwellLaw::Empirical { ref samples } => {
                let below = samples.partition_point(|&s| s <= t);
                below as f64 / samples.len() as f64
            }
        }
    }

    /// Mass of the continuous part.
    pub fn continuous_mass(&self) -> f64 {
        1.0 - self.atoms().iter().map(|a| a.1).sum::<f64>()
    }

    /// Draws a dwell time by inversion of the distribution function.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            DwellLaw::Uniform { lo, hi } => lo + u * (hi - lo),
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            } => {
                if u >= 1.0 - tail_mass {
                    Self::weibull_cut(shape, scale, tail_mass)
                } else {
                    scale * (-(-u).ln_1p()).powf(shape.recip())
                }
            }
            DwellLaw::Deterministic { value } => value,
            DwellLaw::TruncatedExponential { rate, cap } => {
                let t = -(-u).ln_1p() / rate;
                if t >= cap {
                    cap
                } else {
                    t
                }
            }
            DwellLaw::Empirical { ref samples } => {
                let k = ((u * samples.len() as f64) as usize).min(samples.len() - 1);
                samples[k]
            }
        }
    }

    /// Problems with the law's parameters; empty when the law is admissible.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            DwellLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
                    out.push(format!("uniform law needs 0 <= lo < hi, got [{lo}, {hi}]"));
                }
            }
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            } => {
                if !(finite_pos(shape) && finite_pos(scale)) {
                    out.push("Weibull shape and scale must be positive".into());
                }
                if !(tail_mass > 0.0 && tail_mass < 1.0) {
                    out.push(format!(
                        "Weibull tail mass must lie in (0, 1), got {tail_mass}"
                    ));
                }
            }
            DwellLaw::Deterministic { value } => {
                if !finite_pos(value) {
                    out.push(format!("deterministic dwell must be positive, got {value}"));
                }
            }
            DwellLaw::TruncatedExponential { rate, cap } => {
                if !(finite_pos(rate) && finite_pos(cap)) {
                    out.push("truncated exponential needs positive rate and cap".into());
                }
            }
            DwellLaw::Empirical { ref samples } => {
                if samples.is_empty() {
                    out.push("empirical law has no samples".into());
                } else if samples.iter().any(|&s| !finite_pos(s)) {
                    out.push("empirical samples must be positive".into());
                } else if samples.windows(2).any(|w| w[0] > w[1]) {
                    out.push("empirical samples must be sorted".into());
                }
            }
        }
        if out.is_empty() {
            let mass = self.continuous_mass() + self.atoms().iter().map(|a| a.1).sum::<f64>();
            if (mass - 1.0).abs() > MASS_TOL || self.continuous_mass() < -MASS_TOL {
                out.push(format!("law has total mass {mass}"));
            }
        }
        out
    }
}

/// Finite mixture of nonnegative reset matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMixture {
    components: Vec<(f64, DMatrix<f64>)>,
}

impl JumpMixture {
    pub fn new(components: Vec<(f64, DMatrix<f64>)>) -> Self {
        Self { components }
    }

    pub fn fixed(matrix: DMatrix<f64>) -> Self {
        Self::new(vec![(1.0, matrix)])
    }

    pub fn identity(n: usize) -> Self {
        Self::fixed(DMatrix::identity(n, n))
    }

    pub fn components(&self) -> &[(f64, DMatrix<f64>)] {
        &self.components
    }

    /// Largest spectral norm over the components.
    pub fn norm_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|(_, j)| j.clone().svd(false, false).singular_values.max())
            .fold(0.0, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &DMatrix<f64> {
        let idx = pick_weighted(self.components.iter().map(|c| c.0), rng);
        &self.components[idx].1
    }

    fn problems(&self, n: usize, what: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.components.is_empty() {
            out.push(format!("{what} has no components"));
            return out;
        }
        let total: f64 = self.components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > MASS_TOL || self.components.iter().any(|c| !(c.0 >= 0.0)) {
            out.push(format!("{what} weights must be nonnegative and sum to 1"));
        }
        for (c, (_, j)) in self.components.iter().enumerate() {
            if j.shape() != (n, n) {
                out.push(format!("{what} component {} is not {n}x{n}", c + 1));
            } else if j.iter().any(|v| !v.is_finite()) {
                out.push(format!("{what} component {} has non-finite entries", c + 1));
            } else if j.iter().any(|&v| v < 0.0) {
                out.push(format!("{what} component {} is not nonnegative", c + 1));
            }
        }
        out
    }
}

/// Index drawn with probability proportional to `weights`.
pub(crate) fn pick_weighted<R: Rng + ?Sized>(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut R,
) -> usize {
    let u: f64 = rng.random::<f64>() * weights.clone().sum::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = k;
            acc += w;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Outcome of a model check; lists every violated condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self.problems))
        }
    }
}

fn check_modes(modes: &[DMatrix<f64>], out: &mut Vec<String>) -> Option<usize> {
    let Some(first) = modes.first() else {
        out.push("model has no modes".into());
        return None;
    };
    let n = first.nrows();
    if n == 0 {
        out.push("state dimension is zero".into());
        return None;
    }
    for (i, a) in modes.iter().enumerate() {
        if a.shape() != (n, n) {
            out.push(format!("mode {} is not {n}x{n}", i + 1));
        } else if a.iter().any(|v| !v.is_finite()) {
            out.push(format!("mode {} has non-finite entries", i + 1));
        } else if !is_metzler(a) {
            out.push(format!("mode {} not Metzler", i + 1));
        }
    }
    Some(n)
}

fn check_stochastic(p: &DMatrix<f64>, modes: usize, out: &mut Vec<String>) -> bool {
    if p.shape() != (modes, modes) {
        out.push(format!("transition matrix is not {modes}x{modes}"));
        return false;
    }
    for (i, row) in p.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > MASS_TOL {
            out.push(format!("row {} not stochastic", i + 1));
        }
    }
    true
}

/// Continuous-time positive semi-Markovian jump linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiMarkovModel {
    modes: Vec<DMatrix<f64>>,
    transition: DMatrix<f64>,
    dwell: Vec<Vec<Option<DwellLaw>>>,
    jumps: Vec<Vec<JumpMixture>>,
}

impl SemiMarkovModel {
    /// Model with identity resets and no dwell laws yet.
    pub fn new(modes: Vec<DMatrix<f64>>, transition: DMatrix<f64>) -> Self {
        let count = modes.len();
        let n = modes.first().map_or(0, |a| a.nrows());
        Self {
            modes,
            transition,
            dwell: vec![vec![None; count]; count],
            jumps: vec![vec![JumpMixture::identity(n); count]; count],
        }
    }

    /// Sets the dwell law of the edge `from → to` (0-based).
    pub fn with_dwell(mut self, from: usize, to: usize, law: DwellLaw) -> Self {
        self.dwell[from][to] = Some(law);
        self
    }

    pub fn with_jump(mut self, from: usize, to: usize, mix: JumpMixture) -> Self {
        self.jumps[from][to] = mix;
        self
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.modes.first().map_or(0, |a| a.nrows())
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> &DMatrix<f64> {
        &self.modes[i]
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn dwell(&self, from: usize, to: usize) -> Option<&DwellLaw> {
        self.dwell[from][to].as_ref()
    }

    pub fn jump(&self, from: usize, to: usize) -> &JumpMixture {
        &self.jumps[from][to]
    }

    /// The same model with every mode matrix shifted by `alpha·I`.
    pub fn shifted(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.modes {
            for k in 0..a.nrows() {
                a[(k, k)] += alpha;
            }
        }
        out
    }

    /// Edges `(from, to)` with positive transition probability.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.mode_count();
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.transition[(i, j)] > 0.0)
    }

    /// Uniform bound `T` on the dwell times.
    pub fn dwell_bound(&self) -> f64 {
        self.edges()
            .filter_map(|(i, j)| self.dwell(i, j))
            .map(DwellLaw::support_max)
            .fold(0.0, f64::max)
    }

    /// Uniform bound `R` on the spectral norm of the resets.
    pub fn jump_bound(&self) -> f64 {
        self.edges()
            .map(|(i, j)| self.jump(i, j).norm_bound())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut problems = Vec::new();
        let Some(n) = check_modes(&self.modes, &mut problems) else {
            return ValidationReport { problems };
        };
        if !check_stochastic(&self.transition, self.modes.len(), &mut problems) {
            return ValidationReport { problems };
        }
        for (i, j) in self.edges().collect::<Vec<_>>() {
            let edge = format!("edge {}->{}", i + 1, j + 1);
            match self.dwell(i, j) {
                None => problems.push(format!("{edge} has no dwell law")),
                Some(law) => {
                    problems.extend(law.problems().into_iter().map(|p| format!("{edge}: {p}")))
                }
            }
            problems.extend(self.jump(i, j).problems(n, &format!("{edge} jump")));
        }
        ValidationReport { problems }
    }

    pub fn sample_next_mode<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        pick_weighted(self.transition.row(from).iter().copied(), rng)
    }
}

/// Continuous-time Markovian jump linear system with generator `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    modes: Vec<DMatrix<f64>>,
    generator: DMatrix<f64>,
}

impl MarkovModel {
    pub fn new(modes: Vec<DMatrix<f64>>, generator: DMatrix<f64>) -> Self {
        Self { modes, generator }
    }

    pub fn dim(&self) -> usize {
        self.modes.first().map_or(0, |a| a.nrows())
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn validate(&self) -> ValidationReport {
        let mut problems = Vec::new();
        if check_modes(&self.modes, &mut problems).is_none() {
            return ValidationReport { problems };
        }
        let count = self.modes.len();
        let q = &self.generator;
        if q.shape() != (count, count) {
            problems.push(format!("generator is not {count}x{count}"));
            return ValidationReport { problems };
        }
        for i in 0..count {
            let row = q.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                problems.push(format!("generator row {} has non-finite entries", i + 1));
                continue;
            }
            if (0..count).any(|j| j != i && row[j] < 0.0) {
                problems.push(format!("generator row {} has a negative rate", i + 1));
            }
            let scale = row.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if row.iter().sum::<f64>().abs() > MASS_TOL * scale {
                problems.push(format!("generator row {} does not sum to zero", i + 1));
            }
        }
        ValidationReport { problems }
    }

    /// Equivalent semi-Markov description: embedded jump chain with
    /// exponential holding times truncated at `cap`.
    ///
    /// Paths agree with the Markov model up to the first holding time that
    /// exceeds `cap`. An absorbing mode becomes a self-loop of length `cap`.
    pub fn embedded_semi_markov(&self, cap: f64) -> SemiMarkovModel {
        let count = self.mode_count();
        let q = &self.generator;
        let mut p = DMatrix::zeros(count, count);
        let mut laws = vec![vec![None; count]; count];
        for i in 0..count {
            let rate = -q[(i, i)];
            if rate > 0.0 {
                for j in (0..count).filter(|&j| j != i) {
                    p[(i, j)] = q[(i, j)] / rate;
                    laws[i][j] = Some(DwellLaw::TruncatedExponential { rate, cap });
                }
            } else {
                p[(i, i)] = 1.0;
                laws[i][i] = Some(DwellLaw::Deterministic { value: cap });
            }
        }
        let mut model = SemiMarkovModel::new(self.modes.clone(), p);
        model.dwell = laws;
        model
    }
}

/// Discrete-time semi-Markovian jump linear system `x(k+1) = F_k x(k)`,
/// with `F_k` drawn from a finite mixture attached to the mode transition.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    dim: usize,
    transition: DMatrix<f64>,
    maps: Vec<Vec<Option<JumpMixture>>>,
}

impl DiscreteModel {
    pub fn new(dim: usize, transition: DMatrix<f64>) -> Self {
        let count = transition.nrows();
        Self {
            dim,
            transition,
            maps: vec![vec![None; count]; count],
        }
    }

    pub fn with_map(mut self, from: usize, to: usize, mix: JumpMixture) -> Self {
        self.maps[from][to] = Some(mix);
        self
    }

    /// The sampled discretization `x_d(k+1) = J_k e^{A h_k} x_d(k)` of a
    /// semi-Markov model whose dwell laws are purely atomic.
    pub fn from_atomic(model: &SemiMarkovModel) -> Result<Self> {
        let mut out = Self::new(model.dim(), model.transition().clone());
        for (i, j) in model.edges().collect::<Vec<_>>() {
            let law = model.dwell(i, j).ok_or_else(|| {
                Error::InvalidModel(vec![format!("edge {}->{} has no dwell law", i + 1, j + 1)])
            })?;
            if law.continuous_mass() > MASS_TOL {
                return Err(Error::InvalidArgument(format!(
                    "edge {}->{} dwell law has a continuous part",
                    i + 1,
                    j + 1
                )));
            }
            let mut components = Vec::new();
            for (h, mass) in law.atoms() {
                let flow = crate::expectation::matrix_exponential(model.mode(i), h)?;
                for (w, jm) in model.jump(i, j).components() {
                    components.push((mass * w, jm * &flow));
                }
            }
            out.maps[i][j] = Some(JumpMixture::new(components));
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode_count(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn map(&self, from: usize, to: usize) -> Option<&JumpMixture> {
        self.maps[from][to].as_ref()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("state dimension is zero".into());
        }
        let count = self.transition.nrows();
        if !check_stochastic(&self.transition, count, &mut problems) {
            return ValidationReport { problems };
        }
        for i in 0..count {
            for j in 0..count {
                if self.transition[(i, j)] <= 0.0 {
                    continue;
                }
                let what = format!("edge {}->{} map", i + 1, j + 1);
                match self.map(i, j) {
                    None => problems.push(format!("{what} missing")),
                    Some(mix) => problems.extend(mix.problems(self.dim, &what)),
                }
            }
        }
        ValidationReport { problems }
    }

    pub fn sample_next_mode<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        pick_weighted(self.transition.row(from).iter().copied(), rng)
    }
}
