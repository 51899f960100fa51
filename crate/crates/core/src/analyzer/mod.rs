//! Lifted stability matrices, stability verdicts, exact moment propagation
//! and parameter sweeps.
//!
//! Three lifted matrices are assembled here, each of size `(n_m·N)²` and
//! indexed in `N × N` blocks of side `n_m`:
//!
//! * semi-Markov: block `(i, j)` is `p_ji · E[(J e^{A_j h})^[m] | j → i]`;
//! * discrete: block `(i, j)` is `p_ji · E[F^[m] | j → i]`;
//! * Markov: `Qᵀ ⊗ I + diag((A_1)_[m], …, (A_N)_[m])`.
//!
//! The column block is the source mode, so the first two act on the vector
//! `E[e_σ ⊗ x^[m]]` by left multiplication. The first two are Schur tests
//! (spectral radius below one), the last a Hurwitz test.

pub mod spectral;
mod sweep;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::spectral::{spectral_abscissa, spectral_radius, SpectralValue};
pub use self::sweep::{grid, sweep, SweepPoint, SweepTable, CROSSING_WIDTH};

use crate::error::{Error, Result};
use crate::expectation::{
    expected_lifted_jump, expected_lifted_transition, matrix_exponential, QuadratureConfig,
};
use crate::kron_lift::MultiIndexBasis;
use crate::model::{DiscreteModel, MarkovModel, SemiMarkovModel};

/// Half-width of the band around the stability boundary reported as marginal.
pub const MARGINAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    SemiMarkovSchur,
    DiscreteSchur,
    MarkovHurwitz,
}

impl Criterion {
    pub fn is_schur(self) -> bool {
        !matches!(self, Criterion::MarkovHurwitz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn from_margin(margin: f64) -> Self {
        if margin.abs() < MARGINAL_TOL {
            Verdict::Marginal
        } else if margin > 0.0 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub criterion: Criterion,
    pub degree: usize,
    pub modes: usize,
    /// Lifted dimension `n_m`.
    pub lifted_dim: usize,
    #[serde(serialize_with = "serialize_rows")]
    pub lifted_matrix: DMatrix<f64>,
    /// Spectral radius for Schur criteria, spectral abscissa for Hurwitz.
    pub indicator: f64,
    /// Growth per unit of `‖x‖`: `ρ^{1/m}` or `η/m`.
    pub normalized_indicator: f64,
    /// `1 − ρ` or `−η`.
    pub margin: f64,
    pub verdict: Verdict,
    /// Eigenpair residual of the eigenvalue attaining the indicator.
    pub residual: f64,
}

impl StabilityReport {
    fn new(
        criterion: Criterion,
        basis: &MultiIndexBasis,
        modes: usize,
        lifted_matrix: DMatrix<f64>,
    ) -> Result<Self> {
        let m = basis.degree();
        let (spec, margin, normalized) = if criterion.is_schur() {
            let s = spectral_radius(&lifted_matrix)?;
            (s, 1.0 - s.value, s.value.powf(1.0 / m as f64))
        } else {
            let s = spectral_abscissa(&lifted_matrix)?;
            (s, -s.value, s.value / m as f64)
        };
        Ok(Self {
            criterion,
            degree: m,
            modes,
            lifted_dim: basis.len(),
            lifted_matrix,
            indicator: spec.value,
            normalized_indicator: normalized,
            margin,
            verdict: Verdict::from_margin(margin),
            residual: spec.residual,
        })
    }
}

pub(crate) fn serialize_rows<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.row_iter() {
        seq.serialize_element(&row.iter().copied().collect::<Vec<_>>())?;
    }
    seq.end()
}

fn place_block(target: &mut DMatrix<f64>, i: usize, j: usize, block: &DMatrix<f64>) {
    let d = block.nrows();
    target.view_mut((i * d, j * d), (d, d)).copy_from(block);
}

/// Lifted semi-Markov stability matrix.
pub fn lifted_semi_markov_matrix(
    model: &SemiMarkovModel,
    basis: &MultiIndexBasis,
    cfg: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    check_basis(basis, model.dim())?;
    let count = model.mode_count();
    let d = basis.len();
    let edges: Vec<(usize, usize)> = model.edges().collect();
    let blocks = edges
        .par_iter()
        .map(|&(from, to)| {
            expected_lifted_transition(model, from, to, basis, cfg)
                .map(|e| (from, to, e * model.transition()[(from, to)]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(d * count, d * count);
    for (from, to, block) in blocks {
        place_block(&mut out, to, from, &block);
    }
    Ok(out)
}

/// Lifted stability matrix of a discrete-time system.
pub fn lifted_discrete_matrix(
    model: &DiscreteModel,
    basis: &MultiIndexBasis,
) -> Result<DMatrix<f64>> {
    check_basis(basis, model.dim())?;
    let count = model.mode_count();
    let d = basis.len();
    let mut out = DMatrix::zeros(d * count, d * count);
    for from in 0..count {
        for to in 0..count {
            let p = model.transition()[(from, to)];
            if p <= 0.0 {
                continue;
            }
            let mix = model.map(from, to).ok_or_else(|| {
                Error::InvalidModel(vec![format!("edge {}->{} map missing", from + 1, to + 1)])
            })?;
            place_block(&mut out, to, from, &(expected_lifted_jump(mix, basis)? * p));
        }
    }
    Ok(out)
}

/// `Qᵀ ⊗ I_{n_m} + diag((A_i)_[m])`.
pub fn lifted_markov_generator(
    model: &MarkovModel,
    basis: &MultiIndexBasis,
) -> Result<DMatrix<f64>> {
    check_basis(basis, model.dim())?;
    let count = model.mode_count();
    let d = basis.len();
    let q = model.generator();
    let mut out = DMatrix::zeros(d * count, d * count);
    for i in 0..count {
        for j in 0..count {
            // Block (i, j) of Qᵀ ⊗ I is q_ji · I.
            let qji = q[(j, i)];
            if qji != 0.0 {
                for k in 0..d {
                    out[(i * d + k, j * d + k)] = qji;
                }
            }
        }
        let lifted = basis
            .lift_matrix_infinitesimal(&model.modes()[i])?
            .into_inner();
        let mut view = out.view_mut((i * d, i * d), (d, d));
        view += lifted;
    }
    Ok(out)
}

fn check_basis(basis: &MultiIndexBasis, n: usize) -> Result<()> {
    if basis.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: basis.n(),
        });
    }
    Ok(())
}

/// Exponential `m`-th mean stability of a semi-Markov model.
pub fn analyze_semi_markov(
    model: &SemiMarkovModel,
    degree: usize,
    cfg: &QuadratureConfig,
) -> Result<StabilityReport> {
    model.validate().into_result()?;
    let basis = MultiIndexBasis::new(model.dim(), degree)?;
    let matrix = lifted_semi_markov_matrix(model, &basis, cfg)?;
    StabilityReport::new(
        Criterion::SemiMarkovSchur,
        &basis,
        model.mode_count(),
        matrix,
    )
}

pub fn analyze_discrete(model: &DiscreteModel, degree: usize) -> Result<StabilityReport> {
    model.validate().into_result()?;
    let basis = MultiIndexBasis::new(model.dim(), degree)?;
    let matrix = lifted_discrete_matrix(model, &basis)?;
    StabilityReport::new(Criterion::DiscreteSchur, &basis, model.mode_count(), matrix)
}

pub fn analyze_markov(model: &MarkovModel, degree: usize) -> Result<StabilityReport> {
    model.validate().into_result()?;
    let basis = MultiIndexBasis::new(model.dim(), degree)?;
    let matrix = lifted_markov_generator(model, &basis)?;
    StabilityReport::new(Criterion::MarkovHurwitz, &basis, model.mode_count(), matrix)
}

/// `e_mode ⊗ x^[m]`.
pub fn initial_moment(
    basis: &MultiIndexBasis,
    mode_count: usize,
    mode: usize,
    x0: &[f64],
) -> Result<DVector<f64>> {
    if mode >= mode_count {
        return Err(Error::InvalidArgument(format!(
            "initial mode {} out of range 1..={mode_count}",
            mode + 1
        )));
    }
    if x0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "initial state must be nonnegative".into(),
        ));
    }
    let lifted = basis.lift_vector(x0)?;
    let d = basis.len();
    let mut v = DVector::zeros(d * mode_count);
    v.rows_mut(mode * d, d).copy_from(&lifted);
    Ok(v)
}

/// `v_0 = e_mode ⊗ x0^[m]`, `v_{k+1} = M v_k` for `k < k_max`.
pub fn propagate_discrete_moments(
    matrix: &DMatrix<f64>,
    basis: &MultiIndexBasis,
    mode: usize,
    x0: &[f64],
    k_max: usize,
) -> Result<Vec<DVector<f64>>> {
    let count = mode_count_of(matrix, basis)?;
    let mut v = initial_moment(basis, count, mode, x0)?;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(v.clone());
    for _ in 0..k_max {
        v = matrix * v;
        out.push(v.clone());
    }
    Ok(out)
}

/// `e^{T t} (e_mode ⊗ x0^[m])` at each grid time.
pub fn propagate_continuous_moments(
    generator: &DMatrix<f64>,
    basis: &MultiIndexBasis,
    mode: usize,
    x0: &[f64],
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let count = mode_count_of(generator, basis)?;
    if times.first().is_some_and(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "time grid must be ascending from 0".into(),
        ));
    }
    let v0 = initial_moment(basis, count, mode, x0)?;
    times
        .iter()
        .map(|&t| Ok(matrix_exponential(generator, t)? * &v0))
        .collect()
}

fn mode_count_of(matrix: &DMatrix<f64>, basis: &MultiIndexBasis) -> Result<usize> {
    let d = basis.len();
    if !matrix.is_square() || !matrix.nrows().is_multiple_of(d) || matrix.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: matrix.nrows(),
        });
    }
    Ok(matrix.nrows() / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::model::{DwellLaw, JumpMixture};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn single_deterministic_mode_is_lifted_flow() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -0.4]);
        let model = SemiMarkovModel::new(vec![a.clone()], scalar(1.0)).with_dwell(
            0,
            0,
            DwellLaw::Deterministic { value: 0.8 },
        );
        let basis = MultiIndexBasis::new(2, 2).unwrap();
        let m = lifted_semi_markov_matrix(&model, &basis, &QuadratureConfig::default()).unwrap();
        let flow = matrix_exponential(&a, 0.8).unwrap();
        assert_relative_eq!(
            m,
            basis.lift_matrix_power(&flow).unwrap().entries,
            epsilon = 1e-15
        );
    }

    #[test]
    fn column_block_is_the_source_mode() {
        let model = catalog::controller_failure(1.0);
        let basis = MultiIndexBasis::new(2, 1).unwrap();
        let m = lifted_semi_markov_matrix(&model, &basis, &QuadratureConfig::default()).unwrap();
        let block = |i: usize, j: usize| m.view((2 * i, 2 * j), (2, 2)).into_owned();
        assert_eq!(block(0, 0), DMatrix::zeros(2, 2));
        assert_eq!(block(1, 1), DMatrix::zeros(2, 2));
        assert!(block(0, 1).amax() > 0.0);
        // Block (1,2) carries the flow of mode 2 (unstable, uniform dwell):
        // its entries exceed one, while mode 1 contracts.
        assert!(block(0, 1)[(0, 0)] > 1.0);
        assert!(block(1, 0)[(0, 0)] < 1.0);
    }

    #[test]
    fn failure_model_regimes() {
        let cfg = QuadratureConfig::default();
        let r = analyze_semi_markov(&catalog::controller_failure(1.0), 1, &cfg).unwrap();
        assert!(r.indicator < 1.0 && r.indicator > 0.85, "{}", r.indicator);
        assert_eq!(r.verdict, Verdict::Stable);
        let r = analyze_semi_markov(&catalog::controller_failure(1.1), 1, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Unstable);
        let r = analyze_semi_markov(&catalog::controller_failure(0.908), 2, &cfg).unwrap();
        assert_relative_eq!(r.indicator, 1.0, epsilon = 0.01);
    }

    #[test]
    fn scaled_identity_discrete_model() {
        let d = DiscreteModel::new(1, scalar(1.0)).with_map(0, 0, JumpMixture::fixed(scalar(0.5)));
        let r = analyze_discrete(&d, 1).unwrap();
        assert_relative_eq!(r.indicator, 0.5, epsilon = 1e-14);
        assert_eq!(r.verdict, Verdict::Stable);
    }

    #[test]
    fn swapping_discrete_model() {
        let c = 0.8;
        let f = DMatrix::identity(2, 2) * c;
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = DiscreteModel::new(2, p)
            .with_map(0, 1, JumpMixture::fixed(f.clone()))
            .with_map(1, 0, JumpMixture::fixed(f));
        let r = analyze_discrete(&d, 1).unwrap();
        assert_relative_eq!(r.indicator, c, epsilon = 1e-12);
    }

    #[test]
    fn atomic_discretization_matches_semi_markov_matrix() {
        let a1 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.0, 0.2]);
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 1.0, 0.0]);
        let jump = JumpMixture::new(vec![
            (0.5, DMatrix::identity(2, 2)),
            (0.5, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0])),
        ]);
        let model = SemiMarkovModel::new(vec![a1, a2], p)
            .with_dwell(0, 0, DwellLaw::Deterministic { value: 0.4 })
            .with_dwell(0, 1, DwellLaw::Deterministic { value: 1.2 })
            .with_dwell(1, 0, DwellLaw::empirical(vec![0.5, 0.9]))
            .with_jump(0, 1, jump);
        let d = DiscreteModel::from_atomic(&model).unwrap();
        for m in 1..=3 {
            let basis = MultiIndexBasis::new(2, m).unwrap();
            let a =
                lifted_semi_markov_matrix(&model, &basis, &QuadratureConfig::default()).unwrap();
            let f = lifted_discrete_matrix(&d, &basis).unwrap();
            assert_relative_eq!(a, f, epsilon = 1e-13);
        }
    }

    #[test]
    fn single_mode_markov_is_lti_criterion() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]);
        let model = MarkovModel::new(vec![a.clone()], scalar(0.0));
        let basis = MultiIndexBasis::new(2, 2).unwrap();
        let t = lifted_markov_generator(&model, &basis).unwrap();
        assert_eq!(t, basis.lift_matrix_infinitesimal(&a).unwrap().entries);
    }

    #[test]
    fn markov_generator_is_metzler_and_shift_adds_m_alpha() {
        let model = catalog::closed_loop(
            &catalog::two_mode_feedback_problem(),
            &catalog::slow_switching_design(),
        );
        let alpha = 0.3;
        for m in 1..=3 {
            let basis = MultiIndexBasis::new(2, m).unwrap();
            let t = lifted_markov_generator(&model, &basis).unwrap();
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    assert!(i == j || t[(i, j)] >= 0.0);
                }
            }
            let shifted_modes = model
                .modes()
                .iter()
                .map(|a| a + DMatrix::identity(2, 2) * alpha)
                .collect();
            let shifted = MarkovModel::new(shifted_modes, model.generator().clone());
            let ts = lifted_markov_generator(&shifted, &basis).unwrap();
            let expected = &t + DMatrix::identity(t.nrows(), t.ncols()) * (m as f64 * alpha);
            assert_relative_eq!(ts, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn discrete_moments_of_scalar_contraction() {
        let c: f64 = 0.6;
        let f = DMatrix::identity(2, 2) * c;
        let d = DiscreteModel::new(2, scalar(1.0)).with_map(0, 0, JumpMixture::fixed(f));
        let m = 2;
        let basis = MultiIndexBasis::new(2, m).unwrap();
        let mat = lifted_discrete_matrix(&d, &basis).unwrap();
        let x0 = [1.0, 2.0];
        let vs = propagate_discrete_moments(&mat, &basis, 0, &x0, 5).unwrap();
        assert_relative_eq!(vs[0].norm(), 5.0, epsilon = 1e-14);
        for (k, v) in vs.iter().enumerate() {
            let expected = &vs[0] * c.powi((m * k) as i32);
            assert_relative_eq!(*v, expected, epsilon = 1e-14);
        }
        assert!(propagate_discrete_moments(&mat, &basis, 0, &[-1.0, 0.0], 1).is_err());
    }

    #[test]
    fn continuous_moments_reduce_to_lifted_flow() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]);
        let model = MarkovModel::new(vec![a.clone()], scalar(0.0));
        let basis = MultiIndexBasis::new(2, 2).unwrap();
        let t = lifted_markov_generator(&model, &basis).unwrap();
        let x0 = [0.4, 1.0];
        let times = [0.0, 0.5, 2.0];
        let vs = propagate_continuous_moments(&t, &basis, 0, &x0, &times).unwrap();
        assert_eq!(vs[0], basis.lift_vector(&x0).unwrap());
        for (v, &tt) in vs.iter().zip(&times) {
            let x = matrix_exponential(&a, tt).unwrap() * DVector::from_row_slice(&x0);
            assert_relative_eq!(
                *v,
                basis.lift_vector(x.as_slice()).unwrap(),
                epsilon = 1e-12
            );
        }
        assert!(propagate_continuous_moments(&t, &basis, 0, &x0, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn verdict_bands() {
        assert_eq!(Verdict::from_margin(0.1), Verdict::Stable);
        assert_eq!(Verdict::from_margin(-0.1), Verdict::Unstable);
        assert_eq!(Verdict::from_margin(5e-7), Verdict::Marginal);
    }
}
