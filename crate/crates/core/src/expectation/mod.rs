//! Conditional expectations of lifted transition matrices over the dwell-time
//! law of an edge.
//!
//! For an edge `from → to` with dwell law `F` and reset mixture `{(w_c, J_c)}`
//! this computes `E[(J e^{A_from h})^[m] | from, to]`. The reset is drawn
//! independently of `h`, so the expectation factors as
//! `(Σ_c w_c J_c^[m]) · ∫ (e^{A h})^[m] dF(h)`. The continuous part of `F` is
//! integrated by adaptive Gauss-Legendre quadrature and its atoms are summed
//! exactly.

pub mod expm;
pub mod quadrature;

use nalgebra::DMatrix;

pub use self::expm::matrix_exponential;
pub use self::quadrature::QuadratureConfig;

use crate::error::{Error, Result};
use crate::kron_lift::MultiIndexBasis;
use crate::model::{DwellLaw, JumpMixture, SemiMarkovModel};

/// `(e^{A h})^[m]`.
pub fn lifted_flow(a: &DMatrix<f64>, h: f64, basis: &MultiIndexBasis) -> Result<DMatrix<f64>> {
    let flow = matrix_exponential(a, h)?;
    Ok(basis.lift_matrix_power(&flow)?.into_inner())
}

/// `Σ_c w_c J_c^[m]`.
pub fn expected_lifted_jump(mix: &JumpMixture, basis: &MultiIndexBasis) -> Result<DMatrix<f64>> {
    let dim = basis.len();
    let mut acc = DMatrix::zeros(dim, dim);
    for (w, j) in mix.components() {
        acc += basis.lift_matrix_power(j)?.into_inner() * *w;
    }
    Ok(acc)
}

/// `∫ g(h) dF_c(h)` over the continuous part of `law`.
///
/// Weibull laws with shape below 1 have a density singular at 0; they are
/// integrated in `u = (h/λ)^k`, where the measure becomes `e^{-u} du`.
pub fn integrate_against<G>(
    law: &DwellLaw,
    g: G,
    dim: usize,
    cfg: &QuadratureConfig,
) -> Result<quadrature::Integral>
where
    G: Fn(f64) -> Result<Vec<f64>>,
{
    let weighted = |h: f64, w: f64| -> Result<Vec<f64>> {
        if w == 0.0 {
            return Ok(vec![0.0; dim]);
        }
        Ok(g(h)?.into_iter().map(|v| v * w).collect())
    };
    match *law {
        DwellLaw::TruncatedWeibull {
            shape,
            scale,
            tail_mass,
        } if shape < 1.0 => {
            let f = |u: f64| weighted(scale * u.powf(shape.recip()), (-u).exp());
            quadrature::integrate(&f, &[(0.0, -tail_mass.ln())], dim, cfg)
        }
        _ => {
            let f = |h: f64| weighted(h, law.density(h));
            quadrature::integrate(&f, &law.continuous_intervals(), dim, cfg)
        }
    }
}

/// `E[(e^{A h})^[m]]` for `h ~ law`, continuous part by adaptive quadrature.
pub fn expected_lifted_flow(
    a: &DMatrix<f64>,
    law: &DwellLaw,
    basis: &MultiIndexBasis,
    cfg: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let dim = basis.len();
    let mut acc = atom_sum(a, law, basis)?;
    let intervals = law.continuous_intervals();
    if !intervals.is_empty() && law.continuous_mass() > 0.0 {
        let integrand =
            |h: f64| -> Result<Vec<f64>> { Ok(lifted_flow(a, h, basis)?.as_slice().to_vec()) };
        let integral = match integrate_against(law, integrand, dim * dim, cfg) {
            Ok(r) => r.value,
            Err(Error::Accuracy {
                estimate,
                error_bound,
                subdivisions,
            }) => {
                // Report the whole expectation, not just the continuous part.
                let best = DMatrix::from_column_slice(dim, dim, &estimate) + &acc;
                return Err(Error::Accuracy {
                    estimate: row_major(&best),
                    error_bound,
                    subdivisions,
                });
            }
            Err(e) => return Err(e),
        };
        acc += DMatrix::from_column_slice(dim, dim, &integral);
    }
    Ok(acc)
}

/// `E[(J e^{A_from h})^[m] | σ_k = from, σ_{k+1} = to]`, without the
/// transition probability factor.
pub fn expected_lifted_transition(
    model: &SemiMarkovModel,
    from: usize,
    to: usize,
    basis: &MultiIndexBasis,
    cfg: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let law = edge_law(model, from, to)?;
    let flow = expected_lifted_flow(model.mode(from), law, basis, cfg)?;
    let jump = expected_lifted_jump(model.jump(from, to), basis)?;
    Ok(jump * flow)
}

/// Midpoint-rule evaluation of the same expectation on a uniform grid over
/// each continuity interval, atoms summed exactly. Independent of the
/// adaptive quadrature; used to cross-check it.
pub fn brute_force_expectation(
    model: &SemiMarkovModel,
    from: usize,
    to: usize,
    basis: &MultiIndexBasis,
    grid_points: usize,
) -> Result<DMatrix<f64>> {
    if grid_points < 10 {
        return Err(Error::InvalidArgument(
            "brute-force grid needs at least 10 points".into(),
        ));
    }
    let law = edge_law(model, from, to)?;
    let a = model.mode(from);
    let mut acc = atom_sum(a, law, basis)?;
    for (lo, hi) in law.continuous_intervals() {
        let step = (hi - lo) / grid_points as f64;
        for k in 0..grid_points {
            let h = lo + (k as f64 + 0.5) * step;
            let d = law.density(h);
            if d > 0.0 {
                acc += lifted_flow(a, h, basis)? * (d * step);
            }
        }
    }
    let jump = expected_lifted_jump(model.jump(from, to), basis)?;
    Ok(jump * acc)
}

fn edge_law(model: &SemiMarkovModel, from: usize, to: usize) -> Result<&DwellLaw> {
    model.dwell(from, to).ok_or_else(|| {
        Error::InvalidModel(vec![format!(
            "edge {}->{} has no dwell law",
            from + 1,
            to + 1
        )])
    })
}

fn atom_sum(a: &DMatrix<f64>, law: &DwellLaw, basis: &MultiIndexBasis) -> Result<DMatrix<f64>> {
    let dim = basis.len();
    let mut acc = DMatrix::zeros(dim, dim);
    for (h, mass) in law.atoms() {
        acc += lifted_flow(a, h, basis)? * mass;
    }
    Ok(acc)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
