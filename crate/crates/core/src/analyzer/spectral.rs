//! Spectral radius and spectral abscissa with eigenvector diagnostics.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Tolerance for locating the Perron root among the eigenvalues.
pub const PERRON_TOL: f64 = 1e-9;

/// An eigenvalue with right and left eigenvectors, `M v = λ v` and
/// `wᵀ M = λ wᵀ`.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: C64,
    pub right: DVector<C64>,
    pub left: DVector<C64>,
    /// `‖M v − λ v‖ / ‖v‖`.
    pub residual: f64,
}

/// A spectral indicator together with the eigenvalue attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralValue {
    pub value: f64,
    pub eigenvalue_re: f64,
    pub eigenvalue_im: f64,
    pub residual: f64,
}

/// All eigenvalues of a real square matrix, from the real Schur form of its
/// balanced version.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    check_input(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(balance(m).0, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Parlett-Reinsch balancing: `D⁻¹ M D` with `D` a diagonal of powers of two
/// chosen so each row and column have comparable off-diagonal mass. Exact in
/// floating point and spectrum-preserving; lifted matrices can mix entries
/// of size 1e18 and 1, which otherwise ruins the Schur form's accuracy.
pub fn balance(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    const RADIX: f64 = 2.0;
    let n = m.nrows();
    let mut b = m.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                c += b[(j, i)].abs();
                r += b[(i, j)].abs();
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            while c < r / RADIX {
                c *= RADIX;
                r /= RADIX;
                f *= RADIX;
            }
            while c >= r * RADIX {
                c /= RADIX;
                r *= RADIX;
                f /= RADIX;
            }
            if c + r < 0.95 * total {
                converged = false;
                b.row_mut(i).unscale_mut(f);
                b.column_mut(i).scale_mut(f);
                d[i] *= f;
            }
        }
    }
    (b, d)
}

/// `ρ(M) = max |λ|`.
///
/// For entrywise nonnegative `M` the maximum is checked to be attained by a
/// real nonnegative eigenvalue (the Perron root); the reported eigenpair is
/// that root.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<SpectralValue> {
    let eigs = eigenvalues(m)?;
    if eigs.is_empty() {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let rho = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tol = PERRON_TOL * rho.max(1.0);
    let nonnegative = m.iter().all(|&v| v >= 0.0);
    let target = if nonnegative {
        eigs.iter()
            .copied()
            .filter(|l| l.im.abs() <= tol && l.re >= 0.0 && (l.re - rho).abs() <= tol)
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .ok_or_else(|| {
                Error::Numerical(format!(
                    "nonnegative matrix has no real eigenvalue at its spectral radius {rho}"
                ))
            })?
    } else {
        eigs.iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("nonempty")
    };
    let pair = eigenpair(m, target)?;
    Ok(SpectralValue {
        value: rho,
        eigenvalue_re: pair.value.re,
        eigenvalue_im: pair.value.im,
        residual: pair.residual,
    })
}

/// `η(M) = max Re λ`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<SpectralValue> {
    let (pair, _) = rightmost_eigenpair(m)?;
    Ok(SpectralValue {
        value: pair.value.re,
        eigenvalue_re: pair.value.re,
        eigenvalue_im: pair.value.im,
        residual: pair.residual,
    })
}

/// Rightmost eigenpair (nonnegative imaginary part when complex) and the
/// distance to the nearest other eigenvalue, its conjugate excluded.
pub fn rightmost_eigenpair(m: &DMatrix<f64>) -> Result<(Eigenpair, f64)> {
    let eigs = eigenvalues(m)?;
    if eigs.is_empty() {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let (idx, target) = eigs
        .iter()
        .copied()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .expect("nonempty");
    let target = if target.im < 0.0 {
        target.conj()
    } else {
        target
    };
    let scale = eigs.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let mut conj_skipped = target.im.abs() <= 1e-12 * scale;
    let mut gap = f64::INFINITY;
    for (k, l) in eigs.iter().enumerate() {
        if k == idx {
            continue;
        }
        if !conj_skipped && (*l - target.conj()).norm() <= 1e-9 * scale {
            conj_skipped = true;
            continue;
        }
        gap = gap
            .min((*l - target).norm())
            .min((*l - target.conj()).norm());
    }
    Ok((eigenpair(m, target)?, gap))
}

/// Right and left eigenvectors for a computed eigenvalue, by inverse
/// iteration with a slightly perturbed shift.
pub fn eigenpair(m: &DMatrix<f64>, value: C64) -> Result<Eigenpair> {
    // Iterate on the balanced matrix B = D⁻¹ M D, then map back:
    // right vectors of M are D v, left vectors are D⁻¹ w.
    let (b, d) = balance(m);
    let bc: DMatrix<C64> = b.map(|v| C64::new(v, 0.0));
    let vb = inverse_iteration(&bc, value)?;
    let wb = inverse_iteration(&bc.transpose(), value)?;
    let residual = (&bc * &vb - &vb * value).norm() / vb.norm();
    let right = normalized(DVector::from_fn(d.len(), |i, _| vb[i] * d[i]));
    let left = normalized(DVector::from_fn(d.len(), |i, _| wb[i] / d[i]));
    Ok(Eigenpair {
        value,
        right,
        left,
        residual,
    })
}

/// Unit vector with its largest component real and positive; scaled by the
/// largest entry first so the norm cannot overflow.
fn normalized(v: DVector<C64>) -> DVector<C64> {
    let (imax, big) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, x)| (i, x.norm()))
        .expect("nonempty");
    let v = v / C64::new(big, 0.0);
    let phase = v[imax] / C64::new(v[imax].norm(), 0.0);
    let v = v / phase;
    let n = v.norm();
    v / C64::new(n, 0.0)
}

fn inverse_iteration(m: &DMatrix<C64>, value: C64) -> Result<DVector<C64>> {
    let n = m.nrows();
    let scale = m.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let shift = value + C64::new(scale * 1e-12, scale * 1e-13);
    let mut shifted = m.clone();
    for k in 0..n {
        shifted[(k, k)] -= shift;
    }
    let lu = shifted.lu();
    // Deterministic start vector with no special alignment.
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * (i as f64).sin(), 0.0));
    v /= C64::new(v.norm(), 0.0);
    for _ in 0..4 {
        let next = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("inverse iteration hit a singular system".into()))?;
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical("inverse iteration diverged".into()));
        }
        v = next / C64::new(norm, 0.0);
    }
    Ok(normalized(v))
}

fn check_input(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn badly_scaled_bipartite_radius() {
        // Off-diagonal blocks of size ~1e18 and ~1: eigenvalues come in ±ρ
        // pairs that the unbalanced Schur form resolves poorly.
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 3.0523e18, 3.6619e17, //
                0.0, 0.0, 6.2911e17, 7.5475e16, //
                8.8923, 88.642, 0.0, 0.0, //
                70.323, 724.16, 0.0, 0.0,
            ],
        );
        let (b, d) = balance(&m);
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(b[(i, j)], m[(i, j)] * d[j] / d[i], max_relative = 1e-15);
            }
        }
        // ρ² is the Perron root of the product of the two blocks.
        let p = m.view((0, 2), (2, 2)) * m.view((2, 0), (2, 2));
        let (tr, det) = (p.trace(), p.determinant());
        let rho2 = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let r = spectral_radius(&m).unwrap();
        assert_relative_eq!(r.value, rho2.sqrt(), max_relative = 1e-9);
        assert!(r.eigenvalue_im == 0.0 && r.eigenvalue_re > 0.0);
        assert!(r.residual <= 1e-6 * r.value);
    }

    #[test]
    fn diagonal_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.9]);
        let r = spectral_radius(&m).unwrap();
        assert_relative_eq!(r.value, 0.9, epsilon = 1e-15);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn swap_radius() {
        let c = 0.7;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, c, c, 0.0]);
        let r = spectral_radius(&m).unwrap();
        assert_relative_eq!(r.value, c, epsilon = 1e-14);
        assert_relative_eq!(r.eigenvalue_re, c, epsilon = 1e-14);
    }

    #[test]
    fn abscissa_of_rotation_plus_shift() {
        let m = DMatrix::from_row_slice(3, 3, &[-0.5, -2.0, 0.0, 2.0, -0.5, 0.0, 0.0, 0.0, -1.0]);
        let r = spectral_abscissa(&m).unwrap();
        assert_relative_eq!(r.value, -0.5, epsilon = 1e-12);
        assert_relative_eq!(r.eigenvalue_im.abs(), 2.0, epsilon = 1e-12);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn left_and_right_vectors() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.5, -1.0, 0.3, 0.0, 0.7, 0.2]);
        let (pair, gap) = rightmost_eigenpair(&m).unwrap();
        assert!(gap > 1e-3);
        let mc = m.map(|v| C64::new(v, 0.0));
        let lhs = pair.left.transpose() * &mc;
        let rhs = pair.left.transpose() * pair.value;
        assert!((lhs - rhs).norm() < 1e-10);
        assert!(pair.residual < 1e-10);
    }

    #[test]
    fn repeated_eigenvalue_has_zero_gap() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (_, gap) = rightmost_eigenpair(&m).unwrap();
        assert!(gap < 1e-6);
    }

    #[test]
    fn rejects_non_square() {
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }
}
