//! Degree-`m` monomial lifts of vectors and matrices.
//!
//! For `x ∈ ℝⁿ` the lifted vector `x^[m]` collects every monomial of degree
//! `m`, ordered lexicographically with `x₁^m` first, each scaled by
//! `w_α = sqrt(m! / Π α_i!)` so that `‖x^[m]‖₂ = ‖x‖₂^m`. A matrix `A` induces
//! two linear maps on the lifted space:
//!
//! * the power lift `A^[m]`, with `(Ax)^[m] = A^[m] x^[m]`;
//! * the infinitesimal lift `A_[m]`, with `ẋ = Ax ⇒ d/dt x^[m] = A_[m] x^[m]`.
//!
//! Both are built by exact polynomial expansion in the monomial basis.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest lifted dimension accepted by [`MultiIndexBasis::new`].
pub const MAX_LIFT_DIM: usize = 10_000;

/// Ordered monomial basis of degree `m` in `n` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexBasis {
    n: usize,
    m: usize,
    indices: Vec<Vec<u32>>,
    weights: Vec<f64>,
    rank: HashMap<Vec<u32>, usize>,
}

impl MultiIndexBasis {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "lift needs n >= 1 and m >= 1, got n = {n}, m = {m}"
            )));
        }
        let size = lift_dimension(n, m);
        if size.is_none_or(|s| s > MAX_LIFT_DIM as u128) {
            return Err(Error::Sizing {
                n,
                m,
                size: size.unwrap_or(u128::MAX),
                limit: MAX_LIFT_DIM,
            });
        }

        let mut indices = Vec::with_capacity(size.unwrap_or(0) as usize);
        let mut current = vec![0u32; n];
        push_indices(&mut indices, &mut current, 0, m as u32);

        let weights = indices
            .iter()
            .map(|alpha| {
                multinomial(m as u32, alpha)
                    .map(|c| (c as f64).sqrt())
                    .ok_or(Error::Sizing {
                        n,
                        m,
                        size: size.unwrap_or(u128::MAX),
                        limit: MAX_LIFT_DIM,
                    })
            })
            .collect::<Result<Vec<_>>>()?;

        let rank = indices
            .iter()
            .enumerate()
            .map(|(i, alpha)| (alpha.clone(), i))
            .collect();

        Ok(Self {
            n,
            m,
            indices,
            weights,
            rank,
        })
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Degree of the monomials.
    pub fn degree(&self) -> usize {
        self.m
    }

    /// Lifted dimension `n_m = binomial(n + m - 1, m)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Position of a multi-index in the basis.
    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.rank.get(alpha).copied()
    }

    /// `x^[m]`.
    pub fn lift_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(DVector::from_iterator(
            self.len(),
            self.indices.iter().zip(&self.weights).map(|(alpha, w)| {
                w * alpha
                    .iter()
                    .zip(x)
                    .map(|(&a, &xi)| xi.powi(a as i32))
                    .product::<f64>()
            }),
        ))
    }

    /// `A^[m]`, the power lift.
    pub fn lift_matrix_power(&self, a: &DMatrix<f64>) -> Result<LiftedMatrix> {
        self.check_square(a)?;
        let dim = self.len();
        let mut out = DMatrix::zeros(dim, dim);
        for (row, beta) in self.indices.iter().enumerate() {
            // Coefficients of Π_i ((Ax)_i)^{β_i} in the plain monomial basis.
            let mut poly: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            poly.insert(vec![0; self.n], 1.0);
            for (i, &power) in beta.iter().enumerate() {
                for _ in 0..power {
                    poly = multiply_linear_form(&poly, a.row(i).iter().copied());
                }
            }
            let w_row = self.weights[row];
            for (alpha, coeff) in poly {
                let col = self.rank[&alpha];
                out[(row, col)] += w_row * coeff / self.weights[col];
            }
        }
        Ok(LiftedMatrix {
            basis: self.clone(),
            entries: out,
        })
    }

    /// `A_[m]`, the infinitesimal lift.
    pub fn lift_matrix_infinitesimal(&self, a: &DMatrix<f64>) -> Result<LiftedMatrix> {
        self.check_square(a)?;
        let dim = self.len();
        let mut out = DMatrix::zeros(dim, dim);
        let mut gamma = vec![0u32; self.n];
        for (row, alpha) in self.indices.iter().enumerate() {
            // d/dt x^α = Σ_i α_i x^{α-e_i} Σ_j A_ij x_j
            for i in 0..self.n {
                if alpha[i] == 0 {
                    continue;
                }
                for j in 0..self.n {
                    let aij = a[(i, j)];
                    if aij == 0.0 {
                        continue;
                    }
                    gamma.copy_from_slice(alpha);
                    gamma[i] -= 1;
                    gamma[j] += 1;
                    let col = self.rank[&gamma];
                    out[(row, col)] +=
                        self.weights[row] * f64::from(alpha[i]) * aij / self.weights[col];
                }
            }
        }
        Ok(LiftedMatrix {
            basis: self.clone(),
            entries: out,
        })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got,
            });
        }
        Ok(())
    }

    fn check_square(&self, a: &DMatrix<f64>) -> Result<()> {
        self.check_dim(a.nrows())?;
        self.check_dim(a.ncols())
    }
}

/// A lifted operator together with the basis it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    pub basis: MultiIndexBasis,
    pub entries: DMatrix<f64>,
}

impl LiftedMatrix {
    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }
}

/// `binomial(n + m - 1, m)`, or `None` on overflow.
pub fn lift_dimension(n: usize, m: usize) -> Option<u128> {
    let (n, m) = (n as u128, m as u128);
    let top = n.checked_add(m)?.checked_sub(1)?;
    let k = m.min(top - m);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (top - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul(top - i)? / (i + 1);
    }
    Some(acc)
}

fn push_indices(out: &mut Vec<Vec<u32>>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_indices(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// `m! / Π α_i!` computed as a product of binomials.
fn multinomial(m: u32, alpha: &[u32]) -> Option<u128> {
    let mut acc: u128 = 1;
    let mut total = 0u32;
    for &a in alpha {
        total += a;
        acc = acc.checked_mul(binomial(total, a)?)?;
    }
    debug_assert_eq!(total, m);
    Some(acc)
}

fn binomial(n: u32, k: u32) -> Option<u128> {
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn multiply_linear_form(
    poly: &BTreeMap<Vec<u32>, f64>,
    coeffs: impl Iterator<Item = f64> + Clone,
) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for (alpha, &c) in poly {
        for (j, aj) in coeffs.clone().enumerate() {
            if aj == 0.0 {
                continue;
            }
            let mut next = alpha.clone();
            next[j] += 1;
            *out.entry(next).or_insert(0.0) += c * aj;
        }
    }
    out
}
