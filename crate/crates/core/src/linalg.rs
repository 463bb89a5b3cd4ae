//! Thin helpers over faer for real matrices acting on real or complex vectors.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

pub fn mat_vec_c(a: MatRef<'_, f64>, x: &[Complex64]) -> Vec<Complex64> {
    let x_mat = complex_to_columns(x);
    let y = a * &x_mat;
    columns_to_complex(y.as_ref())
}

/// Applies `a` to a batch of complex vectors in one product.
pub fn mat_vecs_c(a: MatRef<'_, f64>, xs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = a.ncols();
    let x_mat = Mat::from_fn(n, 2 * xs.len(), |i, j| {
        let z = xs[j / 2][i];
        if j % 2 == 0 { z.re } else { z.im }
    });
    let y = a * &x_mat;
    (0..xs.len())
        .map(|k| (0..a.nrows()).map(|i| Complex64::new(y[(i, 2 * k)], y[(i, 2 * k + 1)])).collect())
        .collect()
}

/// Packs a complex vector as an n×2 real matrix (real part, imaginary part).
pub fn complex_to_columns(x: &[Complex64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 2, |i, j| if j == 0 { x[i].re } else { x[i].im })
}

pub fn columns_to_complex(m: MatRef<'_, f64>) -> Vec<Complex64> {
    (0..m.nrows()).map(|i| Complex64::new(m[(i, 0)], m[(i, 1)])).collect()
}

pub fn dot_c(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn weighted_norm(x: &[Complex64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(z, w)| w * z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn weighted_norm_real(x: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(z, w)| w * z * z).sum::<f64>().sqrt()
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Largest singular value by power iteration on AᵀA.
pub fn spectral_norm(a: MatRef<'_, f64>, iterations: usize) -> f64 {
    let n = a.ncols();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let y = mat_vec(a, &x);
        sigma = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = mat_vec(a.transpose(), &y);
    }
    sigma
}

/// Dense LU with partial pivoting for repeated real and complex solves.
pub struct DenseLu {
    lu: PartialPivLu<f64>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::ShapeMismatch(format!("LU of {}x{} matrix", a.nrows(), a.ncols())));
        }
        if !a.norm_l2().is_finite() {
            return Err(Error::LinearAlgebra("non-finite matrix entries".into()));
        }
        Ok(Self { lu: a.partial_piv_lu(), n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.lu.solve(b)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&m);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_c(&self, b: &[Complex64]) -> Vec<Complex64> {
        let x = self.lu.solve(&complex_to_columns(b));
        columns_to_complex(x.as_ref())
    }

    pub fn solve_many_c(&self, bs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        if bs.is_empty() {
            return Vec::new();
        }
        let rhs = Mat::from_fn(self.n, 2 * bs.len(), |i, j| {
            let z = bs[j / 2][i];
            if j % 2 == 0 { z.re } else { z.im }
        });
        let x = self.lu.solve(&rhs);
        (0..bs.len())
            .map(|k| (0..self.n).map(|i| Complex64::new(x[(i, 2 * k)], x[(i, 2 * k + 1)])).collect())
            .collect()
    }
}

/// Singular values in descending order.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut s = a.singular_values().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(s)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut e = a
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(e)
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<Complex64>> {
    let e = a.eigenvalues().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    Ok(e.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_round_trip_complex() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { 4.0 } else { 1.0 / (1.0 + i as f64 + j as f64) });
        let x: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let b = mat_vec_c(a.as_ref(), &x);
        let lu = DenseLu::new(a.as_ref()).unwrap();
        let y = lu.solve_c(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, -5.0, 2.0][i] } else { 0.0 });
        assert!((spectral_norm(a.as_ref(), 200) - 5.0).abs() < 1e-9);
    }
}
