//! Small dense complex linear algebra used throughout the crate.
//!
//! Everything here is a thin layer over `nalgebra`; the matrices involved
//! are at most a few dozen rows.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub mod extended;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `i^p` without going through `powi`, so the result is exact.
pub fn i_pow(p: u32) -> Complex64 {
    match p % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `(i g)^p`, the p-th derivative of `exp(i g φ)` at `φ = 0`.
pub fn i_gap_pow(gap: f64, p: u32) -> Complex64 {
    i_pow(p) * gap.powi(p as i32)
}

/// Singular values in descending order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Spectral (l2 operator) norm.
pub fn norm2(a: &CMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// l2 condition number `σ_max / σ_min`.
///
/// Returns `f64::INFINITY` for numerically singular or non-square matrices,
/// where `σ_min` is below `max(rows, cols) · ε · σ_max`.
pub fn condition_number(a: &CMatrix) -> f64 {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return f64::INFINITY;
    }
    let s = singular_values(a);
    let (max, min) = (s[0], s[s.len() - 1]);
    if max == 0.0 || min <= max * (a.nrows() as f64) * f64::EPSILON {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn determinant(a: &CMatrix) -> Complex64 {
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    a.clone().lu().determinant()
}

fn check_square(a: &CMatrix, rhs: &CVector) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if rhs.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: rhs.len(),
        });
    }
    Ok(())
}

pub fn solve(a: &CMatrix, rhs: &CVector) -> Result<CVector> {
    check_square(a, rhs)?;
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular("LU factorization has a zero pivot".into()))
}

/// LU solve followed by refinement steps whose residual is accumulated in
/// double-double, so the result is accurate for the matrix as rounded.
pub fn solve_refined(a: &CMatrix, rhs: &CVector, steps: usize) -> Result<CVector> {
    check_square(a, rhs)?;
    let lu = a.clone().lu();
    let mut x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Singular("LU factorization has a zero pivot".into()))?;
    for _ in 0..steps {
        let r = extended::residual(a, &x, rhs);
        match lu.solve(&r) {
            Some(dx) => x += dx,
            None => break,
        }
    }
    Ok(x)
}

/// Copy of `a` with column `col` replaced by `v`.
pub fn replace_column(a: &CMatrix, col: usize, v: &CVector) -> CMatrix {
    let mut out = a.clone();
    out.set_column(col, v);
    out
}

pub fn to_complex(v: &[f64]) -> CVector {
    CVector::from_iterator(v.len(), v.iter().map(|&x| Complex64::new(x, 0.0)))
}

pub fn max_abs_imag(v: &CVector) -> f64 {
    v.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

pub fn real_parts(v: &CVector) -> Vec<f64> {
    v.iter().map(|z| z.re).collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i_powers_cycle() {
        assert_eq!(i_pow(0), Complex64::new(1.0, 0.0));
        assert_eq!(i_pow(1), I);
        assert_eq!(i_pow(2), Complex64::new(-1.0, 0.0));
        assert_eq!(i_pow(3), -I);
        assert_eq!(i_pow(7), -I);
        assert_eq!(i_gap_pow(2.0, 3), Complex64::new(0.0, -8.0));
    }

    #[test]
    fn identity_condition_is_one() {
        let id = CMatrix::identity(4, 4);
        assert!((condition_number(&id) - 1.0).abs() < 1e-14);
        assert!((norm2(&id) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn all_ones_is_singular() {
        let ones = CMatrix::from_element(3, 3, Complex64::new(1.0, 0.0));
        assert!(condition_number(&ones).is_infinite());
    }

    #[test]
    fn solve_rejects_shape_mismatch() {
        let a = CMatrix::identity(2, 3);
        assert!(solve(&a, &CVector::zeros(2)).is_err());
    }
}
