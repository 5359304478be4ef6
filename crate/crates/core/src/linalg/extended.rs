//! Double-double arithmetic for the few places where plain `f64` rounding
//! would swamp a cross-check: residuals for iterative refinement and
//! determinant ratios in Cramer's rule.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

use super::{CMatrix, CVector};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from_f64(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::from_f64(q3)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cdd {
    re: Dd,
    im: Dd,
}

impl Cdd {
    fn from_c64(z: Complex64) -> Self {
        Cdd {
            re: Dd::from_f64(z.re),
            im: Dd::from_f64(z.im),
        }
    }

    fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    fn norm_sqr(self) -> Dd {
        self.re * self.re + self.im * self.im
    }

    fn magnitude(self) -> f64 {
        self.to_c64().norm()
    }
}

impl Add for Cdd {
    type Output = Cdd;
    fn add(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Sub for Cdd {
    type Output = Cdd;
    fn sub(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl Mul for Cdd {
    type Output = Cdd;
    fn mul(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl Div for Cdd {
    type Output = Cdd;
    fn div(self, o: Cdd) -> Cdd {
        let d = o.norm_sqr();
        Cdd {
            re: (self.re * o.re + self.im * o.im) / d,
            im: (self.im * o.re - self.re * o.im) / d,
        }
    }
}

/// `rhs − a·x`, accumulated in double-double and rounded once.
pub fn residual(a: &CMatrix, x: &CVector, rhs: &CVector) -> CVector {
    CVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|i| {
            let mut acc = Cdd::from_c64(rhs[i]);
            for j in 0..a.ncols() {
                acc = acc - Cdd::from_c64(a[(i, j)]) * Cdd::from_c64(x[j]);
            }
            acc.to_c64()
        }),
    )
}

fn determinant_dd(a: &CMatrix) -> Cdd {
    let n = a.nrows();
    let mut m: Vec<Vec<Cdd>> = (0..n)
        .map(|i| (0..n).map(|j| Cdd::from_c64(a[(i, j)])).collect())
        .collect();
    let mut det = Cdd::from_c64(Complex64::new(1.0, 0.0));
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| m[i][k].magnitude().total_cmp(&m[j][k].magnitude()))
            .unwrap_or(k);
        if m[pivot][k].magnitude() == 0.0 {
            return Cdd::default();
        }
        if pivot != k {
            m.swap(pivot, k);
            det = Cdd::default() - det;
        }
        det = det * m[k][k];
        let (upper, lower) = m.split_at_mut(k + 1);
        let pivot_row = &upper[k];
        for row in lower {
            let f = row[k] / pivot_row[k];
            for (x, &p) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                *x = *x - f * p;
            }
        }
    }
    det
}

/// `det num / det den` with both determinants and the quotient carried in
/// double-double. Returns `None` when `den` is exactly singular.
pub fn determinant_ratio(num: &CMatrix, den: &CMatrix) -> Option<Complex64> {
    let d = determinant_dd(den);
    if d.magnitude() == 0.0 {
        return None;
    }
    Some((determinant_dd(num) / d).to_c64())
}
