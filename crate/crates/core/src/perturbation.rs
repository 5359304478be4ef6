//! First-order behavior of equidistant rules when the spectrum is slightly
//! perturbed.
//!
//! Everything works on the unitary-normalized reduced system
//! `Ẽ = E/√(2n−1)`, `μ̃ = μ/√(2n−1)` at the optimal phases. The perturbed
//! system is `(Ẽ + εR̃) b = μ̃ + εr̃`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equidistant::{optimal_phases, EquidistantStructure};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::synthesis::{design_matrix, first_derivative, target_rhs};

pub use crate::linalg::condition_number;

/// Perturbation directions for matrix and right-hand side, at scale `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationData {
    /// `R̃`, first row zero.
    pub matrix: CMatrix,
    /// `r̃`.
    pub rhs: CVector,
    pub epsilon: f64,
}

impl PerturbationData {
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be non-negative, got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }
}

/// Unnormalized `R`: row for gap `±kΔ`, column `x` holds
/// `±(iτ/Δ) x e^{±ikxτ}` at the optimal phases.
pub fn raw_perturbation_matrix(es: &EquidistantStructure) -> CMatrix {
    let rows = es.frequency_set().row_gaps();
    let phases = optimal_phases(es);
    let scale = es.tau() / es.delta();
    CMatrix::from_fn(rows.len(), phases.len(), |r, x| {
        let g = rows[r];
        if g == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        linalg::I * scale * g.signum() * (x + 1) as f64 * Complex64::from_polar(1.0, g * phases[x])
    })
}

/// `R̃ = R/√(2n−1)` and `r̃ = i·(1, …, 1)/√(2n−1)`, at unit ε.
pub fn perturbation_matrices(es: &EquidistantStructure) -> PerturbationData {
    let norm = (es.m() as f64).sqrt();
    PerturbationData {
        matrix: raw_perturbation_matrix(es).unscale(norm),
        rhs: CVector::from_element(es.m(), linalg::I / norm),
        epsilon: 1.0,
    }
}

/// `(Ẽ, μ̃)` for the first derivative.
pub fn normalized_system(es: &EquidistantStructure) -> (CMatrix, CVector) {
    let rows = es.frequency_set().row_gaps();
    let norm = (es.m() as f64).sqrt();
    (
        design_matrix(&rows, &optimal_phases(es)).unscale(norm),
        target_rhs(&rows, &first_derivative()).unscale(norm),
    )
}

/// `b0 + ε E^{-1}(r − R b0)`.
pub fn linearized_solution(
    e: &CMatrix,
    pd: &PerturbationData,
    b0: &[f64],
    epsilon: f64,
) -> Result<CVector> {
    let b0 = linalg::to_complex(b0);
    if epsilon == 0.0 {
        return Ok(b0);
    }
    let db = linalg::solve(e, &(&pd.rhs - &pd.matrix * &b0))?;
    Ok(b0 + db * Complex64::new(epsilon, 0.0))
}

/// Solution of `(E + εR) b = μ + εr`.
pub fn exact_perturbed_solution(
    e: &CMatrix,
    mu: &CVector,
    pd: &PerturbationData,
    epsilon: f64,
) -> Result<CVector> {
    let eps = Complex64::new(epsilon, 0.0);
    linalg::solve(&(e + &pd.matrix * eps), &(mu + &pd.rhs * eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    /// `k(E)(ε‖r‖/‖μ‖ + ε‖R‖/‖E‖)` for `‖δb‖/‖b‖`.
    pub relative: f64,
    /// `ε(‖r̃‖ + ‖R̃‖)‖b0‖` for `‖δb‖`.
    pub absolute: f64,
    /// Looser bound `4εΔ(1 + √(2n−1) R_max)(n−1)(2^n−1)² / √(2n−1)`.
    pub closed: f64,
    pub condition_number: f64,
}

/// Error bounds for the normalized equidistant system with data `pd` at
/// scale `epsilon`.
pub fn error_bound(
    es: &EquidistantStructure,
    pd: &PerturbationData,
    b0: &[f64],
    epsilon: f64,
) -> ErrorBound {
    let (e, mu) = normalized_system(es);
    let k = condition_number(&e);
    let r_norm = pd.rhs.norm();
    let big_r_norm = linalg::norm2(&pd.matrix);
    let relative = k * (epsilon * r_norm / mu.norm() + epsilon * big_r_norm / linalg::norm2(&e));
    let absolute = epsilon * (r_norm + big_r_norm) * linalg::l2(b0);

    let r_max = raw_perturbation_matrix(es)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let sqrt_m = (es.m() as f64).sqrt();
    let n = es.n() as f64;
    let closed = 4.0
        * epsilon
        * es.delta()
        * (1.0 + sqrt_m * r_max)
        * (n - 1.0)
        * (2f64.powi(es.n() as i32) - 1.0).powi(2)
        / sqrt_m;
    ErrorBound {
        relative,
        absolute,
        closed,
        condition_number: k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equidistant::closed_form_rule;

    fn es(n: usize) -> EquidistantStructure {
        EquidistantStructure::new(n, 1.0).unwrap()
    }

    #[test]
    fn n2_row_layout() {
        let e = es(2);
        let pd = perturbation_matrices(&e);
        let tau = e.tau();
        let pre = linalg::I * tau / 3f64.sqrt();
        let expected = [
            pre * Complex64::from_polar(1.0, -tau),
            pre * 2.0 * Complex64::from_polar(1.0, -2.0 * tau),
            pre * 3.0,
        ];
        for x in 0..3 {
            assert!((pd.matrix[(1, x)] - expected[x]).norm() < 1e-12);
            assert_eq!(pd.matrix[(0, x)], Complex64::new(0.0, 0.0));
        }
        assert!((pd.rhs.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normalized_matrix_has_unit_condition() {
        for n in 2..=6 {
            let (e, _) = normalized_system(&es(n));
            assert!((condition_number(&e) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn linearization_at_zero_is_exact() {
        let e = es(3);
        let (m, _) = normalized_system(&e);
        let b0 = closed_form_rule(&e, 1).coefficients;
        let lin = linearized_solution(&m, &perturbation_matrices(&e), &b0, 0.0).unwrap();
        assert_eq!(linalg::real_parts(&lin), b0);
    }

    #[test]
    fn linear_and_exact_agree_for_tiny_epsilon() {
        let e = es(3);
        let (m, mu) = normalized_system(&e);
        let pd = perturbation_matrices(&e);
        let b0 = closed_form_rule(&e, 1).coefficients;
        let lin = linearized_solution(&m, &pd, &b0, 1e-8).unwrap();
        let exact = exact_perturbed_solution(&m, &mu, &pd, 1e-8).unwrap();
        assert!((lin - exact).norm() < 1e-12);
    }

    #[test]
    fn zero_epsilon_bound_is_zero() {
        let e = es(3);
        let b0 = closed_form_rule(&e, 1).coefficients;
        let b = error_bound(&e, &perturbation_matrices(&e), &b0, 0.0);
        assert_eq!((b.relative, b.absolute, b.closed), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_negative_epsilon() {
        assert!(perturbation_matrices(&es(2)).with_epsilon(-1.0).is_err());
    }
}
