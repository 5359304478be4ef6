//! Estimator variance, Chebyshev intervals and stationarity of `Σ b_x²` in the
//! phases.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::model::{sample_noisy, FourierModel, NoiseSpec};
use crate::spectrum::FrequencySet;
use crate::synthesis::{
    build_rectangular_system, build_system_for, duplicate_phase_error, find_duplicate_phases,
    phase_derivative_column, DerivativeTerm, LinearSystem, ShiftRule, DEFAULT_CONDITION_CAP,
};

/// Largest system accepted by the determinant form of the stationarity residual.
pub const MAX_DETERMINANT_STATIONARITY_SIZE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// `Σ b_x² σ²_x`.
    pub variance: f64,
    pub point_variances: Vec<f64>,
    /// `Σ b_x²`, the variance for unit equal per-point variances.
    pub square_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Chebyshev half-width at `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

impl VarianceReport {
    pub fn with_confidence(mut self, eta: f64) -> Result<Self> {
        self.half_width = Some(confidence_interval(&self, eta)?);
        self.eta = Some(eta);
        Ok(self)
    }
}

pub fn variance_of_estimate(rule: &ShiftRule, point_variances: &[f64]) -> Result<VarianceReport> {
    if point_variances.len() != rule.len() {
        return Err(Error::DimensionMismatch {
            expected: rule.len(),
            actual: point_variances.len(),
        });
    }
    if point_variances
        .iter()
        .any(|v| !(*v >= 0.0) || !v.is_finite())
    {
        return Err(Error::invalid(
            "per-point variances must be finite and non-negative",
        ));
    }
    let variance = rule
        .coefficients
        .iter()
        .zip(point_variances)
        .map(|(b, s)| b * b * s)
        .sum();
    Ok(VarianceReport {
        variance,
        point_variances: point_variances.to_vec(),
        square_norm: rule.square_norm(),
        eta: None,
        half_width: None,
    })
}

/// Chebyshev half-width `ν = √(variance / η)`: the estimate lies within `ν`
/// of its mean with probability at least `1 − η`.
pub fn confidence_interval(report: &VarianceReport, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    Ok((report.variance / eta).sqrt())
}

/// One noisy application of the rule at `t`. Evaluation `x` of shot `shot`
/// uses call index `shot · len + x`, so every evaluation draws fresh noise.
pub fn noisy_estimate(
    rule: &ShiftRule,
    model: &FourierModel,
    t: f64,
    noise: &NoiseSpec,
    shot: u64,
) -> f64 {
    let len = rule.len() as u64;
    rule.phases
        .iter()
        .zip(&rule.coefficients)
        .enumerate()
        .map(|(x, (&phi, &b))| b * sample_noisy(model, t + phi, noise, shot * len + x as u64))
        .sum()
}

/// Mean and unbiased sample variance of `shots` noisy estimates.
pub fn empirical_moments(
    rule: &ShiftRule,
    model: &FourierModel,
    t: f64,
    noise: &NoiseSpec,
    shots: u64,
) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    let samples: Vec<f64> = (0..shots)
        .map(|s| noisy_estimate(rule, model, t, noise, s))
        .collect();
    Ok(sample_moments(&samples))
}

/// Sample mean and unbiased variance. Deviations are taken from the first
/// sample, so identical samples give exactly zero variance.
pub fn sample_moments(samples: &[f64]) -> (f64, f64) {
    let Some(&first) = samples.first() else {
        return (f64::NAN, f64::NAN);
    };
    let n = samples.len() as f64;
    let shift = samples.iter().map(|x| x - first).sum::<f64>() / n;
    let mean = first + shift;
    if samples.len() == 1 {
        return (mean, 0.0);
    }
    let var = samples
        .iter()
        .map(|x| (x - first - shift).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityMethod {
    /// Central differences of the solved coefficients.
    FiniteDifference,
    /// Ratios of determinants with replaced columns.
    Determinant,
    /// `∂b/∂φ_y = −b_y E^{-1} ∂v(φ_y)`.
    Analytic,
}

/// Well-posed square system at `phases`, or `IllPosed`.
pub(crate) fn checked_system(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    cap: f64,
) -> Result<LinearSystem> {
    let sys = build_system_for(freq, phases, orders)?;
    if let Some((i, j)) = find_duplicate_phases(&sys.row_gaps, &sys.phases) {
        return Err(duplicate_phase_error(i, j));
    }
    let cond = linalg::condition_number(&sys.matrix);
    if !(cond <= cap) {
        return Err(Error::ill_posed(cond, "condition number exceeds the cap"));
    }
    Ok(sys)
}

/// Finite-difference step for phases: `1e−6` of the shortest period.
pub fn phase_step(freq: &FrequencySet) -> f64 {
    let g = freq.max_frequency().unwrap_or(1.0);
    1e-6 * 2.0 * std::f64::consts::PI / g
}

/// `Σ_x b_x ∂b_x/∂φ_y` for each `y`, i.e. half the gradient of `Σ b_x²`.
pub fn stationarity_residual(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    method: StationarityMethod,
) -> Result<Vec<f64>> {
    let sys = checked_system(freq, phases, orders, DEFAULT_CONDITION_CAP)?;
    match method {
        StationarityMethod::Analytic => {
            Ok(analytic_gradient(&sys)?.1.iter().map(|g| 0.5 * g).collect())
        }
        StationarityMethod::FiniteDifference => finite_difference_residual(freq, &sys),
        StationarityMethod::Determinant => determinant_residual(&sys),
    }
}

/// `(Σ b_x², ∇ Σ b_x²)` from one LU factorization.
pub(crate) fn analytic_gradient(sys: &LinearSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let lu = sys.matrix.clone().lu();
    let b = lu
        .solve(&sys.rhs)
        .ok_or_else(|| Error::Singular("zero pivot".into()))?;
    let grad = (0..sys.phases.len())
        .map(|y| {
            let w = lu
                .solve(&phase_derivative_column(&sys.row_gaps, sys.phases[y]))
                .expect("factorization already succeeded");
            let db = w * (-b[y]);
            2.0 * b
                .iter()
                .zip(db.iter())
                .map(|(bx, d)| bx.re * d.re)
                .sum::<f64>()
        })
        .collect();
    Ok((linalg::real_parts(&b), grad))
}

fn solve_real(sys: &LinearSystem) -> Result<Vec<f64>> {
    Ok(linalg::real_parts(&linalg::solve(&sys.matrix, &sys.rhs)?))
}

fn finite_difference_residual(freq: &FrequencySet, sys: &LinearSystem) -> Result<Vec<f64>> {
    let h = phase_step(freq);
    let b = solve_real(sys)?;
    let mut out = Vec::with_capacity(b.len());
    for y in 0..b.len() {
        let shifted = |delta: f64| -> Result<Vec<f64>> {
            let mut phases = sys.phases.clone();
            phases[y] += delta;
            solve_real(&build_system_for(freq, &phases, &sys.orders)?)
        };
        let (plus, minus) = (shifted(h)?, shifted(-h)?);
        out.push(
            b.iter()
                .zip(plus.iter().zip(&minus))
                .map(|(bx, (p, m))| bx * (p - m) / (2.0 * h))
                .sum(),
        );
    }
    Ok(out)
}

/// With `D = det E`, `N_x = det E(φ/φ_x)` (column `x` replaced by `μ`),
/// `D_y` = `det E` with column `y` replaced by `∂v(φ_y)` and `N_{x,y}` the same
/// replacement in `N_x`'s matrix (zero for `x = y`):
///
/// `Σ_x b_x ∂b_x/∂φ_y = (Σ_x N_x N_{x,y} − (D_y/D) Σ_x N_x²) / D²`.
fn determinant_residual(sys: &LinearSystem) -> Result<Vec<f64>> {
    let m = sys.matrix.nrows();
    if m > MAX_DETERMINANT_STATIONARITY_SIZE {
        return Err(Error::invalid(format!(
            "determinant stationarity is limited to m ≤ {MAX_DETERMINANT_STATIONARITY_SIZE}, got {m}"
        )));
    }
    let d = linalg::determinant(&sys.matrix);
    if d.norm() == 0.0 {
        return Err(Error::Singular("det E vanishes".into()));
    }
    let numerators: Vec<CMatrix> = (0..m)
        .map(|x| linalg::replace_column(&sys.matrix, x, &sys.rhs))
        .collect();
    let n: Vec<Complex64> = numerators.iter().map(linalg::determinant).collect();
    let n_sq: Complex64 = n.iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(m);
    for y in 0..m {
        let dv: CVector = phase_derivative_column(&sys.row_gaps, sys.phases[y]);
        let d_y = linalg::determinant(&linalg::replace_column(&sys.matrix, y, &dv));
        let cross: Complex64 = (0..m)
            .filter(|&x| x != y)
            .map(|x| n[x] * linalg::determinant(&linalg::replace_column(&numerators[x], y, &dv)))
            .sum();
        out.push(((cross - d_y / d * n_sq) / (d * d)).re);
    }
    Ok(out)
}

/// `(Σ (b^γ_x)², ∇)` for the Tikhonov solution at fixed `γ`, via
/// `∂b^γ = Y^{-1}((∂E)†μ − ((∂E)†E + E†∂E) b^γ)` with `Y = γI + E†E`.
pub(crate) fn regularized_gradient(sys: &LinearSystem, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = &sys.matrix;
    let k = e.ncols();
    let y_mat = e.adjoint() * e + CMatrix::identity(k, k) * Complex64::new(gamma, 0.0);
    let chol = y_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("γI + E†E is not positive definite".into()))?;
    let b = chol.solve(&(e.adjoint() * &sys.rhs));
    let eb = e * &b;
    let grad = (0..k)
        .map(|y| {
            let dv = phase_derivative_column(&sys.row_gaps, sys.phases[y]);
            let mut rhs = (e.adjoint() * &dv) * (-b[y]);
            rhs[y] += dv.dotc(&sys.rhs) - dv.dotc(&eb);
            let db = chol.solve(&rhs);
            2.0 * b
                .iter()
                .zip(db.iter())
                .map(|(bx, d)| bx.re * d.re)
                .sum::<f64>()
        })
        .collect();
    Ok((linalg::real_parts(&b), grad))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(())
}

/// Half the gradient of `Σ (b^γ_x)²` by central differences; any number of
/// phases.
pub fn regularized_stationarity_residual(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let h = phase_step(freq);
    let objective = |phases: &[f64]| -> Result<f64> {
        let sys = build_rectangular_system(freq, phases, orders)?;
        Ok(linalg::l2(&regularized_gradient(&sys, gamma)?.0).powi(2))
    };
    (0..phases.len())
        .map(|y| {
            let mut p = phases.to_vec();
            p[y] += h;
            let plus = objective(&p)?;
            p[y] -= 2.0 * h;
            let minus = objective(&p)?;
            Ok(0.25 * (plus - minus) / h)
        })
        .collect()
}

/// The explicit matrix-calculus form of [`regularized_stationarity_residual`].
pub fn regularized_stationarity_explicit(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if phases.len() > MAX_DETERMINANT_STATIONARITY_SIZE {
        return Err(Error::invalid(format!(
            "explicit form is limited to {MAX_DETERMINANT_STATIONARITY_SIZE} phases"
        )));
    }
    let sys = build_rectangular_system(freq, phases, orders)?;
    Ok(regularized_gradient(&sys, gamma)?
        .1
        .iter()
        .map(|g| 0.5 * g)
        .collect())
}
