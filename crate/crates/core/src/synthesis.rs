//! Shift-rule synthesis for well-posed systems.
//!
//! A rule `Σ_p a_p f^{(p)}(t) = Σ_x b_x f(t + φ_x)` holds for every `f` whose
//! frequencies lie in a [`FrequencySet`] exactly when
//!
//! ```text
//! Σ_x b_x e^{i g φ_x} = Σ_p a_p (i g)^p      for every distinct gap g,
//! ```
//!
//! a linear system `E(φ) b = μ` with one row per distinct gap (zero included)
//! and one column per phase.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::spectrum::FrequencySet;

/// Condition number above which the direct solve reports `IllPosed`.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;
/// Largest system handled by the determinant routines.
pub const MAX_DETERMINANT_SIZE: usize = 9;
const REALNESS_TOL: f64 = 1e-9;
const DUPLICATE_COLUMN_TOL: f64 = 1e-12;

/// One `(p, a_p)` term of the target `Σ a_p f^{(p)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeTerm {
    pub p: u32,
    pub weight: f64,
}

impl DerivativeTerm {
    pub fn new(p: u32, weight: f64) -> Self {
        DerivativeTerm { p, weight }
    }
}

pub fn first_derivative() -> Vec<DerivativeTerm> {
    vec![DerivativeTerm::new(1, 1.0)]
}

pub fn single_order(p: u32) -> Vec<DerivativeTerm> {
    vec![DerivativeTerm::new(p, 1.0)]
}

pub(crate) fn orders_as_pairs(orders: &[DerivativeTerm]) -> Vec<(u32, f64)> {
    orders.iter().map(|o| (o.p, o.weight)).collect()
}

fn validate_orders(orders: &[DerivativeTerm]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::invalid("at least one derivative order is required"));
    }
    if orders.iter().any(|o| !o.weight.is_finite()) {
        return Err(Error::invalid("derivative weights must be finite"));
    }
    Ok(())
}

mod non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Module that produced a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMethod {
    Direct,
    Equidistant,
    Regularized,
}

/// Quality indicators stamped on every rule. An infinite condition number is
/// written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(with = "non_finite_as_null")]
    pub condition_number: f64,
    pub residual: f64,
    #[serde(default)]
    pub max_imag_discarded: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<RuleMethod>,
    /// Error bounds when an equidistant rule stands in for a perturbed spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<crate::perturbation::ErrorBound>,
}

/// Phases, real coefficients and the derivative target they realize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRule {
    pub phases: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub orders: Vec<DerivativeTerm>,
    /// Positive frequencies the rule was built for.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frequencies: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl ShiftRule {
    pub fn validate(&self) -> Result<()> {
        if self.phases.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.phases.len(),
                actual: self.coefficients.len(),
            });
        }
        if self
            .phases
            .iter()
            .chain(&self.coefficients)
            .any(|x| !x.is_finite())
        {
            return Err(Error::invalid("phases and coefficients must be finite"));
        }
        validate_orders(&self.orders)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn order_pairs(&self) -> Vec<(u32, f64)> {
        orders_as_pairs(&self.orders)
    }

    pub fn square_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b * b).sum()
    }

    /// `Σ_x b_x f(t + φ_x)`.
    pub fn apply(&self, t: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.phases
            .iter()
            .zip(&self.coefficients)
            .map(|(&phi, &b)| b * f(t + phi))
            .sum()
    }

    /// Like [`apply`](Self::apply) but stops at the first failed evaluation.
    pub fn try_apply<E>(
        &self,
        t: f64,
        mut f: impl FnMut(f64) -> std::result::Result<f64, E>,
    ) -> std::result::Result<f64, E> {
        let mut acc = 0.0;
        for (&phi, &b) in self.phases.iter().zip(&self.coefficients) {
            acc += b * f(t + phi)?;
        }
        Ok(acc)
    }
}

/// `E b = μ` together with the labels that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: CMatrix,
    pub rhs: CVector,
    pub row_gaps: Vec<f64>,
    pub phases: Vec<f64>,
    pub orders: Vec<DerivativeTerm>,
}

impl LinearSystem {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `E[row, x] = exp(i · gap(row) · φ_x)` for any number of rows and phases.
pub fn design_matrix(row_gaps: &[f64], phases: &[f64]) -> CMatrix {
    CMatrix::from_fn(row_gaps.len(), phases.len(), |r, x| {
        Complex64::from_polar(1.0, row_gaps[r] * phases[x])
    })
}

/// `∂E/∂φ_x` restricted to column `x`: entries `i g e^{i g φ_x}`.
pub fn phase_derivative_column(row_gaps: &[f64], phase: f64) -> CVector {
    CVector::from_iterator(
        row_gaps.len(),
        row_gaps
            .iter()
            .map(|&g| linalg::I * g * Complex64::from_polar(1.0, g * phase)),
    )
}

/// `Σ_p a_p (i g)^p` per row.
pub fn target_rhs(row_gaps: &[f64], orders: &[DerivativeTerm]) -> CVector {
    CVector::from_iterator(
        row_gaps.len(),
        row_gaps.iter().map(|&g| {
            orders
                .iter()
                .map(|o| o.weight * linalg::i_gap_pow(g, o.p))
                .sum::<Complex64>()
        }),
    )
}

/// The p-th derivative of the column vector `v(φ)` at `φ = 0`: entries `(i g)^p`.
pub fn derivative_rhs(freq: &FrequencySet, p: u32) -> CVector {
    target_rhs(&freq.row_gaps(), &single_order(p))
}

/// First-derivative system at the given phases.
pub fn build_system(freq: &FrequencySet, phases: &[f64]) -> Result<LinearSystem> {
    build_system_for(freq, phases, &first_derivative())
}

/// Square system for an arbitrary derivative target; needs exactly `m` phases.
pub fn build_system_for(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
) -> Result<LinearSystem> {
    if phases.len() != freq.m() {
        return Err(Error::DimensionMismatch {
            expected: freq.m(),
            actual: phases.len(),
        });
    }
    build_rectangular_system(freq, phases, orders)
}

/// Like [`build_system_for`] but with any number of phases.
pub fn build_rectangular_system(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
) -> Result<LinearSystem> {
    validate_orders(orders)?;
    if phases.is_empty() {
        return Err(Error::invalid("at least one phase is required"));
    }
    if phases.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("phases must be finite"));
    }
    let row_gaps = freq.row_gaps();
    Ok(LinearSystem {
        matrix: design_matrix(&row_gaps, phases),
        rhs: target_rhs(&row_gaps, orders),
        row_gaps,
        phases: phases.to_vec(),
        orders: orders.to_vec(),
    })
}

/// First pair of phases whose columns coincide for every gap, i.e. the phases
/// agree modulo every period in the system.
pub fn find_duplicate_phases(row_gaps: &[f64], phases: &[f64]) -> Option<(usize, usize)> {
    for i in 0..phases.len() {
        for j in 0..i {
            let same = row_gaps.iter().all(|&g| {
                (Complex64::from_polar(1.0, g * phases[i])
                    - Complex64::from_polar(1.0, g * phases[j]))
                .norm()
                    <= DUPLICATE_COLUMN_TOL
            });
            if same {
                return Some((j, i));
            }
        }
    }
    None
}

pub(crate) fn duplicate_phase_error(i: usize, j: usize) -> Error {
    Error::ill_posed(
        f64::INFINITY,
        format!("phases {i} and {j} give identical columns (φ_i ≠ ±φ_j + 2πc violated)"),
    )
}

pub fn solve_direct(sys: &LinearSystem) -> Result<ShiftRule> {
    solve_direct_with_cap(sys, DEFAULT_CONDITION_CAP)
}

/// Dense LU solve of `E b = μ`.
///
/// Fails with `IllPosed` when the condition number exceeds `cap` or the
/// solution is not real to within round-off.
pub fn solve_direct_with_cap(sys: &LinearSystem, cap: f64) -> Result<ShiftRule> {
    if sys.matrix.nrows() != sys.matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: sys.matrix.nrows(),
            actual: sys.matrix.ncols(),
        });
    }
    if let Some((i, j)) = find_duplicate_phases(&sys.row_gaps, &sys.phases) {
        return Err(duplicate_phase_error(i, j));
    }
    let cond = linalg::condition_number(&sys.matrix);
    if !(cond <= cap) {
        return Err(Error::ill_posed(
            cond,
            format!("condition number exceeds the cap {cap:.1e}"),
        ));
    }
    let b = linalg::solve_refined(&sys.matrix, &sys.rhs, 2)
        .map_err(|_| Error::ill_posed(cond, "matrix is numerically singular"))?;
    let max_imag = linalg::max_abs_imag(&b);
    let coefficients = linalg::real_parts(&b);
    let scale = linalg::l2(&coefficients);
    if max_imag > REALNESS_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ill_posed(
            cond,
            format!("solution has an imaginary part of {max_imag:.3e}"),
        ));
    }
    let residual = residual_norm(&sys.matrix, &coefficients, &sys.rhs);
    Ok(ShiftRule {
        phases: sys.phases.clone(),
        coefficients,
        orders: sys.orders.clone(),
        frequencies: positive_gaps(&sys.row_gaps),
        diagnostics: Diagnostics {
            condition_number: cond,
            residual,
            max_imag_discarded: max_imag,
            gamma: None,
            method: Some(RuleMethod::Direct),
            perturbation: None,
        },
    })
}

pub(crate) fn positive_gaps(row_gaps: &[f64]) -> Vec<f64> {
    row_gaps.iter().copied().filter(|&g| g > 0.0).collect()
}

/// `‖E b − μ‖₂` for real coefficients.
pub fn residual_norm(matrix: &CMatrix, coefficients: &[f64], rhs: &CVector) -> f64 {
    (matrix * linalg::to_complex(coefficients) - rhs).norm()
}

fn check_determinant_size(sys: &LinearSystem) -> Result<()> {
    let m = sys.matrix.nrows();
    if m != sys.matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: sys.matrix.ncols(),
        });
    }
    if m > MAX_DETERMINANT_SIZE {
        return Err(Error::invalid(format!(
            "determinant routines are limited to m ≤ {MAX_DETERMINANT_SIZE}, got {m}"
        )));
    }
    Ok(())
}

fn nonzero_determinant(matrix: &CMatrix) -> Result<Complex64> {
    let det = linalg::determinant(matrix);
    // |det| is compared against the Hadamard bound Π‖columns‖
    let bound: f64 = matrix.column_iter().map(|c| c.norm()).product();
    if det.norm() <= bound * 1e-14 {
        return Err(Error::Singular("det E vanishes".into()));
    }
    Ok(det)
}

/// Cramer's rule: `b_x = det E(φ/φ_x) / det E`, where column `x` is replaced
/// by the right-hand side.
pub fn cramer_coefficient(sys: &LinearSystem, x: usize) -> Result<f64> {
    check_determinant_size(sys)?;
    if x >= sys.matrix.ncols() {
        return Err(Error::invalid(format!("column {x} out of range")));
    }
    nonzero_determinant(&sys.matrix)?;
    let num = linalg::replace_column(&sys.matrix, x, &sys.rhs);
    linalg::extended::determinant_ratio(&num, &sys.matrix)
        .map(|r| r.re)
        .ok_or_else(|| Error::Singular("det E vanishes".into()))
}

/// Jacobi's form of the first-derivative coefficient:
/// `∂ det E / ∂φ_x` evaluated at `φ_x = 0`, divided by `det E(φ)`.
///
/// The determinant derivative is the five-point finite difference with step
/// `h`, so this is independent of the LU solve used by [`solve_direct`].
/// Because `det` is linear in column `x`, the difference of determinants is
/// evaluated as one determinant whose column `x` holds the same difference
/// of columns; the columns are differenced through `sin`, which avoids
/// cancellation.
pub fn jacobi_coefficient(sys: &LinearSystem, x: usize, h: f64) -> Result<f64> {
    check_determinant_size(sys)?;
    if x >= sys.matrix.ncols() {
        return Err(Error::invalid(format!("column {x} out of range")));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    nonzero_determinant(&sys.matrix)?;
    // (−v(2h) + 8v(h) − 8v(−h) + v(−2h)) / 12h with v_g(φ) = e^{igφ}
    let col = CVector::from_iterator(
        sys.row_gaps.len(),
        sys.row_gaps.iter().map(|&g| {
            let d = (8.0 * (g * h).sin() - (2.0 * g * h).sin()) / (6.0 * h);
            Complex64::new(0.0, d)
        }),
    );
    let num = linalg::replace_column(&sys.matrix, x, &col);
    linalg::extended::determinant_ratio(&num, &sys.matrix)
        .map(|r| r.re)
        .ok_or_else(|| Error::Singular("det E vanishes".into()))
}

/// Solves for the rule realizing `Σ a_p f^{(p)}` at the given phases.
pub fn synthesize_rule(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
) -> Result<ShiftRule> {
    synthesize_rule_with_cap(freq, phases, orders, DEFAULT_CONDITION_CAP)
}

pub fn synthesize_rule_with_cap(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    cap: f64,
) -> Result<ShiftRule> {
    let sys = build_system_for(freq, phases, orders)?;
    solve_direct_with_cap(&sys, cap)
}

/// `max_row |Σ_x b_x e^{i g φ_x} − Σ_p a_p (i g)^p|`, independent of any test
/// function.
pub fn compatibility_residual(
    rule: &ShiftRule,
    freq: &FrequencySet,
    orders: &[DerivativeTerm],
) -> f64 {
    let rows = freq.row_gaps();
    let e = design_matrix(&rows, &rule.phases);
    let lhs = e * linalg::to_complex(&rule.coefficients);
    let rhs = target_rhs(&rows, orders);
    (lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{frequency_differences, Spectrum, DEFAULT_DEDUP_TOL};
    use std::f64::consts::PI;

    fn freq(v: &[f64]) -> FrequencySet {
        frequency_differences(&Spectrum::new(v.to_vec()).unwrap(), DEFAULT_DEDUP_TOL).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_level_matrix_layout() {
        let sys = build_system(&freq(&[0.0, 1.0]), &[0.0, PI / 2.0, PI]).unwrap();
        let expected = [
            [c(1., 0.), c(1., 0.), c(1., 0.)],
            [c(1., 0.), c(0., 1.), c(-1., 0.)],
            [c(1., 0.), c(0., -1.), c(-1., 0.)],
        ];
        for r in 0..3 {
            for x in 0..3 {
                assert!((sys.matrix[(r, x)] - expected[r][x]).norm() < 1e-15);
            }
        }
        let rhs = [c(0., 0.), c(0., 1.), c(0., -1.)];
        for r in 0..3 {
            assert_eq!(sys.rhs[r], rhs[r]);
        }
    }

    #[test]
    fn zero_phases_give_rank_one_matrix() {
        let sys = build_system(&freq(&[0.0, 1.0, 2.5]), &[0.0; 7]).unwrap();
        assert!(sys.matrix.iter().all(|z| *z == c(1.0, 0.0)));
        assert!(matches!(solve_direct(&sys), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn rejects_wrong_phase_count() {
        assert!(matches!(
            build_system(&freq(&[0.0, 1.0]), &[0.1, 0.2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn equidistant_two_level_rule() {
        let phases = [-2.0 * PI / 3.0, -4.0 * PI / 3.0, -2.0 * PI];
        let rule = solve_direct(&build_system(&freq(&[0.0, 1.0]), &phases).unwrap()).unwrap();
        let s = 3f64.sqrt() / 3.0;
        let expected = [-s, s, 0.0];
        for (b, e) in rule.coefficients.iter().zip(expected) {
            assert!((b - e).abs() < 1e-12, "{b} vs {e}");
        }
        assert!((rule.apply(0.0, f64::sin) - 1.0).abs() < 1e-12);
        assert!(rule.diagnostics.residual < 1e-12);
        assert!(rule.coefficients.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn naive_pairwise_system_for_equidistant_is_ill_posed() {
        // one column per (k,l) pair on the equidistant spectrum {0,1,2}:
        // coincident gaps ±1 give duplicate rows
        let pair_gaps = [0.0, 1.0, -1.0, 1.0, -1.0, 2.0, -2.0];
        let phases: Vec<f64> = (1..=7).map(|j| -0.4 * j as f64).collect();
        let sys = LinearSystem {
            matrix: design_matrix(&pair_gaps, &phases),
            rhs: target_rhs(&pair_gaps, &first_derivative()),
            row_gaps: pair_gaps.to_vec(),
            phases,
            orders: first_derivative(),
        };
        assert!(matches!(solve_direct(&sys), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn duplicate_phases_are_ill_posed() {
        let err =
            synthesize_rule(&freq(&[0.0, 1.0]), &[0.3, 0.3, 1.0], &first_derivative()).unwrap_err();
        assert!(err.to_string().contains("φ_i ≠ ±φ_j + 2πc violated"));
        // same modulo the 2π period of the unit gap
        let err = synthesize_rule(
            &freq(&[0.0, 1.0]),
            &[0.3, 0.3 + 2.0 * PI, 1.0],
            &first_derivative(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::IllPosed { .. }));
    }

    #[test]
    fn cramer_examples() {
        let phases = [-2.0 * PI / 3.0, -4.0 * PI / 3.0, -2.0 * PI];
        let sys = build_system(&freq(&[0.0, 1.0]), &phases).unwrap();
        assert!(cramer_coefficient(&sys, 2).unwrap().abs() < 1e-12);
        let direct = solve_direct(&sys).unwrap();
        for x in 0..3 {
            assert!((cramer_coefficient(&sys, x).unwrap() - direct.coefficients[x]).abs() < 1e-12);
        }

        let one = LinearSystem {
            matrix: CMatrix::from_element(1, 1, c(1.0, 0.0)),
            rhs: CVector::from_element(1, c(0.0, 0.0)),
            row_gaps: vec![0.0],
            phases: vec![0.0],
            orders: first_derivative(),
        };
        assert_eq!(cramer_coefficient(&one, 0).unwrap(), 0.0);
    }

    #[test]
    fn cramer_rejects_singular_and_large() {
        let sys = build_system(&freq(&[0.0, 1.0]), &[0.0; 3]).unwrap();
        assert!(matches!(
            cramer_coefficient(&sys, 0),
            Err(Error::Singular(_))
        ));
        let big = freq(&[0.0, 1.0, 2.5, 4.2]);
        let sys = build_system(&big, &big.default_phases()).unwrap();
        assert!(cramer_coefficient(&sys, 0).is_err());
    }

    #[test]
    fn jacobi_matches_direct() {
        let fs = freq(&[0.0, 1.0, 2.5]);
        let sys = build_system(&fs, &fs.default_phases()).unwrap();
        let direct = solve_direct(&sys).unwrap();
        for x in 0..sys.size() {
            let j = jacobi_coefficient(&sys, x, 1e-5).unwrap();
            assert!((j - direct.coefficients[x]).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_rhs_examples() {
        let fs = freq(&[0.0, 1.0]);
        let sys = build_system(&fs, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(derivative_rhs(&fs, 1), sys.rhs);
        let second = derivative_rhs(&fs, 2);
        assert_eq!(second[0], c(0.0, 0.0));
        assert_eq!(second[1], c(-1.0, 0.0));
        assert_eq!(second[2], c(-1.0, 0.0));
        let fs = FrequencySet::from_frequencies(&[1.5]).unwrap();
        let third = derivative_rhs(&fs, 3);
        assert!((third[1] - c(0.0, -1.5f64.powi(3))).norm() < 1e-15);
    }

    #[test]
    fn identity_rule_reconstructs_function() {
        let fs = freq(&[0.0, 1.0]);
        let rule =
            synthesize_rule(&fs, &fs.default_phases(), &[DerivativeTerm::new(0, 1.0)]).unwrap();
        let f = |t: f64| 0.3 + 0.5 * t.cos() - 0.2 * t.sin();
        for t in [0.0, 0.9, -2.0] {
            assert!((rule.apply(t, f) - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_combination_rule() {
        let fs = freq(&[0.0, 1.0]);
        let orders = [DerivativeTerm::new(1, 1.0), DerivativeTerm::new(2, 0.5)];
        let rule = synthesize_rule(&fs, &fs.default_phases(), &orders).unwrap();
        assert!((rule.apply(0.0, f64::sin) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let fs = freq(&[0.0, 1.0]);
        let rule = synthesize_rule(&fs, &fs.default_phases(), &first_derivative()).unwrap();
        assert!((rule.apply(0.7, f64::sin) - 0.7f64.cos()).abs() < 1e-10);
        let zero = ShiftRule {
            coefficients: vec![0.0; 3],
            ..rule.clone()
        };
        assert_eq!(zero.apply(0.2, f64::sin), 0.0);
        let failing: std::result::Result<f64, &str> = rule.try_apply(0.0, |_| Err("boom"));
        assert_eq!(failing, Err("boom"));
    }

    #[test]
    fn compatibility_residual_examples() {
        let fs = freq(&[0.0, 1.0, 2.5]);
        let rule = synthesize_rule(&fs, &fs.default_phases(), &first_derivative()).unwrap();
        assert!(compatibility_residual(&rule, &fs, &first_derivative()) < 1e-10);

        let mut bumped = rule.clone();
        bumped.coefficients[2] += 1e-3;
        assert!(compatibility_residual(&bumped, &fs, &first_derivative()) >= 1e-4);

        let zero = ShiftRule {
            coefficients: vec![0.0; rule.len()],
            ..rule
        };
        assert!((compatibility_residual(&zero, &fs, &first_derivative()) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rule_file_round_trips_bit_for_bit() {
        let fs = freq(&[0.0, 1.0, 2.5]);
        let rule = synthesize_rule(&fs, &fs.default_phases(), &first_derivative()).unwrap();
        let text = serde_json::to_string(&rule).unwrap();
        for key in [
            "phases",
            "coefficients",
            "orders",
            "diagnostics",
            "condition_number",
            "residual",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
        let back: ShiftRule = serde_json::from_str(&text).unwrap();
        for (a, b) in back.coefficients.iter().zip(&rule.coefficients) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, rule);
    }

    #[test]
    fn infinite_condition_number_serializes_as_null() {
        let d = Diagnostics {
            condition_number: f64::INFINITY,
            residual: 0.0,
            max_imag_discarded: 0.0,
            gamma: Some(1e-3),
            method: None,
            perturbation: None,
        };
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"condition_number\":null"));
        let back: Diagnostics = serde_json::from_str(&s).unwrap();
        assert!(back.condition_number.is_infinite());
    }
}
