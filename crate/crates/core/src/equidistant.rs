//! Closed-form rules for equidistant spectra.
//!
//! For `n` eigenvalues spaced by `Δ` only `2n − 1` distinct gaps exist, and at
//! the phases `φ_j = −jτ/Δ` with `τ = 2π/(2n−1)` the columns of the reduced
//! system are orthogonal: `E/√(2n−1)` is unitary, so `b = E† μ / (2n−1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::spectrum::{ClusterSet, FrequencySet};
use crate::synthesis::{
    self, build_system_for, design_matrix, single_order, target_rhs, DerivativeTerm, Diagnostics,
    LinearSystem, RuleMethod, ShiftRule,
};

/// Largest tolerated deviation of cluster median gaps, relative to their mean.
pub const CLUSTER_GAP_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquidistantStructure {
    n: usize,
    delta: f64,
}

impl EquidistantStructure {
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need n ≥ 2 eigenvalues, got {n}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!(
                "base gap must be positive, got {delta}"
            )));
        }
        Ok(EquidistantStructure { n, delta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Size `2n − 1` of the reduced system.
    pub fn m(&self) -> usize {
        2 * self.n - 1
    }

    pub fn tau(&self) -> f64 {
        2.0 * PI / self.m() as f64
    }

    /// Positive gaps `Δ, 2Δ, …, (n−1)Δ`.
    pub fn frequency_set(&self) -> FrequencySet {
        let freqs: Vec<f64> = (1..self.n).map(|k| k as f64 * self.delta).collect();
        FrequencySet::from_frequencies(&freqs).expect("multiples of a positive gap are valid")
    }
}

/// `φ_j = −2πj / ((2n−1)Δ)` for `j = 1..2n−1`.
pub fn optimal_phases(es: &EquidistantStructure) -> Vec<f64> {
    let m = es.m() as f64;
    (1..=es.m())
        .map(|j| -2.0 * PI * j as f64 / (m * es.delta))
        .collect()
}

/// `D_k(x) = 1 + 2 Σ_{j=1..k} cos(jx)`.
pub fn dirichlet_kernel(k: usize, x: f64) -> f64 {
    1.0 + 2.0 * (1..=k).map(|j| (j as f64 * x).cos()).sum::<f64>()
}

/// Ratio form `sin((k + ½)x) / sin(x/2)`; `None` where the denominator vanishes.
pub fn dirichlet_kernel_ratio(k: usize, x: f64) -> Option<f64> {
    let den = (0.5 * x).sin();
    if den.abs() < 1e-8 {
        return None;
    }
    Some(((k as f64 + 0.5) * x).sin() / den)
}

/// `max_{i≠j} |v(φ_j)† v(φ_i)| / m` over the columns of the system matrix.
pub fn orthogonality_residual(freq: &FrequencySet, phases: &[f64]) -> Result<f64> {
    if phases.len() != freq.m() {
        return Err(Error::DimensionMismatch {
            expected: freq.m(),
            actual: phases.len(),
        });
    }
    let e = design_matrix(&freq.row_gaps(), phases);
    let gram = e.adjoint() * &e;
    let m = phases.len();
    let mut worst = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                worst = worst.max(gram[(i, j)].norm());
            }
        }
    }
    Ok(worst / m as f64)
}

/// Reduced `(2n−1)`-row system at the optimal phases.
pub fn reduced_system(
    es: &EquidistantStructure,
    orders: &[DerivativeTerm],
) -> Result<LinearSystem> {
    build_system_for(&es.frequency_set(), &optimal_phases(es), orders)
}

/// `Ẽ = E/√(2n−1)` at the optimal phases.
pub fn unitary_matrix(es: &EquidistantStructure) -> CMatrix {
    let e = design_matrix(&es.frequency_set().row_gaps(), &optimal_phases(es));
    e.unscale((es.m() as f64).sqrt())
}

/// Rule for the p-th derivative from `b = E† μ / (2n−1)`.
pub fn closed_form_rule(es: &EquidistantStructure, p: u32) -> ShiftRule {
    closed_form_rule_for(es, &single_order(p)).expect("single order is a valid target")
}

pub fn closed_form_rule_for(
    es: &EquidistantStructure,
    orders: &[DerivativeTerm],
) -> Result<ShiftRule> {
    let sys = reduced_system(es, orders)?;
    let b = (sys.matrix.adjoint() * &sys.rhs).unscale(es.m() as f64);
    let coefficients = linalg::real_parts(&b);
    let residual = synthesis::residual_norm(&sys.matrix, &coefficients, &sys.rhs);
    Ok(ShiftRule {
        phases: sys.phases,
        coefficients,
        orders: sys.orders,
        frequencies: es.frequency_set().positive_values(),
        diagnostics: Diagnostics {
            condition_number: linalg::condition_number(&sys.matrix),
            residual,
            max_imag_discarded: linalg::max_abs_imag(&b),
            gamma: None,
            method: Some(RuleMethod::Equidistant),
            perturbation: None,
        },
    })
}

/// First-derivative coefficients from the sine sum
/// `b_x = −(2Δ/(2n−1)) Σ_{k=1..n−1} k sin(k x τ)`.
pub fn sine_formula_coefficients(es: &EquidistantStructure) -> Vec<f64> {
    let (m, tau) = (es.m() as f64, es.tau());
    (1..=es.m())
        .map(|x| {
            let s: f64 = (1..es.n)
                .map(|k| k as f64 * (k as f64 * x as f64 * tau).sin())
                .sum();
            -2.0 * es.delta * s / m
        })
        .collect()
}

/// Coefficients at the fixed angle `τ` of `es` but with gap `d`.
///
/// Entries of the reduced matrix depend on `τ` only, so this is `d^p` times
/// the unit-gap solution; `d` may be zero or negative.
pub fn coefficients_at_gap(
    es: &EquidistantStructure,
    d: f64,
    orders: &[DerivativeTerm],
) -> Vec<f64> {
    let unit = EquidistantStructure {
        n: es.n,
        delta: 1.0,
    };
    let rows: Vec<f64> = unit.frequency_set().row_gaps();
    let e = design_matrix(&rows, &optimal_phases(&unit));
    let scaled_rows: Vec<f64> = rows.iter().map(|g| g * d).collect();
    let rhs = target_rhs(&scaled_rows, orders);
    linalg::real_parts(&(e.adjoint() * rhs).unscale(unit.m() as f64))
}

/// Per-realization and combined rules from clustered eigenvalue data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimates {
    /// Mean adjacent gap `Δ̃_l` of each realization.
    pub realization_gaps: Vec<f64>,
    pub per_realization: Vec<ShiftRule>,
    /// Rule at the mean gap of the cluster medians.
    pub combined: ShiftRule,
    /// Largest range of any coefficient across the per-realization rules.
    pub spread: f64,
    /// `b(Δ̃_l) − b(Δ_{l,i}) + b(Δ_{l,i−1})` for every realization `l` and
    /// cluster `i ≥ 1`, all at the fixed angle τ.
    pub additive: Vec<Vec<f64>>,
}

fn mean_adjacent_gap(values: &[f64]) -> f64 {
    let gaps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.iter().sum::<f64>() / gaps.len() as f64
}

pub fn cluster_rule_estimates(cs: &ClusterSet, p: u32) -> Result<ClusterEstimates> {
    let n = cs.cluster_count();
    if n < 2 {
        return Err(Error::Clustering(format!(
            "need at least 2 clusters, got {n}"
        )));
    }
    if cs.median_gap_deviation > CLUSTER_GAP_TOLERANCE * cs.base_gap {
        return Err(Error::Clustering(format!(
            "cluster medians are not equidistant: gap deviation {:.3e} exceeds {:.0}% of {:.3e}",
            cs.median_gap_deviation,
            CLUSTER_GAP_TOLERANCE * 100.0,
            cs.base_gap
        )));
    }
    let orders = single_order(p);
    let combined_es = EquidistantStructure::new(n, cs.base_gap)?;
    let combined = closed_form_rule_for(&combined_es, &orders)?;

    let mut realization_gaps = Vec::with_capacity(cs.realizations);
    let mut per_realization = Vec::with_capacity(cs.realizations);
    let mut additive = Vec::new();
    for l in 0..cs.realizations {
        let gap = mean_adjacent_gap(&cs.realization(l));
        let es = EquidistantStructure::new(n, gap)?;
        per_realization.push(closed_form_rule_for(&es, &orders)?);
        realization_gaps.push(gap);

        let base = coefficients_at_gap(&es, gap, &orders);
        for i in 1..n {
            let cur = coefficients_at_gap(&es, cs.offset(l, i), &orders);
            let prev = coefficients_at_gap(&es, cs.offset(l, i - 1), &orders);
            additive.push(
                base.iter()
                    .zip(cur.iter().zip(&prev))
                    .map(|(b, (c, q))| b - c + q)
                    .collect(),
            );
        }
    }

    let spread = (0..combined.len())
        .map(|x| {
            let (lo, hi) = per_realization
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r.coefficients[x]), hi.max(r.coefficients[x]))
                });
            hi - lo
        })
        .fold(0.0, f64::max);

    Ok(ClusterEstimates {
        realization_gaps,
        per_realization,
        combined,
        spread,
        additive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{cluster_realizations, frequency_differences, Spectrum};
    use crate::synthesis::{first_derivative, solve_direct};

    #[test]
    fn optimal_phase_examples() {
        let p = optimal_phases(&EquidistantStructure::new(2, 1.0).unwrap());
        let e = [-2.0 * PI / 3.0, -4.0 * PI / 3.0, -2.0 * PI];
        for (a, b) in p.iter().zip(e) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = optimal_phases(&EquidistantStructure::new(3, 2.0).unwrap());
        let e = [
            -PI / 5.0,
            -2.0 * PI / 5.0,
            -3.0 * PI / 5.0,
            -4.0 * PI / 5.0,
            -PI,
        ];
        for (a, b) in p.iter().zip(e) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = optimal_phases(&EquidistantStructure::new(5, 0.7).unwrap());
        for w in p.windows(2) {
            assert!((w[1] - w[0] + 2.0 * PI / (9.0 * 0.7)).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_structure() {
        assert!(EquidistantStructure::new(1, 1.0).is_err());
        assert!(EquidistantStructure::new(3, 0.0).is_err());
        assert!(EquidistantStructure::new(3, f64::NAN).is_err());
    }

    #[test]
    fn tau_times_m_is_two_pi() {
        for n in 2..10 {
            let es = EquidistantStructure::new(n, 1.0).unwrap();
            assert_eq!(es.tau() * es.m() as f64, 2.0 * PI);
        }
    }

    #[test]
    fn dirichlet_examples() {
        assert!(dirichlet_kernel(1, 2.0 * PI / 3.0).abs() < 1e-14);
        assert!(dirichlet_kernel(2, 2.0 * PI / 5.0).abs() < 1e-14);
        for k in 0..6 {
            assert_eq!(dirichlet_kernel(k, 0.0), (2 * k + 1) as f64);
        }
        assert!(dirichlet_kernel_ratio(3, 0.0).is_none());
        for x in [0.3, 1.1, 2.9, -0.7] {
            let r = dirichlet_kernel_ratio(4, x).unwrap();
            assert!((r - dirichlet_kernel(4, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_phases_are_orthogonal() {
        let es = EquidistantStructure::new(2, 1.0).unwrap();
        let r = orthogonality_residual(&es.frequency_set(), &optimal_phases(&es)).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn random_phases_are_not_orthogonal() {
        let es = EquidistantStructure::new(3, 1.0).unwrap();
        let r =
            orthogonality_residual(&es.frequency_set(), &[-0.3, -0.9, -1.4, -2.2, -2.7]).unwrap();
        assert!(r > 0.1, "{r}");
    }

    #[test]
    fn unitary_at_optimal_phases() {
        for n in 2..=8 {
            let es = EquidistantStructure::new(n, 1.3).unwrap();
            let u = unitary_matrix(&es);
            let id = u.adjoint() * &u;
            let dev = (id - CMatrix::identity(es.m(), es.m()))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(dev < 1e-12, "n={n}: {dev}");
        }
    }

    #[test]
    fn n2_closed_form() {
        let es = EquidistantStructure::new(2, 1.0).unwrap();
        let rule = closed_form_rule(&es, 1);
        let s = 3f64.sqrt() / 3.0;
        for (b, e) in rule.coefficients.iter().zip([-s, s, 0.0]) {
            assert!((b - e).abs() < 1e-14);
        }
        for (b, phi) in rule.coefficients.iter().zip(&rule.phases) {
            assert!((b - 2.0 / 3.0 * phi.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_matches_direct_and_sine_formula() {
        for n in 2..=8 {
            let es = EquidistantStructure::new(n, 0.8).unwrap();
            let rule = closed_form_rule(&es, 1);
            let direct = solve_direct(&reduced_system(&es, &first_derivative()).unwrap()).unwrap();
            let sine = sine_formula_coefficients(&es);
            for x in 0..es.m() {
                assert!((rule.coefficients[x] - direct.coefficients[x]).abs() < 1e-10);
                assert!((rule.coefficients[x] - sine[x]).abs() < 1e-12);
            }
            assert!(rule.coefficients[es.m() - 1].abs() < 1e-12);
            assert!((rule.apply(0.0, |t| (0.8 * t).sin()) - 0.8).abs() < 1e-10);
        }
    }

    #[test]
    fn coefficients_scale_with_gap() {
        let es = EquidistantStructure::new(3, 1.0).unwrap();
        let unit = coefficients_at_gap(&es, 1.0, &first_derivative());
        let twice = coefficients_at_gap(&es, 2.0, &first_derivative());
        for (a, b) in unit.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
        let two = EquidistantStructure::new(3, 2.0).unwrap();
        for (a, b) in closed_form_rule(&two, 1).coefficients.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn equidistant_except_one_is_never_orthogonal() {
        let s = Spectrum::new(vec![0.0, 0.37, 1.37, 2.37]).unwrap();
        let fs = frequency_differences(&s, 1e-12).unwrap();
        let m = fs.m();
        let mut best = f64::INFINITY;
        for step in 1..=4000 {
            let d = -(step as f64) * 2.0 * PI / 4000.0 / 0.37 * 0.5;
            let phases: Vec<f64> = (1..=m).map(|j| j as f64 * d).collect();
            best = best.min(orthogonality_residual(&fs, &phases).unwrap());
        }
        assert!(best > 0.05, "{best}");
    }

    #[test]
    fn single_noiseless_realization() {
        let s = Spectrum::new(vec![0.0, 1.0, 2.0]).unwrap();
        let cs = cluster_realizations(&[s], 0.5).unwrap();
        let est = cluster_rule_estimates(&cs, 1).unwrap();
        assert_eq!(est.per_realization.len(), 1);
        assert_eq!(est.combined, est.per_realization[0]);
        assert_eq!(est.spread, 0.0);
    }

    #[test]
    fn identical_realizations_have_zero_spread() {
        let r: Vec<Spectrum> = (0..4)
            .map(|_| Spectrum::new(vec![0.0, 1.5, 3.0, 4.5]).unwrap())
            .collect();
        let cs = cluster_realizations(&r, 0.5).unwrap();
        let est = cluster_rule_estimates(&cs, 1).unwrap();
        assert!(est.realization_gaps.iter().all(|g| *g == 1.5));
        assert_eq!(est.spread, 0.0);
        for a in &est.additive {
            for (x, y) in a.iter().zip(&est.combined.coefficients) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
