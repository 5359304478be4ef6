//! Eigenvalue spectra, their gap structure, and structural classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for merging coincident gaps (scaled by `max|λ|`).
pub const DEFAULT_DEDUP_TOL: f64 = 1e-12;
/// Default relative tolerance for the equidistance test.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Default bound on `ε/Δ` for a spectrum to count as perturbed-equidistant.
pub const DEFAULT_PERTURBED_FRACTION: f64 = 0.1;

/// Sorted, finite eigenvalues of a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    label: Option<String>,
}

impl Spectrum {
    /// Builds a spectrum, sorting the values. Needs at least two finite values.
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() < 2 {
            return Err(Error::invalid("need at least 2 eigenvalues"));
        }
        if let Some(bad) = eigenvalues.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("eigenvalue {bad} is not finite")));
        }
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Spectrum {
            eigenvalues,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Absolute merge tolerance: `dedup_tol · max|λ|`, falling back to
    /// `dedup_tol` for the all-zero spectrum.
    pub fn absolute_tolerance(&self, dedup_tol: f64) -> f64 {
        let scale = self.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if scale > 0.0 {
            dedup_tol * scale
        } else {
            dedup_tol
        }
    }

    /// Eigenvalues with near-repeated values (within `abs_tol`) merged.
    pub fn distinct_eigenvalues(&self, abs_tol: f64) -> Vec<f64> {
        merge_sorted(&self.eigenvalues, abs_tol)
            .into_iter()
            .map(|(v, _)| v)
            .collect()
    }

    /// Scales every eigenvalue by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut s = Spectrum::new(self.eigenvalues.iter().map(|x| x * c).collect())?;
        s.label = self.label.clone();
        Ok(s)
    }
}

/// Groups consecutive sorted values closer than `tol`; each group is
/// represented by its mean, with the group size as multiplicity.
fn merge_sorted(sorted: &[f64], tol: f64) -> Vec<(f64, usize)> {
    let mut groups: Vec<(f64, usize, f64)> = Vec::new(); // (sum, count, last)
    for &x in sorted {
        match groups.last_mut() {
            Some((sum, count, last)) if x - *last < tol => {
                *sum += x;
                *count += 1;
                *last = x;
            }
            _ => groups.push((x, 1, x)),
        }
    }
    groups
        .into_iter()
        .map(|(sum, count, _)| (sum / count as f64, count))
        .collect()
}

/// One signed gap `μ_(k,l) = λ_k − λ_l` between distinct eigenvalues `k`, `l`.
/// The zero gap is stored once with `k == l == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedGap {
    pub k: usize,
    pub l: usize,
    pub value: f64,
}

/// A distinct positive frequency and the number of eigenvalue pairs `k > l`
/// that produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequency {
    pub value: f64,
    pub multiplicity: usize,
}

/// Gap structure of a spectrum.
///
/// The system row order is `0, +Ω₁, −Ω₁, +Ω₂, −Ω₂, …` with `Ω` ascending, so
/// that `m = 2·(number of positive frequencies) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    signed_gaps: Vec<SignedGap>,
    frequencies: Vec<Frequency>,
}

impl FrequencySet {
    /// Builds a set directly from positive frequencies (no pair information).
    pub fn from_frequencies(values: &[f64]) -> Result<Self> {
        let mut sorted = values.to_vec();
        if let Some(bad) = sorted.iter().find(|x| !x.is_finite() || **x <= 0.0) {
            return Err(Error::invalid(format!(
                "frequency {bad} must be finite and positive"
            )));
        }
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequencies must be distinct"));
        }
        Ok(FrequencySet {
            signed_gaps: Vec::new(),
            frequencies: sorted
                .into_iter()
                .map(|value| Frequency {
                    value,
                    multiplicity: 1,
                })
                .collect(),
        })
    }

    pub fn signed_gaps(&self) -> &[SignedGap] {
        &self.signed_gaps
    }

    pub fn frequencies(&self) -> &[Frequency] {
        &self.frequencies
    }

    pub fn positive_values(&self) -> Vec<f64> {
        self.frequencies.iter().map(|f| f.value).collect()
    }

    /// System size: number of distinct gap values, zero included.
    pub fn m(&self) -> usize {
        2 * self.frequencies.len() + 1
    }

    /// Distinct signed gap values in system row order.
    pub fn row_gaps(&self) -> Vec<f64> {
        let mut rows = Vec::with_capacity(self.m());
        rows.push(0.0);
        for f in &self.frequencies {
            rows.push(f.value);
            rows.push(-f.value);
        }
        rows
    }

    pub fn min_frequency(&self) -> Option<f64> {
        self.frequencies.first().map(|f| f.value)
    }

    pub fn max_frequency(&self) -> Option<f64> {
        self.frequencies.last().map(|f| f.value)
    }

    /// Whether `omega` matches one of the positive frequencies within `abs_tol`.
    pub fn contains(&self, omega: f64, abs_tol: f64) -> bool {
        self.frequencies
            .iter()
            .any(|f| (f.value - omega).abs() <= abs_tol)
    }

    /// Default phase vector: `m` equally spaced shifts
    /// `φ_j = −2πj / (m·s)` with `s = Ω_max / (number of frequencies)`.
    ///
    /// For an equidistant spectrum `s` is the base gap and these are the
    /// orthogonal phases.
    pub fn default_phases(&self) -> Vec<f64> {
        let m = self.m();
        let Some(max) = self.max_frequency() else {
            return vec![0.0];
        };
        let scale = max / self.frequencies.len() as f64;
        (1..=m)
            .map(|j| -2.0 * std::f64::consts::PI * j as f64 / (m as f64 * scale))
            .collect()
    }
}

/// All signed gaps of `spectrum` with near-equal values merged.
///
/// Repeated eigenvalues and gaps closer than `dedup_tol · max|λ|` coincide.
pub fn frequency_differences(spectrum: &Spectrum, dedup_tol: f64) -> Result<FrequencySet> {
    if !(dedup_tol > 0.0) {
        return Err(Error::invalid("dedup_tol must be positive"));
    }
    if spectrum.len() < 2 {
        return Err(Error::invalid("need at least 2 eigenvalues"));
    }
    let tol = spectrum.absolute_tolerance(dedup_tol);
    let lambda = spectrum.distinct_eigenvalues(tol);

    let mut signed_gaps = vec![SignedGap {
        k: 0,
        l: 0,
        value: 0.0,
    }];
    let mut positive = Vec::new();
    for k in 0..lambda.len() {
        for l in 0..lambda.len() {
            if k == l {
                continue;
            }
            let value = lambda[k] - lambda[l];
            signed_gaps.push(SignedGap { k, l, value });
            if value > 0.0 {
                positive.push(value);
            }
        }
    }
    positive.sort_by(f64::total_cmp);
    let frequencies = merge_sorted(&positive, tol)
        .into_iter()
        .map(|(value, multiplicity)| Frequency {
            value,
            multiplicity,
        })
        .collect();
    Ok(FrequencySet {
        signed_gaps,
        frequencies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureKind {
    Equidistant,
    PerturbedEquidistant,
    ClusteredSets,
    Unstructured,
}

/// Structural case of a spectrum with its base gap `Δ` and perturbation scale `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureClass {
    pub kind: StructureKind,
    pub base_gap: Option<f64>,
    pub perturbation_scale: Option<f64>,
}

pub fn classify_structure(spectrum: &Spectrum, rel_tol: f64) -> StructureClass {
    classify_structure_with(spectrum, rel_tol, DEFAULT_PERTURBED_FRACTION)
}

/// Classifies adjacent gaps: all within `rel_tol·Δ` of their mean `Δ` is
/// equidistant, within `perturbed_fraction·Δ` is perturbed-equidistant with
/// `ε` the largest deviation, anything else is unstructured.
pub fn classify_structure_with(
    spectrum: &Spectrum,
    rel_tol: f64,
    perturbed_fraction: f64,
) -> StructureClass {
    let unstructured = StructureClass {
        kind: StructureKind::Unstructured,
        base_gap: None,
        perturbation_scale: None,
    };
    let gaps: Vec<f64> = spectrum
        .eigenvalues()
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if !(mean > 0.0) {
        return unstructured;
    }
    let deviation = gaps.iter().fold(0.0_f64, |m, g| m.max((g - mean).abs()));
    if deviation <= rel_tol * mean {
        StructureClass {
            kind: StructureKind::Equidistant,
            base_gap: Some(mean),
            perturbation_scale: None,
        }
    } else if deviation <= perturbed_fraction * mean {
        StructureClass {
            kind: StructureKind::PerturbedEquidistant,
            base_gap: Some(mean),
            perturbation_scale: Some(deviation),
        }
    } else {
        unstructured
    }
}

/// One eigenvalue assigned to a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMember {
    pub realization: usize,
    pub value: f64,
    /// Signed offset from the cluster median.
    pub offset: f64,
}

/// Eigenvalues pooled from several realizations, grouped around medians.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub medians: Vec<f64>,
    pub members: Vec<Vec<ClusterMember>>,
    /// Range (max − min) of each cluster.
    pub widths: Vec<f64>,
    /// Mean gap between adjacent medians.
    pub base_gap: f64,
    /// Largest deviation of an adjacent median gap from `base_gap`.
    pub median_gap_deviation: f64,
    pub realizations: usize,
}

impl ClusterSet {
    pub fn cluster_count(&self) -> usize {
        self.medians.len()
    }

    /// Eigenvalues of realization `l`, in cluster order.
    pub fn realization(&self, l: usize) -> Vec<f64> {
        self.members
            .iter()
            .map(|c| {
                c.iter()
                    .find(|m| m.realization == l)
                    .map(|m| m.value)
                    .expect("every cluster holds one member per realization")
            })
            .collect()
    }

    /// Signed offset `Δ_{l,i}` of realization `l` in cluster `i`.
    pub fn offset(&self, l: usize, i: usize) -> f64 {
        self.members[i]
            .iter()
            .find(|m| m.realization == l)
            .map(|m| m.offset)
            .expect("every cluster holds one member per realization")
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Pools the eigenvalues of all realizations and groups them by single
/// linkage with link threshold `gap_factor` × the median adjacent gap inside
/// the realizations.
pub fn cluster_realizations(realizations: &[Spectrum], gap_factor: f64) -> Result<ClusterSet> {
    let Some(first) = realizations.first() else {
        return Err(Error::invalid("need at least one realization"));
    };
    if !(gap_factor > 0.0) {
        return Err(Error::invalid("gap_factor must be positive"));
    }
    let n = first.len();
    if realizations.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(
            "all realizations must have the same number of eigenvalues",
        ));
    }
    let k = realizations.len();

    let mut inner_gaps: Vec<f64> = realizations
        .iter()
        .flat_map(|r| r.eigenvalues().windows(2).map(|w| w[1] - w[0]))
        .collect();
    inner_gaps.sort_by(f64::total_cmp);
    let threshold = gap_factor * median(&inner_gaps);

    let mut pooled: Vec<(usize, f64)> = realizations
        .iter()
        .enumerate()
        .flat_map(|(l, r)| r.eigenvalues().iter().map(move |&v| (l, v)))
        .collect();
    pooled.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut groups: Vec<Vec<(usize, f64)>> = vec![vec![pooled[0]]];
    for pair in pooled.windows(2) {
        if pair[1].1 - pair[0].1 <= threshold {
            groups.last_mut().unwrap().push(pair[1]);
        } else {
            groups.push(vec![pair[1]]);
        }
    }

    if groups.len() != n {
        return Err(Error::Clustering(format!(
            "single linkage at threshold {threshold:.3e} produced {} clusters, expected {n}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        let mut seen = vec![false; k];
        for &(l, _) in g {
            if std::mem::replace(&mut seen[l], true) {
                return Err(Error::Clustering(format!(
                    "cluster {i} holds two eigenvalues of realization {l}"
                )));
            }
        }
        if g.len() != k {
            return Err(Error::Clustering(format!(
                "cluster {i} has {} members, expected {k}",
                g.len()
            )));
        }
    }

    let mut medians = Vec::with_capacity(n);
    let mut members = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    for g in &groups {
        let values: Vec<f64> = g.iter().map(|&(_, v)| v).collect();
        let mid = median(&values);
        medians.push(mid);
        widths.push(values[values.len() - 1] - values[0]);
        members.push(
            g.iter()
                .map(|&(realization, value)| ClusterMember {
                    realization,
                    value,
                    offset: value - mid,
                })
                .collect(),
        );
    }

    let median_gaps: Vec<f64> = medians.windows(2).map(|w| w[1] - w[0]).collect();
    let min_gap = median_gaps.iter().copied().fold(f64::INFINITY, f64::min);
    if let Some((i, w)) = widths.iter().enumerate().find(|(_, w)| **w >= min_gap) {
        return Err(Error::Clustering(format!(
            "cluster {i} width {w:.3e} is not below the minimum median gap {min_gap:.3e}"
        )));
    }
    let base_gap = median_gaps.iter().sum::<f64>() / median_gaps.len().max(1) as f64;
    let median_gap_deviation = median_gaps
        .iter()
        .fold(0.0_f64, |m, g| m.max((g - base_gap).abs()));

    Ok(ClusterSet {
        medians,
        members,
        widths,
        base_gap,
        median_gap_deviation,
        realizations: k,
    })
}

/// On-disk spectrum document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
}

impl SpectrumFile {
    pub fn to_spectrum(&self) -> Result<Spectrum> {
        let s = Spectrum::new(self.eigenvalues.clone())?;
        Ok(match &self.label {
            Some(l) => s.with_label(l.clone()),
            None => s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    fn sorted_distinct_values(fs: &FrequencySet) -> Vec<f64> {
        let mut v = fs.row_gaps();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn two_level_gaps() {
        let fs = frequency_differences(&spec(&[0.0, 1.0]), DEFAULT_DEDUP_TOL).unwrap();
        assert_eq!(fs.m(), 3);
        assert_eq!(sorted_distinct_values(&fs), vec![-1.0, 0.0, 1.0]);
        assert_eq!(fs.signed_gaps().len(), 3);
    }

    #[test]
    fn equidistant_reduces_to_2n_minus_1() {
        let fs = frequency_differences(&spec(&[0.0, 1.0, 2.0]), DEFAULT_DEDUP_TOL).unwrap();
        assert_eq!(fs.m(), 5);
        assert_eq!(sorted_distinct_values(&fs), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(fs.frequencies()[0].multiplicity, 2);
        assert_eq!(fs.frequencies()[1].multiplicity, 1);
    }

    #[test]
    fn distinct_gaps_give_full_size() {
        let fs = frequency_differences(&spec(&[0.0, 1.0, 2.5]), DEFAULT_DEDUP_TOL).unwrap();
        assert_eq!(fs.m(), 7);
        assert_eq!(fs.positive_values(), vec![1.0, 1.5, 2.5]);
    }

    #[test]
    fn repeated_eigenvalues_are_merged() {
        let fs = frequency_differences(&spec(&[0.0, 1.0, 1.0]), DEFAULT_DEDUP_TOL).unwrap();
        assert_eq!(fs.m(), 3);
    }

    #[test]
    fn rejects_short_spectrum() {
        let err = Spectrum::new(vec![0.0]).unwrap_err();
        assert!(err.to_string().contains("need at least 2 eigenvalues"));
        assert!(Spectrum::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn rejects_nonpositive_dedup_tol() {
        assert!(frequency_differences(&spec(&[0.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn classify_examples() {
        let c = classify_structure(&spec(&[0.0, 1.0, 2.0, 3.0]), 1e-9);
        assert_eq!(c.kind, StructureKind::Equidistant);
        assert_eq!(c.base_gap, Some(1.0));
        assert_eq!(c.perturbation_scale, None);

        // gaps 1.001, 0.999, 0.999 around the mean 2.999/3
        let c = classify_structure(&spec(&[0.0, 1.001, 2.0, 2.999]), 1e-9);
        assert_eq!(c.kind, StructureKind::PerturbedEquidistant);
        assert!((c.base_gap.unwrap() - 2.999 / 3.0).abs() < 1e-12);
        assert!((c.perturbation_scale.unwrap() - (1.001 - 2.999 / 3.0)).abs() < 1e-12);

        let c = classify_structure(&spec(&[0.0, 1.0, 2.5]), 1e-9);
        assert_eq!(c.kind, StructureKind::Unstructured);
        assert_eq!(c.base_gap, None);
    }

    #[test]
    fn degenerate_spectrum_is_unstructured() {
        let c = classify_structure(&spec(&[1.0, 1.0]), 1e-9);
        assert_eq!(c.kind, StructureKind::Unstructured);
    }

    #[test]
    fn single_realization_clusters() {
        let cs = cluster_realizations(&[spec(&[0.0, 1.0, 2.0])], 0.25).unwrap();
        assert_eq!(cs.medians, vec![0.0, 1.0, 2.0]);
        assert_eq!(cs.widths, vec![0.0, 0.0, 0.0]);
        assert_eq!(cs.base_gap, 1.0);
    }

    #[test]
    fn jittered_realizations_cluster() {
        let r = [
            spec(&[0.0, 1.01, 1.99]),
            spec(&[0.01, 0.99, 2.0]),
            spec(&[-0.01, 1.0, 2.01]),
        ];
        let cs = cluster_realizations(&r, 0.25).unwrap();
        assert_eq!(cs.cluster_count(), 3);
        assert!(cs.members.iter().all(|c| c.len() == 3));
        assert!(cs.widths.iter().all(|&w| w <= 0.02 + 1e-12));
        for (i, c) in cs.members.iter().enumerate() {
            for m in c {
                assert!(m.offset.abs() <= cs.widths[i]);
            }
        }
    }

    #[test]
    fn overlapping_realizations_fail() {
        let r = [spec(&[0.0, 1.0]), spec(&[0.6, 1.6])];
        let err = cluster_realizations(&r, 0.25).unwrap_err();
        assert!(matches!(err, Error::Clustering(_)));
    }

    #[test]
    fn mismatched_realizations_fail() {
        let r = [spec(&[0.0, 1.0]), spec(&[0.0, 1.0, 2.0])];
        assert!(cluster_realizations(&r, 0.25).is_err());
    }

    #[test]
    fn default_phases_match_orthogonal_phases_for_equidistant() {
        let fs = frequency_differences(&spec(&[0.0, 2.0, 4.0]), DEFAULT_DEDUP_TOL).unwrap();
        let ph = fs.default_phases();
        for (j, p) in ph.iter().enumerate() {
            let expected = -2.0 * std::f64::consts::PI * (j + 1) as f64 / (5.0 * 2.0);
            assert!((p - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn spectrum_file_parses() {
        let f: SpectrumFile =
            serde_json::from_str(r#"{"eigenvalues":[2,0,1],"label":"x","rel_tol":1e-6}"#).unwrap();
        let s = f.to_spectrum().unwrap();
        assert_eq!(s.eigenvalues(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.label(), Some("x"));
        assert!(serde_json::from_str::<SpectrumFile>(r#"{"eigen":[1]}"#).is_err());
    }
}
