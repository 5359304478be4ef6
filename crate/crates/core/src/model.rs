//! Exact expectation functions `f(t)` with analytic derivatives.
//!
//! A [`FourierModel`] is the finite trigonometric series every expectation
//! value `⟨ψ|U†(t) C U(t)|ψ⟩` reduces to. It is the reference all shift rules
//! are checked against.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::spectrum::{frequency_differences, Spectrum, DEFAULT_DEDUP_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
}

/// `f(t) = a₀ + Σ a_l cos(Ω_l t) + b_l sin(Ω_l t)` with strictly increasing `Ω_l > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FourierModelFile", into = "FourierModelFile")]
pub struct FourierModel {
    a0: f64,
    terms: Vec<FourierTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FourierModelFile {
    a0: f64,
    #[serde(default)]
    terms: Vec<FourierTerm>,
}

impl TryFrom<FourierModelFile> for FourierModel {
    type Error = Error;

    fn try_from(f: FourierModelFile) -> Result<Self> {
        FourierModel::new(f.a0, f.terms)
    }
}

impl From<FourierModel> for FourierModelFile {
    fn from(m: FourierModel) -> Self {
        FourierModelFile {
            a0: m.a0,
            terms: m.terms,
        }
    }
}

impl FourierModel {
    pub fn new(a0: f64, terms: Vec<FourierTerm>) -> Result<Self> {
        if !a0.is_finite() {
            return Err(Error::invalid("a0 must be finite"));
        }
        for t in &terms {
            if !(t.omega > 0.0) || !t.omega.is_finite() {
                return Err(Error::invalid(format!(
                    "frequency {} must be finite and positive",
                    t.omega
                )));
            }
            if !t.a.is_finite() || !t.b.is_finite() {
                return Err(Error::invalid("coefficients must be finite"));
            }
        }
        if terms.windows(2).any(|w| w[1].omega <= w[0].omega) {
            return Err(Error::invalid("frequencies must be strictly increasing"));
        }
        Ok(FourierModel { a0, terms })
    }

    pub fn constant(a0: f64) -> Self {
        FourierModel {
            a0,
            terms: Vec::new(),
        }
    }

    /// A model with the given frequencies and coefficients drawn uniformly
    /// from `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(frequencies: &[f64], rng: &mut R) -> Result<Self> {
        let a0 = rng.random_range(-1.0..=1.0);
        let terms = frequencies
            .iter()
            .map(|&omega| FourierTerm {
                omega,
                a: rng.random_range(-1.0..=1.0),
                b: rng.random_range(-1.0..=1.0),
            })
            .collect();
        FourierModel::new(a0, terms)
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn terms(&self) -> &[FourierTerm] {
        &self.terms
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.omega).collect()
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.a0
            + self
                .terms
                .iter()
                .map(|term| {
                    let (s, c) = (term.omega * t).sin_cos();
                    term.a * c + term.b * s
                })
                .sum::<f64>()
    }

    /// Exact `p`-th derivative at `t`; `p = 0` is [`evaluate`](Self::evaluate).
    pub fn derivative(&self, t: f64, p: u32) -> f64 {
        if p == 0 {
            return self.evaluate(t);
        }
        self.terms
            .iter()
            .map(|term| {
                let (s, c) = (term.omega * t).sin_cos();
                let scale = term.omega.powi(p as i32);
                // d^p/dt^p of (a cos + b sin) cycles with period 4 in p
                let v = match p % 4 {
                    0 => term.a * c + term.b * s,
                    1 => -term.a * s + term.b * c,
                    2 => -term.a * c - term.b * s,
                    _ => term.a * s - term.b * c,
                };
                scale * v
            })
            .sum()
    }

    /// `Σ_p a_p f^{(p)}(t)`.
    pub fn combined_derivative(&self, t: f64, orders: &[(u32, f64)]) -> f64 {
        orders.iter().map(|&(p, w)| w * self.derivative(t, p)).sum()
    }
}

/// Gaussian noise level and stream seed for noisy evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(
                "noise sigma must be finite and non-negative",
            ));
        }
        Ok(NoiseSpec { sigma, seed })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `f(t)` plus Gaussian noise of standard deviation `σ`.
///
/// The noise is a pure function of `(seed, t, call_index)`, so samples can be
/// drawn in any order or in parallel and still reproduce.
pub fn sample_noisy(model: &FourierModel, t: f64, noise: &NoiseSpec, call_index: u64) -> f64 {
    let exact = model.evaluate(t);
    if noise.sigma == 0.0 {
        return exact;
    }
    let key = splitmix64(noise.seed ^ splitmix64(t.to_bits() ^ splitmix64(call_index)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let normal = Normal::new(0.0, noise.sigma).expect("sigma validated");
    exact + normal.sample(&mut rng)
}

/// Hamiltonian given by its eigenvalues, with the observable `C` and state
/// `ψ` expressed in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    eigenvalues: Vec<f64>,
    observable: CMatrix,
    state: CVector,
}

impl HamiltonianModel {
    pub fn new(eigenvalues: Vec<f64>, observable: CMatrix, state: CVector) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return Err(Error::invalid("need at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("eigenvalues must be finite"));
        }
        if observable.nrows() != n || observable.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: observable.nrows().max(observable.ncols()),
            });
        }
        if state.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: state.len(),
            });
        }
        let herm_err = (&observable - observable.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm_err > 1e-12 {
            return Err(Error::invalid(format!(
                "observable is not Hermitian (max deviation {herm_err:.3e})"
            )));
        }
        let norm = state.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "state must have unit norm, got {norm}"
            )));
        }
        Ok(HamiltonianModel {
            eigenvalues,
            observable,
            state,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn observable(&self) -> &CMatrix {
        &self.observable
    }

    pub fn state(&self) -> &CVector {
        &self.state
    }

    /// `f(t) = Σ_{k,l} ψ̄_k C_kl ψ_l e^{i(λ_l − λ_k)t}` summed directly.
    pub fn evaluate(&self, t: f64) -> f64 {
        let n = self.eigenvalues.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                let phase = (self.eigenvalues[l] - self.eigenvalues[k]) * t;
                acc += self.state[k].conj()
                    * self.observable[(k, l)]
                    * self.state[l]
                    * Complex64::from_polar(1.0, phase);
            }
        }
        acc.re
    }

    /// Moment matrix `C̃_{kl} = ⟨ψ|H^k C H^l|ψ⟩`, `k, l < n`.
    pub fn moment_matrix(&self) -> CMatrix {
        let n = self.eigenvalues.len();
        CMatrix::from_fn(n, n, |k, l| {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    acc += self.state[a].conj()
                        * self.eigenvalues[a].powi(k as i32)
                        * self.observable[(a, b)]
                        * self.eigenvalues[b].powi(l as i32)
                        * self.state[b];
                }
            }
            acc
        })
    }

    /// `f(t) = a(t)† C̃ a(t)` with `e^{iHt} = Σ_k a_k(t) H^k`.
    ///
    /// Requires distinct eigenvalues.
    pub fn evaluate_via_powers(&self, t: f64) -> Result<f64> {
        let a = CVector::from_vec(vandermonde_expansion_coeffs(&self.eigenvalues, t)?);
        let value = (a.adjoint() * self.moment_matrix() * &a)[(0, 0)];
        Ok(value.re)
    }
}

/// Collects `f(t) = ⟨ψ|e^{−iHt} C e^{iHt}|ψ⟩` into a Fourier series over the
/// positive gaps of the spectrum.
pub fn from_hamiltonian(hm: &HamiltonianModel) -> Result<FourierModel> {
    let n = hm.eigenvalues.len();
    if n == 1 {
        let c = hm.state[0].conj() * hm.observable[(0, 0)] * hm.state[0];
        return Ok(FourierModel::constant(c.re));
    }
    let spectrum = Spectrum::new(hm.eigenvalues.clone())?;
    let fs = frequency_differences(&spectrum, DEFAULT_DEDUP_TOL)?;
    let tol = spectrum.absolute_tolerance(DEFAULT_DEDUP_TOL);
    let freqs = fs.positive_values();

    let mut a0 = 0.0;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); freqs.len()];
    for k in 0..n {
        for l in 0..n {
            let c = hm.state[k].conj() * hm.observable[(k, l)] * hm.state[l];
            let gap = hm.eigenvalues[l] - hm.eigenvalues[k];
            if gap.abs() < tol {
                a0 += c.re;
            } else if gap > 0.0 {
                // the (l, k) pair carries the conjugate coefficient
                let idx = nearest(&freqs, gap);
                coeffs[idx] += c;
            }
        }
    }
    let terms = freqs
        .iter()
        .zip(&coeffs)
        .map(|(&omega, c)| FourierTerm {
            omega,
            a: 2.0 * c.re,
            b: -2.0 * c.im,
        })
        .collect();
    FourierModel::new(a0, terms)
}

fn nearest(sorted: &[f64], x: f64) -> usize {
    sorted
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .expect("non-empty frequency list")
}

/// Coefficients `c_p` with `Σ_p c_p λ_j^p = values_j` for every `j`, i.e. the
/// polynomial-in-`H` expansion of a function given on the spectrum.
pub fn expansion_coeffs(lambda: &[f64], values: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = lambda.len();
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: values.len(),
        });
    }
    check_distinct(lambda)?;
    let vander: CMatrix =
        DMatrix::from_fn(n, n, |j, p| Complex64::new(lambda[j].powi(p as i32), 0.0));
    let rhs = CVector::from_column_slice(values);
    Ok(linalg::solve(&vander, &rhs)?.iter().copied().collect())
}

fn check_distinct(lambda: &[f64]) -> Result<()> {
    let scale = lambda.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
    for i in 0..lambda.len() {
        for j in 0..i {
            if (lambda[i] - lambda[j]).abs() <= DEFAULT_DEDUP_TOL * scale {
                return Err(Error::invalid(
                    "eigenvalues must be pairwise distinct for the Vandermonde expansion",
                ));
            }
        }
    }
    Ok(())
}

/// Coefficients of `e^{iHt} = Σ_p c_p(t) H^p`.
pub fn vandermonde_expansion_coeffs(lambda: &[f64], t: f64) -> Result<Vec<Complex64>> {
    let values: Vec<Complex64> = lambda
        .iter()
        .map(|&l| Complex64::from_polar(1.0, l * t))
        .collect();
    expansion_coeffs(lambda, &values)
}

/// Coefficients of `d/dt e^{iHt} = Σ_p c̃_p(t) H^p`, i.e. the expansion of
/// `iλ e^{iλt}`.
pub fn derivative_expansion_coeffs(lambda: &[f64], t: f64) -> Result<Vec<Complex64>> {
    let values: Vec<Complex64> = lambda
        .iter()
        .map(|&l| linalg::I * l * Complex64::from_polar(1.0, l * t))
        .collect();
    expansion_coeffs(lambda, &values)
}

/// Closed-form inverse of the Vandermonde matrix `V_{jp} = λ_j^p` built from
/// elementary symmetric polynomials of the other eigenvalues:
/// `(V⁻¹)_{pj} = (−1)^{n−1−p} e_{n−1−p}(λ without λ_j) / Π_{k≠j}(λ_j − λ_k)`.
pub fn vandermonde_inverse_closed_form(lambda: &[f64]) -> Result<DMatrix<f64>> {
    check_distinct(lambda)?;
    let n = lambda.len();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let others: Vec<f64> = lambda
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, &x)| x)
            .collect();
        let denom: f64 = others.iter().map(|&x| lambda[j] - x).product();
        let e = elementary_symmetric(&others);
        for p in 0..n {
            let deg = n - 1 - p;
            let sign = if deg.is_multiple_of(2) { 1.0 } else { -1.0 };
            inv[(p, j)] = sign * e[deg] / denom;
        }
    }
    Ok(inv)
}

/// `e_0 … e_len` of the given values.
fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (i, &x) in values.iter().enumerate() {
        for d in (1..=i + 1).rev() {
            e[d] += x * e[d - 1];
        }
    }
    e
}
