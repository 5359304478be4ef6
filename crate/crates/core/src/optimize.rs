//! Phase optimization for low-variance rules.
//!
//! `Σ b_x(φ)²` has no interior minimum in general: letting two columns merge
//! splits their weight and keeps lowering the objective while the system
//! degenerates. The search therefore solves the stationarity equations
//! `∇ Σ b_x² = 0` with Levenberg-Marquardt from several starts and keeps the
//! best well-posed stationary point that does not exceed the starting
//! objective. If none qualifies, a BFGS descent from the start is returned.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::FrequencySet;
use crate::synthesis::{
    build_rectangular_system, solve_direct_with_cap, DerivativeTerm, ShiftRule,
    DEFAULT_CONDITION_CAP,
};
use crate::variance::{analytic_gradient, checked_system, phase_step, regularized_gradient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub max_iters: usize,
    /// Gradient tolerance (max norm) for convergence.
    pub tol: f64,
    /// Random starts in addition to the given one.
    pub multistarts: usize,
    pub seed: u64,
    /// Box for random starts; defaults to `(−2π/g_min, 0)` for every phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
    pub condition_cap: f64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            max_iters: 200,
            tol: 1e-10,
            multistarts: 24,
            seed: 0,
            bounds: None,
            condition_cap: DEFAULT_CONDITION_CAP,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid("bounds need lo < hi"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub phases: Vec<f64>,
    pub rule: ShiftRule,
    /// `Σb²` at the given start; infinite when the start is ill-posed.
    pub initial_objective: f64,
    pub objective: f64,
    /// Max-norm of `∇ Σb²` at the returned phases.
    pub gradient_norm: f64,
    /// Whether the returned phases solve the stationarity equations.
    pub stationary: bool,
    pub starts: usize,
}

/// Objective and gradient; `None` where the system is ill-posed.
trait Objective {
    fn eval(&self, phases: &[f64]) -> Option<(f64, Vec<f64>)>;
}

struct Direct<'a> {
    freq: &'a FrequencySet,
    orders: &'a [DerivativeTerm],
    cap: f64,
}

impl Objective for Direct<'_> {
    fn eval(&self, phases: &[f64]) -> Option<(f64, Vec<f64>)> {
        let sys = checked_system(self.freq, phases, self.orders, self.cap).ok()?;
        let (b, g) = analytic_gradient(&sys).ok()?;
        let f = b.iter().map(|x| x * x).sum();
        Some((f, g))
    }
}

struct Regularized<'a> {
    freq: &'a FrequencySet,
    orders: &'a [DerivativeTerm],
    gamma: f64,
}

impl Objective for Regularized<'_> {
    fn eval(&self, phases: &[f64]) -> Option<(f64, Vec<f64>)> {
        let sys = build_rectangular_system(self.freq, phases, self.orders).ok()?;
        let (b, g) = regularized_gradient(&sys, self.gamma).ok()?;
        Some((b.iter().map(|x| x * x).sum(), g))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn hessian(obj: &dyn Objective, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    for j in 0..n {
        p[j] = x[j] + h;
        let plus = obj.eval(&p)?.1;
        p[j] = x[j] - h;
        let minus = obj.eval(&p)?.1;
        p[j] = x[j];
        for i in 0..n {
            hm[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Some((&hm + hm.transpose()) * 0.5)
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Levenberg-Marquardt on `∇F = 0` with merit `‖∇F‖²`.
fn solve_stationary(
    obj: &dyn Objective,
    x0: &[f64],
    h: f64,
    cfg: &OptimizationConfig,
) -> Option<Point> {
    let (f, g) = obj.eval(x0)?;
    let mut cur = Point {
        x: x0.to_vec(),
        f,
        g,
    };
    let mut lambda = 1e-3;
    for _ in 0..cfg.max_iters {
        if max_abs(&cur.g) <= cfg.tol {
            return Some(cur);
        }
        let hm = hessian(obj, &cur.x, h)?;
        let g = DVector::from_column_slice(&cur.g);
        let jtj = hm.transpose() * &hm;
        let jtg = hm.transpose() * &g;
        let scale = jtj.diagonal().max().max(1e-300);
        let mut accepted = false;
        while lambda <= 1e12 {
            let a = &jtj + DMatrix::identity(jtj.nrows(), jtj.ncols()) * (lambda * scale);
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&jtg))) else {
                lambda *= 10.0;
                continue;
            };
            let x: Vec<f64> = cur.x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match obj.eval(&x) {
                Some((f, g))
                    if g.iter().map(|v| v * v).sum::<f64>()
                        < cur.g.iter().map(|v| v * v).sum::<f64>() =>
                {
                    cur = Point { x, f, g };
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    (max_abs(&cur.g) <= cfg.tol).then_some(cur)
}

/// BFGS with Armijo backtracking; never increases the objective.
fn descend(obj: &dyn Objective, x0: &[f64], cfg: &OptimizationConfig) -> Option<Point> {
    let (f, g) = obj.eval(x0)?;
    let n = x0.len();
    let mut cur = Point {
        x: x0.to_vec(),
        f,
        g,
    };
    let mut hinv = DMatrix::<f64>::identity(n, n) / max_abs(&cur.g).max(1.0);
    for _ in 0..cfg.max_iters {
        if max_abs(&cur.g) <= cfg.tol {
            break;
        }
        let g = DVector::from_column_slice(&cur.g);
        let mut d = -(&hinv * &g);
        if d.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n) / max_abs(&cur.g).max(1.0);
            d = -(&hinv * &g);
        }
        let slope = d.dot(&g);
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let x: Vec<f64> = cur
                .x
                .iter()
                .zip(d.iter())
                .map(|(a, b)| a + alpha * b)
                .collect();
            if let Some((f, gn)) = obj.eval(&x) {
                if f <= cur.f + 1e-4 * alpha * slope {
                    next = Some(Point { x, f, g: gn });
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = next else { break };
        let s = DVector::from_iterator(n, next.x.iter().zip(&cur.x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, next.g.iter().zip(&cur.g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(n, n);
            let left = &id - &s * y.transpose() * rho;
            let right = &id - &y * s.transpose() * rho;
            hinv = left * &hinv * right + &s * s.transpose() * rho;
        }
        let done = (cur.f - next.f).abs() <= 1e-15 * cur.f.abs().max(1.0);
        cur = next;
        if done {
            break;
        }
    }
    Some(cur)
}

fn default_bounds(freq: &FrequencySet) -> (f64, f64) {
    let g = freq.min_frequency().unwrap_or(1.0);
    (-2.0 * std::f64::consts::PI / g, 0.0)
}

fn search(
    obj: &dyn Objective,
    freq: &FrequencySet,
    phi0: &[f64],
    cfg: &OptimizationConfig,
) -> Result<(Point, f64, bool, usize)> {
    cfg.validate()?;
    let h = phase_step(freq);
    let (lo, hi) = cfg.bounds.unwrap_or_else(|| default_bounds(freq));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![phi0.to_vec()];
    for _ in 0..cfg.multistarts {
        starts.push((0..phi0.len()).map(|_| rng.random_range(lo..hi)).collect());
    }

    let initial = obj.eval(phi0).map(|(f, _)| f).unwrap_or(f64::INFINITY);
    let mut best: Option<Point> = None;
    for start in &starts {
        if let Some(p) = solve_stationary(obj, start, h, cfg) {
            if p.f <= initial + cfg.tol && best.as_ref().is_none_or(|b| p.f < b.f) {
                best = Some(p);
            }
        }
    }
    if let Some(p) = best {
        return Ok((p, initial, true, starts.len()));
    }

    let fallback = if initial.is_finite() {
        descend(obj, phi0, cfg)
    } else {
        starts[1..]
            .iter()
            .filter_map(|s| descend(obj, s, cfg))
            .min_by(|a, b| a.f.total_cmp(&b.f))
    };
    let p = fallback
        .ok_or_else(|| Error::ill_posed(f64::INFINITY, "all optimization starts are ill-posed"))?;
    let stationary = max_abs(&p.g) <= cfg.tol;
    Ok((p, initial, stationary, starts.len()))
}

/// Minimizes `Σ b_x²` over the phases, starting from `phi0`.
pub fn optimize_shifts(
    freq: &FrequencySet,
    phi0: &[f64],
    orders: &[DerivativeTerm],
    cfg: &OptimizationConfig,
) -> Result<OptimizationResult> {
    if phi0.len() != freq.m() {
        return Err(Error::DimensionMismatch {
            expected: freq.m(),
            actual: phi0.len(),
        });
    }
    let obj = Direct {
        freq,
        orders,
        cap: cfg.condition_cap,
    };
    let (p, initial, stationary, starts) = search(&obj, freq, phi0, cfg)?;
    let sys = checked_system(freq, &p.x, orders, cfg.condition_cap)?;
    let rule = solve_direct_with_cap(&sys, cfg.condition_cap)?;
    Ok(OptimizationResult {
        objective: p.f,
        gradient_norm: max_abs(&p.g),
        phases: p.x,
        rule,
        initial_objective: initial,
        stationary,
        starts,
    })
}

/// Minimizes `Σ (b^γ_x)²` for the Tikhonov solution at fixed `γ`.
pub fn optimize_shifts_regularized(
    freq: &FrequencySet,
    phi0: &[f64],
    orders: &[DerivativeTerm],
    gamma: f64,
    cfg: &OptimizationConfig,
) -> Result<OptimizationResult> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let obj = Regularized {
        freq,
        orders,
        gamma,
    };
    let (p, initial, stationary, starts) = search(&obj, freq, phi0, cfg)?;
    let cfg_r = crate::regularization::RegularizationConfig {
        gamma: crate::regularization::Gamma::Fixed(gamma),
        ..Default::default()
    };
    let rule = crate::regularization::regularized_rule(freq, &p.x, orders, &cfg_r)?.rule;
    Ok(OptimizationResult {
        objective: p.f,
        gradient_norm: max_abs(&p.g),
        phases: p.x,
        rule,
        initial_objective: initial,
        stationary,
        starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{frequency_differences, Spectrum};
    use crate::synthesis::first_derivative;
    use crate::variance::{stationarity_residual, StationarityMethod};

    fn freq(v: &[f64]) -> FrequencySet {
        frequency_differences(&Spectrum::new(v.to_vec()).unwrap(), 1e-12).unwrap()
    }

    #[test]
    fn finds_stationary_point_below_start() {
        let fs = freq(&[0.0, 1.0, 2.5]);
        let phi0 = fs.default_phases();
        let r = optimize_shifts(
            &fs,
            &phi0,
            &first_derivative(),
            &OptimizationConfig::default(),
        )
        .unwrap();
        assert!(r.objective <= r.initial_objective);
        assert!(r.stationary);
        let res = stationarity_residual(
            &fs,
            &r.phases,
            &first_derivative(),
            StationarityMethod::FiniteDifference,
        )
        .unwrap();
        assert!(max_abs(&res) <= 1e-6, "{res:?}");
        assert!((r.rule.square_norm() - r.objective).abs() <= 1e-9 * r.objective);
    }

    #[test]
    fn ill_posed_start_without_multistarts_fails() {
        let fs = freq(&[0.0, 1.0]);
        let cfg = OptimizationConfig {
            multistarts: 0,
            ..Default::default()
        };
        let err = optimize_shifts(&fs, &[0.5, 0.5, 1.0], &first_derivative(), &cfg).unwrap_err();
        assert!(matches!(err, Error::IllPosed { .. }));
    }

    #[test]
    fn descent_never_increases() {
        let fs = freq(&[0.0, 1.0, 2.5]);
        let obj = Direct {
            freq: &fs,
            orders: &first_derivative(),
            cap: DEFAULT_CONDITION_CAP,
        };
        let x0 = fs.default_phases();
        let f0 = obj.eval(&x0).unwrap().0;
        let p = descend(&obj, &x0, &OptimizationConfig::default()).unwrap();
        assert!(p.f <= f0);
    }
}
