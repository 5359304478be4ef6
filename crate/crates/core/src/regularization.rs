//! Tikhonov-regularized rules for ill-posed systems.
//!
//! `b^γ = (γI + E†E)^{-1} E† μ` is evaluated through the SVD of `E` as
//! `V diag(σ/(σ² + γ)) U† μ`, which stays stable for singular and
//! rectangular matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::spectrum::FrequencySet;
use crate::synthesis::{
    build_rectangular_system, DerivativeTerm, Diagnostics, LinearSystem, RuleMethod, ShiftRule,
};

/// Regularization strength: fixed, or chosen by the discrepancy principle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum Gamma {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<GammaRepr> for Gamma {
    type Error = String;

    fn try_from(r: GammaRepr) -> std::result::Result<Self, String> {
        match r {
            GammaRepr::Text(s) if s == "auto" => Ok(Gamma::Auto),
            GammaRepr::Text(s) => Err(format!("gamma must be \"auto\" or a number, got {s:?}")),
            GammaRepr::Number(g) if g > 0.0 && g.is_finite() => Ok(Gamma::Fixed(g)),
            GammaRepr::Number(g) => Err(format!("gamma must be positive, got {g}")),
        }
    }
}

impl From<Gamma> for GammaRepr {
    fn from(g: Gamma) -> Self {
        match g {
            Gamma::Auto => GammaRepr::Text("auto".into()),
            Gamma::Fixed(v) => GammaRepr::Number(v),
        }
    }
}

/// Geometric grid of candidate γ values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid {
            min: 1e-14,
            max: 1e2,
            points: 33,
        }
    }
}

impl GammaGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::invalid("gamma grid is empty"));
        }
        if !(self.min > 0.0 && self.min < self.max && self.max.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma grid needs 0 < min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Ascending grid values.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let last = self.points - 1;
        (0..self.points)
            .map(|i| match i {
                0 => self.min,
                i if i == last => self.max,
                i => (lo + (hi - lo) * i as f64 / last as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub gamma: Gamma,
    /// Norm of the error in the right-hand side.
    pub data_error: f64,
    /// Norm of the error attributed to the matrix.
    pub operator_error: f64,
    pub grid: GammaGrid,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            gamma: Gamma::Auto,
            data_error: 0.0,
            operator_error: 0.0,
            grid: GammaGrid::default(),
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_error >= 0.0 && self.operator_error >= 0.0) {
            return Err(Error::invalid(
                "data_error and operator_error must be non-negative",
            ));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("gamma must be positive, got {g}")));
            }
        }
        self.grid.validate()
    }

    pub fn discrepancy_target(&self) -> f64 {
        self.data_error + self.operator_error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution {
    pub coefficients: Vec<f64>,
    pub gamma: f64,
    /// `‖E b^γ − μ‖`.
    pub residual: f64,
    /// `‖b^γ‖`.
    pub norm: f64,
    pub max_imag_discarded: f64,
}

/// SVD factors of a system, reusable across γ values.
struct Filter {
    u_adj_mu: CVector,
    sigma: Vec<f64>,
    v: linalg::CMatrix,
}

impl Filter {
    fn new(sys: &LinearSystem) -> Result<Self> {
        let svd = sys.matrix.clone().svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Singular("SVD did not converge".into())),
        };
        Ok(Filter {
            u_adj_mu: u.adjoint() * &sys.rhs,
            sigma: svd.singular_values.iter().copied().collect(),
            v: v_t.adjoint(),
        })
    }

    fn solve(&self, sys: &LinearSystem, gamma: f64) -> RegularizedSolution {
        let filtered = CVector::from_iterator(
            self.sigma.len(),
            self.sigma
                .iter()
                .zip(self.u_adj_mu.iter())
                .map(|(&s, &c)| c * (s / (s * s + gamma))),
        );
        let b = &self.v * filtered;
        let residual = (&sys.matrix * &b - &sys.rhs).norm();
        RegularizedSolution {
            coefficients: linalg::real_parts(&b),
            gamma,
            residual,
            norm: b.norm(),
            max_imag_discarded: linalg::max_abs_imag(&b),
        }
    }
}

/// `(γI + E†E)^{-1} E† μ`, real part kept.
pub fn tikhonov_solve(sys: &LinearSystem, gamma: f64) -> Result<RegularizedSolution> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(Filter::new(sys)?.solve(sys, gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSelection {
    pub gamma: f64,
    pub residual: f64,
    pub target: f64,
    /// Set when the target could not be met exactly.
    pub diagnostic: Option<String>,
}

/// γ whose residual `‖E b^γ − μ‖` equals `data_error + operator_error`.
///
/// The grid brackets the target and bisection in `log γ` refines it. When even
/// the smallest γ overshoots the target, the grid minimum is returned; when
/// the largest γ still undershoots, the grid maximum.
pub fn select_gamma_discrepancy(
    sys: &LinearSystem,
    cfg: &RegularizationConfig,
) -> Result<GammaSelection> {
    cfg.validate()?;
    let filter = Filter::new(sys)?;
    let target = cfg.discrepancy_target();
    let grid = cfg.grid.values();
    let residuals: Vec<f64> = grid
        .iter()
        .map(|&g| filter.solve(sys, g).residual)
        .collect();

    if residuals[0] >= target {
        return Ok(GammaSelection {
            gamma: grid[0],
            residual: residuals[0],
            target,
            diagnostic: Some(format!(
                "target unreachable exactly: residual {:.3e} at the smallest gamma already exceeds {:.3e}",
                residuals[0], target
            )),
        });
    }
    let last = grid.len() - 1;
    if residuals[last] <= target {
        return Ok(GammaSelection {
            gamma: grid[last],
            residual: residuals[last],
            target,
            diagnostic: Some(format!(
                "residual {:.3e} at the largest gamma is still below the target {:.3e}",
                residuals[last], target
            )),
        });
    }
    let hi_idx = residuals
        .iter()
        .position(|&r| r > target)
        .expect("last residual exceeds the target");
    let (mut lo, mut hi) = (grid[hi_idx - 1].ln(), grid[hi_idx].ln());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if filter.solve(sys, mid.exp()).residual > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let gamma = lo.exp();
    Ok(GammaSelection {
        gamma,
        residual: filter.solve(sys, gamma).residual,
        target,
        diagnostic: None,
    })
}

/// Regularized rule with the γ selection that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedRule {
    pub rule: ShiftRule,
    pub selection: Option<GammaSelection>,
}

/// Builds the possibly rank-deficient system and solves it with Tikhonov
/// regularization; the number of phases is free.
pub fn regularized_rule(
    freq: &FrequencySet,
    phases: &[f64],
    orders: &[DerivativeTerm],
    cfg: &RegularizationConfig,
) -> Result<RegularizedRule> {
    cfg.validate()?;
    let sys = build_rectangular_system(freq, phases, orders)?;
    let selection = match cfg.gamma {
        Gamma::Fixed(_) => None,
        Gamma::Auto => Some(select_gamma_discrepancy(&sys, cfg)?),
    };
    let gamma = match (cfg.gamma, &selection) {
        (Gamma::Fixed(g), _) => g,
        (Gamma::Auto, Some(s)) => s.gamma,
        (Gamma::Auto, None) => unreachable!(),
    };
    let sol = tikhonov_solve(&sys, gamma)?;
    let residual = crate::synthesis::residual_norm(&sys.matrix, &sol.coefficients, &sys.rhs);
    Ok(RegularizedRule {
        rule: ShiftRule {
            phases: sys.phases.clone(),
            coefficients: sol.coefficients,
            orders: sys.orders.clone(),
            frequencies: freq.positive_values(),
            diagnostics: Diagnostics {
                condition_number: linalg::condition_number(&sys.matrix),
                residual,
                max_imag_discarded: sol.max_imag_discarded,
                gamma: Some(gamma),
                method: Some(RuleMethod::Regularized),
                perturbation: None,
            },
        },
        selection,
    })
}

/// `‖E†μ‖`, the scale in the bound `‖b^γ‖ ≤ ‖E†μ‖/γ`.
pub fn adjoint_rhs_norm(sys: &LinearSystem) -> f64 {
    (sys.matrix.adjoint() * &sys.rhs).norm()
}
