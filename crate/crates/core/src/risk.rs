//! Value-at-Risk and Conditional Value-at-Risk.
//!
//! Levels follow the upper-tail convention: `VaR_α(R)` is the smallest γ with
//! `P(R > γ) ≤ α`, and `CVaR_α(R)` averages the α-mass of outcomes above it.
//! The empirical CVaR is the Rockafellar–Uryasev value
//! `min_γ γ + E[(R − γ)⁺]/α`, which equals `VaR + E[(R − VaR)⁺]/α`: the mean of the
//! samples above VaR, with the atom at VaR filling whatever tail mass is left.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("empty sample set")]
    Empty,
    #[error("non-finite sample {0}")]
    NonFinite(f64),
    #[error("risk level {0} outside (0, 1)")]
    Level(f64),
}

/// Immutable, sorted snapshot of rate samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

fn check_level(alpha: f64) -> Result<(), RiskError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(RiskError::Level(alpha))
    }
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, RiskError> {
        if samples.is_empty() {
            return Err(RiskError::Empty);
        }
        if let Some(&x) = samples.iter().find(|x| !x.is_finite()) {
            return Err(RiskError::NonFinite(x));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }

    /// Smallest sample γ with `#{x > γ}/N ≤ α`.
    pub fn var_alpha(&self, alpha: f64) -> Result<f64, RiskError> {
        check_level(alpha)?;
        let n = self.len();
        let budget = alpha * n as f64 * (1.0 + 1e-12);
        let mut i = 0;
        while i < n {
            let v = self.sorted[i];
            // first index past the run of ties at v
            let mut j = i + 1;
            while j < n && self.sorted[j] == v {
                j += 1;
            }
            if (n - j) as f64 <= budget {
                return Ok(v);
            }
            i = j;
        }
        Ok(self.sorted[n - 1])
    }

    /// `VaR_α + E[(R − VaR_α)⁺]/α`; equals VaR when nothing exceeds it.
    pub fn cvar_alpha(&self, alpha: f64) -> Result<f64, RiskError> {
        let var = self.var_alpha(alpha)?;
        Ok(var + self.mean_excess(var) / alpha)
    }

    /// Lower-tail counterpart: the expected value of the worst (lowest) α-mass.
    pub fn lower_cvar_alpha(&self, alpha: f64) -> Result<f64, RiskError> {
        let negated = Self {
            sorted: self.sorted.iter().rev().map(|x| -x).collect(),
        };
        Ok(-negated.cvar_alpha(alpha)?)
    }

    /// E[(R − γ)⁺] under the empirical measure.
    pub fn mean_excess(&self, gamma: f64) -> f64 {
        self.sorted.iter().map(|x| (x - gamma).max(0.0)).sum::<f64>() / self.len() as f64
    }

    /// Sample Rockafellar–Uryasev function `γ + E[(R − γ)⁺]/α`; its minimum over γ is
    /// `cvar_alpha`.
    pub fn rockafellar_uryasev(&self, gamma: f64, alpha: f64) -> Result<f64, RiskError> {
        check_level(alpha)?;
        Ok(gamma + self.mean_excess(gamma) / alpha)
    }
}

/// Deterministic surrogate used by the placement problem:
/// `γ + max(0, E[R] − γ)/(1 − α)`.
pub fn phi_alpha(expected_rate: f64, gamma: f64, alpha: f64) -> f64 {
    gamma + (expected_rate - gamma).max(0.0) / (1.0 - alpha)
}

/// Minimizer (γ*, z*) of `γ + z/(1 − α)` subject to `z ≥ E[R] − γ`, `z ≥ 0`.
///
/// The slope in γ is 1 − 1/(1 − α) < 0 below E[R] and 1 above it, so the
/// minimum sits at the kink: γ* = E[R], z* = 0.
pub fn surrogate_minimizer(expected_rate: f64, alpha: f64) -> (f64, f64) {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    (expected_rate, 0.0)
}

/// VaR and both tail CVaRs of a sample set at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSummary {
    pub level: f64,
    pub var: f64,
    pub cvar_upper: f64,
    pub cvar_lower: f64,
}

impl TailSummary {
    pub fn of(dist: &EmpiricalDistribution, alpha: f64) -> Result<Self, RiskError> {
        Ok(Self {
            level: alpha,
            var: dist.var_alpha(alpha)?,
            cvar_upper: dist.cvar_alpha(alpha)?,
            cvar_lower: dist.lower_cvar_alpha(alpha)?,
        })
    }
}
