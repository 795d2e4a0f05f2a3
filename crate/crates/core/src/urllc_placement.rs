//! URLLC puncturing placement for a fixed eMBB schedule.
//!
//! The chance constraint `Pr[R_urllc ≤ L] ≤ ε` is replaced by its Markov
//! sufficient condition `E[R_urllc(ω)]·T_slot ≥ E[L]/ε`, which is linear in ω.
//! The CVaR term enters through the surrogate `γ + z/(1 − α)` with
//! `z ≥ E[R(ω)] − γ`, `z ≥ 0`; its minimum over (γ, z) is `E[R(ω)]` at
//! `γ = E[R(ω)]`, `z = 0`, so the solver works on ω alone:
//!
//! ```text
//! maximize  Σ_u log E[R_u(ω)] − β · E[R(ω)] / R_ref
//! s.t.      c·ω ≥ 1,  0 ≤ ω ≤ 1
//! ```
//!
//! `R_ref` is the unpunctured equal-share sum rate of the slot; it makes the
//! risk term dimensionless so that β trades it against the log utility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChannelRealization, PunctureWeights, SchedulingMatrix, SystemConfig, SLOT_SECONDS};
use crate::risk::surrogate_minimizer;

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
pub enum PlacementError {
    /// Even full puncturing cannot meet the Markov bound.
    #[error(
        "placement infeasible: E[R_urllc] at full puncturing is {max_achievable} bit/s, {required} bit/s required"
    )]
    Infeasible { max_achievable: f64, required: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub window: usize,
    pub armijo: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            rel_tol: 1e-9,
            window: 10,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub weights: PunctureWeights,
    /// Surrogate objective at the solution (log utility minus normalized risk).
    pub objective: f64,
    pub iterations: usize,
}

/// Per-slot data of the placement problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    /// Unpunctured expected rate φ_u log2(1 + SNR_u), bits/s.
    pub unpunctured: Vec<f64>,
    /// Per-Hz eMBB rate coefficient log2(1 + SNR_u).
    pub spectral_efficiency: Vec<f64>,
    /// E[L]/L_max.
    pub load_fraction: f64,
    /// Constraint row, normalized so the Markov bound reads `c·ω ≥ 1`.
    /// Empty when no URLLC traffic is expected.
    pub constraint: Vec<f64>,
    pub risk_weight: f64,
    pub cvar_level: f64,
    pub risk_scale: f64,
    /// E[R_urllc] per unit of `c·ω`, bits/s.
    pub urllc_rate_unit: f64,
    /// E[L]/(ε T_slot), bits/s.
    pub required_urllc_rate: f64,
}

impl PlacementProblem {
    pub fn new(cfg: &SystemConfig, chan: &ChannelRealization, sched: &SchedulingMatrix) -> Self {
        Self::with_risk_weight(cfg, chan, sched, cfg.risk_weight)
    }

    pub fn with_risk_weight(
        cfg: &SystemConfig,
        chan: &ChannelRealization,
        sched: &SchedulingMatrix,
        risk_weight: f64,
    ) -> Self {
        let phi = sched.bandwidth(&cfg.rb_bandwidth);
        let se = chan.embb_spectral_efficiency(cfg);
        let unpunctured: Vec<f64> = phi.iter().zip(&se).map(|(p, s)| p * s).collect();
        let k = cfg.expected_load_fraction();
        let s_c = chan.urllc_spectral_efficiency(cfg);
        let required_urllc_rate = cfg.required_urllc_bits() / SLOT_SECONDS;
        let constraint = if cfg.expected_load() > 0.0 {
            phi.iter().map(|p| p * k * s_c / required_urllc_rate).collect()
        } else {
            Vec::new()
        };
        let mean_se = se.iter().sum::<f64>() / se.len().max(1) as f64;
        Self {
            unpunctured,
            spectral_efficiency: se,
            load_fraction: k,
            constraint,
            risk_weight,
            cvar_level: cfg.cvar_level,
            risk_scale: cfg.total_bandwidth() * mean_se,
            urllc_rate_unit: required_urllc_rate,
            required_urllc_rate,
        }
    }

    pub fn num_users(&self) -> usize {
        self.unpunctured.len()
    }

    /// E[R_u(ω)] for every user.
    pub fn expected_rates(&self, w: &[f64]) -> Vec<f64> {
        self.unpunctured
            .iter()
            .zip(w)
            .map(|(a, x)| a * (1.0 - self.load_fraction * x))
            .collect()
    }

    /// `c·ω`; at least 1 when the Markov bound holds.
    pub fn constraint_value(&self, w: &[f64]) -> f64 {
        if self.constraint.is_empty() {
            return f64::INFINITY;
        }
        self.constraint.iter().zip(w).map(|(c, x)| c * x).sum()
    }

    /// E[R_urllc(ω)], bits/s.
    pub fn expected_urllc_rate(&self, w: &[f64]) -> f64 {
        if self.constraint.is_empty() {
            0.0
        } else {
            self.constraint_value(w) * self.urllc_rate_unit
        }
    }

    pub fn is_feasible(&self, w: &[f64], tol: f64) -> bool {
        w.iter().all(|x| (-tol..=1.0 + tol).contains(x)) && self.constraint_value(w) >= 1.0 - tol
    }

    fn check_feasible(&self) -> Result<(), PlacementError> {
        let full: f64 = self.constraint.iter().sum();
        if !self.constraint.is_empty() && full < 1.0 {
            return Err(PlacementError::Infeasible {
                max_achievable: full * self.urllc_rate_unit,
                required: self.required_urllc_rate,
            });
        }
        Ok(())
    }

    /// `Σ_u log E[R_u] − β(γ + z/(1 − α))/R_ref` with (γ, z) at their optimum,
    /// over users with a positive unpunctured rate.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let rates = self.expected_rates(w);
        let utility: f64 = rates
            .iter()
            .zip(&self.unpunctured)
            .filter(|(_, &a)| a > 0.0)
            .map(|(r, _)| r.ln())
            .sum();
        let (gamma, z) = surrogate_minimizer(rates.iter().sum(), self.cvar_level);
        utility - self.risk_penalty(gamma, z)
    }

    fn risk_penalty(&self, gamma: f64, z: f64) -> f64 {
        if self.risk_scale > 0.0 {
            self.risk_weight * (gamma + z / (1.0 - self.cvar_level)) / self.risk_scale
        } else {
            0.0
        }
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let k = self.load_fraction;
        let risk = if self.risk_scale > 0.0 {
            self.risk_weight * k / self.risk_scale
        } else {
            0.0
        };
        for ((g, a), x) in out.iter_mut().zip(&self.unpunctured).zip(w) {
            *g = if *a > 0.0 { -k / (1.0 - k * x) + risk * a } else { 0.0 };
        }
    }

    /// Euclidean projection onto `{0 ≤ ω ≤ 1, c·ω ≥ 1}`.
    ///
    /// The result always satisfies `c·ω ≥ 1` in floating point.
    pub fn project(&self, y: &mut [f64]) {
        let base: Vec<f64> = y.to_vec();
        y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if self.constraint.is_empty() || self.constraint_value(y) >= 1.0 {
            return;
        }
        let c = &self.constraint;
        let at = |lambda: f64| -> Vec<f64> {
            base.iter()
                .zip(c)
                .map(|(b, ci)| (b + lambda * ci).clamp(0.0, 1.0))
                .collect()
        };
        let value = |x: &[f64]| -> f64 { c.iter().zip(x).map(|(ci, xi)| ci * xi).sum() };
        let mut lo = 0.0;
        let mut hi = 1.0 / c.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        while value(&at(hi)) < 1.0 {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if value(&at(mid)) >= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        y.copy_from_slice(&at(hi));
    }

    fn finish(&self, w: Vec<f64>, iterations: usize) -> PlacementSolution {
        let expected_sum: f64 = self.expected_rates(&w).iter().sum();
        let (var_level, excess) = surrogate_minimizer(expected_sum, self.cvar_level);
        let objective = self.objective(&w);
        PlacementSolution {
            weights: PunctureWeights {
                weights: w,
                var_level,
                excess,
            },
            objective,
            iterations,
        }
    }

    /// Projected gradient ascent with Armijo backtracking from step 1.
    pub fn solve(&self, opts: PlacementOptions) -> Result<PlacementSolution, PlacementError> {
        let n = self.num_users();
        if self.constraint.is_empty() {
            return Ok(self.finish(vec![0.0; n], 0));
        }
        self.check_feasible()?;

        let mut x = vec![0.0; n];
        self.project(&mut x);
        let mut obj = self.objective(&x);
        let mut history = vec![obj];
        let mut grad = vec![0.0; n];
        let mut iterations = 0;

        while iterations < opts.max_iters {
            iterations += 1;
            self.gradient(&x, &mut grad);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
                self.project(&mut trial);
                let ascent: f64 = grad
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(g, (t, xi))| g * (t - xi))
                    .sum();
                let t_obj = self.objective(&trial);
                if t_obj.is_finite() && t_obj >= obj + opts.armijo * ascent {
                    accepted = Some((trial, t_obj, ascent));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, t_obj, ascent)) = accepted else {
                break;
            };
            let moved = trial != x && ascent > 0.0;
            x = trial;
            obj = t_obj;
            history.push(obj);
            if !moved {
                break;
            }
            if history.len() > opts.window {
                let past = history[history.len() - 1 - opts.window];
                if (obj - past).abs() <= opts.rel_tol * obj.abs().max(1.0) {
                    break;
                }
            }
        }
        Ok(self.finish(x, iterations))
    }

    /// Maximize the linear sum of expected eMBB rates under the same constraints.
    ///
    /// Each unit of `c_u ω_u` costs `a_u k / c_u ∝ log2(1 + SNR_u)` in sum rate, so the
    /// LP optimum fills users in ascending spectral efficiency (stable by index).
    pub fn solve_linear(&self) -> Result<PlacementSolution, PlacementError> {
        let n = self.num_users();
        if self.constraint.is_empty() {
            return Ok(self.finish(vec![0.0; n], 0));
        }
        self.check_feasible()?;
        let mut order: Vec<usize> = (0..n).filter(|&u| self.constraint[u] > 0.0).collect();
        order.sort_by(|&a, &b| self.spectral_efficiency[a].total_cmp(&self.spectral_efficiency[b]));
        let mut w = vec![0.0; n];
        let mut remaining = 1.0;
        for u in order {
            if remaining <= 0.0 {
                break;
            }
            let c = self.constraint[u];
            w[u] = (remaining / c).min(1.0);
            remaining -= c * w[u];
        }
        // absorb rounding so c·ω ≥ 1 holds exactly
        if self.constraint_value(&w) < 1.0 {
            self.project(&mut w);
        }
        let mut sol = self.finish(w, 1);
        sol.objective = self.expected_rates(&sol.weights.weights).iter().sum();
        Ok(sol)
    }
}

/// Risk-sensitive placement at the configured β.
pub fn solve_placement(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
) -> Result<PlacementSolution, PlacementError> {
    PlacementProblem::new(cfg, chan, sched).solve(PlacementOptions::default())
}

/// Baseline 1: the same problem with the CVaR term dropped (β = 0).
pub fn solve_baseline1(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
) -> Result<PlacementSolution, PlacementError> {
    PlacementProblem::with_risk_weight(cfg, chan, sched, 0.0).solve(PlacementOptions::default())
}

/// Baseline 2: maximize the linear sum of expected eMBB rates.
pub fn solve_baseline2(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
) -> Result<PlacementSolution, PlacementError> {
    PlacementProblem::new(cfg, chan, sched).solve_linear()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_embb_rate, expected_urllc_rate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(u: usize, embb_snr: &[f64], urllc_snr: f64) -> (SystemConfig, ChannelRealization, SchedulingMatrix) {
        let cfg = SystemConfig {
            num_embb_users: u,
            num_rbs: 10 * u,
            rb_bandwidth: vec![360e3; 10 * u],
            embb_tx_power: vec![1.0; u],
            ..SystemConfig::default()
        };
        let chan = ChannelRealization::from_snr(&cfg, embb_snr, &vec![urllc_snr; cfg.num_urllc_users]);
        let rows: Vec<Vec<f64>> = (0..10 * u)
            .map(|b| (0..u).map(|x| if x == b / 10 { 1.0 } else { 0.0 }).collect())
            .collect();
        (cfg, chan, SchedulingMatrix::from_rows(&rows))
    }

    #[test]
    fn no_traffic_means_no_puncturing() {
        let (mut cfg, chan, sched) = setup(3, &[2.0, 20.0, 200.0], 30.0);
        cfg.puncture_prob = 0.0;
        for sol in [
            solve_placement(&cfg, &chan, &sched),
            solve_baseline1(&cfg, &chan, &sched),
            solve_baseline2(&cfg, &chan, &sched),
        ] {
            assert_eq!(sol.unwrap().weights.weights, vec![0.0; 3]);
        }
    }

    #[test]
    fn infeasible_reports_capacity() {
        let (mut cfg, chan, sched) = setup(2, &[10.0, 10.0], 0.01);
        cfg.urllc_outage_budget = 0.001;
        let err = solve_placement(&cfg, &chan, &sched).unwrap_err();
        let PlacementError::Infeasible {
            max_achievable,
            required,
        } = err;
        let full = PunctureWeights::from_weights(vec![1.0; 2]);
        let max = expected_urllc_rate(&cfg, &chan, &sched, &full);
        assert!((max_achievable - max).abs() <= 1e-9 * max);
        assert!(required > max_achievable);
    }

    #[test]
    fn problem_rates_match_model() {
        let (cfg, chan, sched) = setup(3, &[2.0, 20.0, 200.0], 30.0);
        let p = PlacementProblem::new(&cfg, &chan, &sched);
        let w = vec![0.1, 0.5, 0.9];
        let model = expected_embb_rate(&cfg, &chan, &sched, &PunctureWeights::from_weights(w.clone()));
        for (a, b) in p.expected_rates(&w).iter().zip(&model) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        let eu = expected_urllc_rate(&cfg, &chan, &sched, &PunctureWeights::from_weights(w.clone()));
        assert!((p.expected_urllc_rate(&w) - eu).abs() <= 1e-9 * eu);
    }

    #[test]
    fn single_user_matches_dense_grid() {
        let (cfg, chan, sched) = setup(1, &[50.0], 20.0);
        let sol = solve_placement(&cfg, &chan, &sched).unwrap();
        let p = PlacementProblem::new(&cfg, &chan, &sched);
        let n = 1_000_000;
        let best = (0..=n)
            .map(|i| i as f64 / n as f64)
            .filter(|&w| p.constraint_value(&[w]) >= 1.0)
            .map(|w| {
                let r = expected_embb_rate(&cfg, &chan, &sched, &PunctureWeights::from_weights(vec![w]))[0];
                r.ln() - cfg.risk_weight * r / p.risk_scale
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(sol.objective >= best - 1e-6 * best.abs(), "{} < {best}", sol.objective);
        assert!((sol.objective - best).abs() <= 1e-6 * best.abs());
    }

    #[test]
    fn baseline1_constraint_is_active_and_symmetric() {
        let (cfg, chan, sched) = setup(4, &[30.0; 4], 20.0);
        let sol = solve_baseline1(&cfg, &chan, &sched).unwrap();
        let p = PlacementProblem::new(&cfg, &chan, &sched);
        assert!((p.constraint_value(&sol.weights.weights) - 1.0).abs() <= 1e-6);
        let w = &sol.weights.weights;
        for x in w {
            assert!((x - w[0]).abs() <= 1e-6, "{w:?}");
        }
    }

    #[test]
    fn baseline2_fills_low_rate_users_first() {
        let (cfg, chan, sched) = setup(2, &[3.0, 300.0], 4.0);
        let sol = solve_baseline2(&cfg, &chan, &sched).unwrap();
        let w = &sol.weights.weights;
        assert!(w[0] == 1.0 || w[1] == 0.0, "{w:?}");
        assert!(w[0] > 0.0);
        // vertex enumeration of the 2-D LP
        let p = PlacementProblem::new(&cfg, &chan, &sched);
        let c = &p.constraint;
        let mut vertices = vec![[1.0, 1.0]];
        for fixed in [0.0, 1.0] {
            let y = (1.0 - c[0] * fixed) / c[1];
            if (0.0..=1.0).contains(&y) {
                vertices.push([fixed, y]);
            }
            let x = (1.0 - c[1] * fixed) / c[0];
            if (0.0..=1.0).contains(&x) {
                vertices.push([x, fixed]);
            }
        }
        let sum = |v: &[f64]| p.expected_rates(v).iter().sum::<f64>();
        let best = vertices.iter().map(|v| sum(v)).fold(f64::NEG_INFINITY, f64::max);
        assert!((sum(w) - best).abs() <= 1e-9 * best);
    }

    #[test]
    fn projection_lands_on_feasible_set() {
        let (cfg, chan, sched) = setup(5, &[2.0, 4.0, 8.0, 16.0, 32.0], 10.0);
        let p = PlacementProblem::new(&cfg, &chan, &sched);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let mut y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..2.0)).collect();
            p.project(&mut y);
            assert!(p.is_feasible(&y, 0.0), "{y:?}");
        }
    }

    #[test]
    fn surrogate_collapses_at_solution() {
        let (cfg, chan, sched) = setup(3, &[2.0, 20.0, 200.0], 30.0);
        let sol = solve_placement(&cfg, &chan, &sched).unwrap();
        let er: f64 = expected_embb_rate(&cfg, &chan, &sched, &sol.weights).iter().sum();
        assert!((sol.weights.var_level - er).abs() <= 1e-8 * er);
        assert_eq!(sol.weights.excess, 0.0);
    }

    #[test]
    fn risk_weight_punctures_high_rate_users_more() {
        let (cfg, chan, sched) = setup(4, &[2.0, 10.0, 100.0, 1000.0], 20.0);
        let w = solve_placement(&cfg, &chan, &sched).unwrap().weights.weights;
        for pair in w.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{w:?}");
        }
        assert!(w[3] > w[0], "{w:?}");
    }
}
