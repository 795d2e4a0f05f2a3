//! Proportional-fair RB allocation for eMBB users.
//!
//! For fixed puncturing weights the expected rate of user `u` is `φ_u · c_u` with
//! `c_u = (1 − ω_u E[L]/L_max) log2(1 + SNR_u)`. The relaxed problem maximizes
//! `Σ_u log(φ_u c_u)` over fractional assignments with `Σ_u I_{b,u} ≤ 1`; it is
//! solved by projected gradient ascent and then rounded to a binary assignment.

use serde::{Deserialize, Serialize};

use crate::model::{ChannelRealization, PunctureWeights, SchedulingMatrix, SystemConfig};

/// Stopping rule for the fractional solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerOptions {
    pub max_iters: usize,
    /// Frank–Wolfe duality gap per active user below which the solve is
    /// declared converged. The gap bounds the distance to the optimal objective.
    pub gap_tol: f64,
}

impl Default for SchedulerOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            gap_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSchedule {
    pub matrix: SchedulingMatrix,
    /// Users dropped from the objective because their rate coefficient is zero;
    /// they receive no bandwidth.
    pub excluded: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

/// `c_u` such that `E[R_u] = φ_u c_u`.
pub fn rate_coefficients(cfg: &SystemConfig, chan: &ChannelRealization, omega: &PunctureWeights) -> Vec<f64> {
    let k = cfg.expected_load_fraction();
    chan.embb_spectral_efficiency(cfg)
        .iter()
        .zip(&omega.weights)
        .map(|(se, w)| (1.0 - w * k).max(0.0) * se)
        .collect()
}

/// `Σ_u log(φ_u c_u)` over users with `c_u > 0`.
pub fn sum_log_objective(sched: &SchedulingMatrix, rb_bandwidth: &[f64], coeffs: &[f64]) -> f64 {
    let phi = sched.bandwidth(rb_bandwidth);
    phi.iter()
        .zip(coeffs)
        .filter(|(_, &c)| c > 0.0)
        .map(|(p, c)| (p * c).ln())
        .sum()
}

/// Euclidean projection of `y` onto `{x ≥ 0, Σx ≤ 1}`.
pub(crate) fn project_capped_simplex(y: &mut [f64]) {
    let pos_sum: f64 = y.iter().map(|v| v.max(0.0)).sum();
    if pos_sum <= 1.0 {
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        return;
    }
    // Projection onto the probability simplex (sort-based threshold).
    let mut s: Vec<f64> = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    y.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
}

fn uniform_over(active: &[bool], num_rbs: usize) -> SchedulingMatrix {
    let n = active.iter().filter(|&&a| a).count();
    let mut m = SchedulingMatrix::zeros(num_rbs, active.len());
    if n == 0 {
        return m;
    }
    for b in 0..num_rbs {
        for (u, &a) in active.iter().enumerate() {
            if a {
                m.set(b, u, 1.0 / n as f64);
            }
        }
    }
    m
}

/// Relaxed proportional-fair allocation, started from the uniform split.
pub fn solve_fractional(cfg: &SystemConfig, chan: &ChannelRealization, omega: &PunctureWeights) -> FractionalSchedule {
    let coeffs = rate_coefficients(cfg, chan, omega);
    let active: Vec<bool> = coeffs.iter().map(|&c| c > 0.0).collect();
    let init = uniform_over(&active, cfg.num_rbs);
    solve_with(cfg, &coeffs, init, SchedulerOptions::default())
}

/// Relaxed proportional-fair allocation from an arbitrary feasible start.
pub fn solve_fractional_from(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    omega: &PunctureWeights,
    init: &SchedulingMatrix,
    opts: SchedulerOptions,
) -> FractionalSchedule {
    let coeffs = rate_coefficients(cfg, chan, omega);
    solve_with(cfg, &coeffs, init.clone(), opts)
}

fn solve_with(
    cfg: &SystemConfig,
    coeffs: &[f64],
    init: SchedulingMatrix,
    opts: SchedulerOptions,
) -> FractionalSchedule {
    let (num_rbs, num_users) = (cfg.num_rbs, cfg.num_embb_users);
    let f = &cfg.rb_bandwidth;
    let active: Vec<bool> = coeffs.iter().map(|&c| c > 0.0).collect();
    let excluded: Vec<usize> = (0..num_users).filter(|&u| !active[u]).collect();

    let mut x = init;
    for b in 0..num_rbs {
        let row = x.row_mut(b);
        for (u, v) in row.iter_mut().enumerate() {
            if !active[u] {
                *v = 0.0;
            }
        }
        project_capped_simplex(row);
    }
    // Every active user needs positive bandwidth for the log to be finite.
    let phi0 = x.bandwidth(f);
    if (0..num_users).any(|u| active[u] && phi0[u] <= 0.0) {
        let uni = uniform_over(&active, num_rbs);
        for b in 0..num_rbs {
            for u in 0..num_users {
                x.set(b, u, 0.5 * x.get(b, u) + 0.5 * uni.get(b, u));
            }
        }
    }
    if excluded.len() == num_users {
        return FractionalSchedule {
            objective: 0.0,
            matrix: x,
            excluded,
            iterations: 0,
        };
    }

    let objective = |m: &SchedulingMatrix| sum_log_objective(m, f, coeffs);
    let mut obj = objective(&x);
    let num_active = (num_users - excluded.len()) as f64;
    let mut iterations = 0;
    let mut grad = SchedulingMatrix::zeros(num_rbs, num_users);
    let mut last_step: Option<f64> = None;

    while iterations < opts.max_iters {
        iterations += 1;
        let phi = x.bandwidth(f);
        let mut gmax: f64 = 0.0;
        for (b, fb) in f.iter().enumerate().take(num_rbs) {
            for u in 0..num_users {
                let g = if active[u] { fb / phi[u] } else { 0.0 };
                grad.set(b, u, g);
                gmax = gmax.max(g);
            }
        }
        // max over feasible y of <grad, y − x>: each row puts its unit mass on
        // its largest gradient entry.
        let gap: f64 = (0..num_rbs)
            .map(|b| {
                let row_max = (0..num_users).map(|u| grad.get(b, u)).fold(0.0, f64::max);
                row_max - (0..num_users).map(|u| grad.get(b, u) * x.get(b, u)).sum::<f64>()
            })
            .sum();
        if gap <= opts.gap_tol * num_active {
            iterations -= 1;
            break;
        }
        // Warm-start the backtracking from twice the last accepted step.
        let mut step = last_step.map_or(1.0 / gmax, |s| 2.0 * s);
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = x.clone();
            let mut ascent = 0.0;
            for b in 0..num_rbs {
                let row = trial.row_mut(b);
                for (u, v) in row.iter_mut().enumerate() {
                    *v += step * grad.get(b, u);
                }
                project_capped_simplex(row);
                for (u, v) in row.iter_mut().enumerate() {
                    if !active[u] {
                        *v = 0.0;
                    }
                    ascent += grad.get(b, u) * (*v - x.get(b, u));
                }
            }
            let t_obj = objective(&trial);
            if t_obj.is_finite() && t_obj >= obj + 1e-4 * ascent {
                last_step = Some(step);
                accepted = Some((trial, t_obj, ascent));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, t_obj, ascent)) = accepted else {
            break;
        };
        let moved = ascent > 0.0;
        x = trial;
        obj = t_obj;
        if !moved {
            break;
        }
    }

    FractionalSchedule {
        matrix: x,
        excluded,
        objective: obj,
        iterations,
    }
}

/// Greedy largest-remainder rounding.
///
/// RBs are visited in descending bandwidth (stable by index); each goes to the
/// user with the largest remaining fractional claim `φ_u − assigned_u`, ties to
/// the lower index. RBs with an all-zero row stay unassigned. Binary input is
/// returned unchanged.
pub fn round_to_binary(frac: &SchedulingMatrix, cfg: &SystemConfig) -> SchedulingMatrix {
    if frac.is_binary() {
        return frac.clone();
    }
    let f = &cfg.rb_bandwidth;
    let mut claim = frac.bandwidth(f);
    let candidates: Vec<usize> = (0..frac.num_users()).filter(|&u| claim[u] > 0.0).collect();
    let mut order: Vec<usize> = (0..frac.num_rbs()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]));

    let mut out = SchedulingMatrix::zeros(frac.num_rbs(), frac.num_users());
    for b in order {
        if frac.row(b).iter().all(|&v| v <= 0.0) {
            continue;
        }
        let mut best: Option<usize> = None;
        for &u in &candidates {
            if best.is_none_or(|w| claim[u] > claim[w]) {
                best = Some(u);
            }
        }
        if let Some(u) = best {
            out.set(b, u, 1.0);
            claim[u] -= f[b];
        }
    }
    out
}
