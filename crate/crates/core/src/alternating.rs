//! Alternating optimization of the eMBB schedule and the URLLC placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embb_scheduler::{round_to_binary, solve_fractional};
use crate::model::{ChannelRealization, PunctureWeights, SchedulingMatrix, SystemConfig};
use crate::urllc_placement::{PlacementError, PlacementOptions, PlacementProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    #[default]
    Zero,
    Full,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Round the schedule every iteration; placement sees the binary matrix.
    #[default]
    PerIteration,
    /// Alternate on the fractional schedule, round once at the end.
    PostHoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternationOptions {
    pub max_iters: usize,
    /// Convergence threshold on max_u |Δω_u|.
    pub weight_tol: f64,
    pub init: WeightInit,
    pub rounding: Rounding,
    pub placement: PlacementOptions,
}

impl Default for AlternationOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            weight_tol: 1e-6,
            init: WeightInit::Zero,
            rounding: Rounding::PerIteration,
            placement: PlacementOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Surrogate objective on the fractional schedule.
    pub objective: f64,
    /// Surrogate objective on the rounded schedule.
    pub rounded_objective: f64,
    pub weights: Vec<f64>,
    /// φ_u of the rounded schedule, Hz.
    pub bandwidth: Vec<f64>,
    pub infeasible: Option<PlacementError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationResult {
    pub schedule: SchedulingMatrix,
    pub weights: PunctureWeights,
    pub trace: AlternationTrace,
    /// The final placement could not meet the Markov bound; ω was clamped to 1.
    pub infeasible: bool,
}

pub fn run(cfg: &SystemConfig, chan: &ChannelRealization) -> AlternationResult {
    run_with(cfg, chan, &AlternationOptions::default())
}

fn initial_weights(n: usize, init: WeightInit) -> Vec<f64> {
    match init {
        WeightInit::Zero => vec![0.0; n],
        WeightInit::Full => vec![1.0; n],
        WeightInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random::<f64>()).collect()
        }
    }
}

/// Placement on `sched`, falling back to full puncturing when infeasible.
fn place(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    opts: PlacementOptions,
) -> (PunctureWeights, Option<PlacementError>) {
    match PlacementProblem::new(cfg, chan, sched).solve(opts) {
        Ok(sol) => (sol.weights, None),
        Err(e) => {
            let mut w = PunctureWeights::from_weights(vec![1.0; cfg.num_embb_users]);
            let p = PlacementProblem::new(cfg, chan, sched);
            w.var_level = p.expected_rates(&w.weights).iter().sum();
            (w, Some(e))
        }
    }
}

pub fn run_with(cfg: &SystemConfig, chan: &ChannelRealization, opts: &AlternationOptions) -> AlternationResult {
    let mut weights = PunctureWeights::from_weights(initial_weights(cfg.num_embb_users, opts.init));
    let mut prev_binary: Option<SchedulingMatrix> = None;
    let mut iterations = Vec::new();
    let mut reason = StopReason::MaxIterations;
    let mut last_frac = None;
    let mut last_error = None;

    for _ in 0..opts.max_iters {
        let frac = solve_fractional(cfg, chan, &weights).matrix;
        let binary = round_to_binary(&frac, cfg);
        let target = match opts.rounding {
            Rounding::PerIteration => &binary,
            Rounding::PostHoc => &frac,
        };
        let (next, err) = place(cfg, chan, target, opts.placement);

        let objective = PlacementProblem::new(cfg, chan, &frac).objective(&next.weights);
        let rounded_objective = PlacementProblem::new(cfg, chan, &binary).objective(&next.weights);
        let delta = weights
            .weights
            .iter()
            .zip(&next.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let same_schedule = match opts.rounding {
            Rounding::PerIteration => prev_binary.as_ref() == Some(&binary),
            Rounding::PostHoc => last_frac.as_ref() == Some(&frac),
        };
        iterations.push(IterationRecord {
            objective,
            rounded_objective,
            weights: next.weights.clone(),
            bandwidth: binary.bandwidth(&cfg.rb_bandwidth),
            infeasible: err.clone(),
        });
        weights = next;
        last_error = err;
        prev_binary = Some(binary);
        last_frac = Some(frac);
        if delta < opts.weight_tol && same_schedule {
            reason = StopReason::Tolerance;
            break;
        }
    }

    let mut schedule = prev_binary.expect("at least one iteration");
    if opts.rounding == Rounding::PostHoc {
        let frac = last_frac.expect("at least one iteration");
        schedule = round_to_binary(&frac, cfg);
        let (w, err) = place(cfg, chan, &schedule, opts.placement);
        weights = w;
        last_error = err;
    }

    AlternationResult {
        schedule,
        weights,
        trace: AlternationTrace {
            converged: reason == StopReason::Tolerance,
            iterations,
            reason,
        },
        infeasible: last_error.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SnrProfile;

    fn default_slot(seed: u64) -> (SystemConfig, ChannelRealization) {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chan = SnrProfile::sample(&cfg, &mut rng).draw_channel(&cfg, &mut rng);
        (cfg, chan)
    }

    #[test]
    fn no_traffic_converges_fast_with_equal_share() {
        let (mut cfg, chan) = default_slot(1);
        cfg.puncture_prob = 0.0;
        let r = run(&cfg, &chan);
        assert!(r.trace.converged);
        assert!(r.trace.iterations.len() <= 2);
        assert!(r.weights.weights.iter().all(|&w| w == 0.0));
        let phi = r.schedule.bandwidth(&cfg.rb_bandwidth);
        assert!(phi.iter().all(|&p| (p - phi[0]).abs() < 1e-6));
    }

    #[test]
    fn single_user_converges_fast() {
        let cfg = SystemConfig {
            num_embb_users: 1,
            embb_tx_power: vec![1.0],
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chan = SnrProfile::sample(&cfg, &mut rng).draw_channel(&cfg, &mut rng);
        let r = run(&cfg, &chan);
        assert!(r.trace.converged);
        assert!(r.trace.iterations.len() <= 2);
    }

    #[test]
    fn objective_is_monotone_along_trace() {
        for seed in 0..20 {
            let (cfg, chan) = default_slot(seed);
            for init in [WeightInit::Zero, WeightInit::Full, WeightInit::Random(seed)] {
                let r = run_with(
                    &cfg,
                    &chan,
                    &AlternationOptions {
                        init,
                        ..Default::default()
                    },
                );
                let objs: Vec<f64> = r.trace.iterations.iter().map(|i| i.objective).collect();
                let last = *objs.last().unwrap();
                for o in &objs {
                    assert!(last >= o - 1e-8, "seed {seed}: {objs:?}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let (cfg, chan) = default_slot(3);
        let a = serde_json::to_string(&run(&cfg, &chan)).unwrap();
        let b = serde_json::to_string(&run(&cfg, &chan)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn post_hoc_rounding_returns_binary_schedule() {
        let (cfg, chan) = default_slot(4);
        let r = run_with(
            &cfg,
            &chan,
            &AlternationOptions {
                rounding: Rounding::PostHoc,
                ..Default::default()
            },
        );
        assert!(r.schedule.is_binary());
        assert!(r.trace.converged);
    }
}
