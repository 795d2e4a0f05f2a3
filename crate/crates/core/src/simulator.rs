//! Monte Carlo slot loop and run metrics.
//!
//! Every slot `s` of a run with seed `seed` draws from its own ChaCha8 stream
//! `(seed, s)`: first the channel, then one uniform per minislot for URLLC
//! arrivals. Draws never depend on the policy or on `p`, `ε`, `β`, so policies and
//! sweep points are compared under common random numbers. Per-user mean SNRs
//! are fixed for the run and come from a separate stream of the same seed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alternating::{self, AlternationOptions, AlternationTrace};
use crate::embb_scheduler::{round_to_binary, solve_fractional};
use crate::model::{
    embb_rate, evaluate_slot, sample_urllc_load, ChannelRealization, ConfigError, ModelError, PunctureWeights,
    SchedulingMatrix, SlotOutcome, SnrProfile, SystemConfig,
};
use crate::risk::{EmpiricalDistribution, TailSummary};
use crate::urllc_placement::{solve_baseline1, solve_baseline2, PlacementError, PlacementSolution};

const PROFILE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyId {
    Proposed,
    Baseline1,
    Baseline2,
}

impl PolicyId {
    pub const ALL: [PolicyId; 3] = [PolicyId::Proposed, PolicyId::Baseline1, PolicyId::Baseline2];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyId::Proposed => "proposed",
            PolicyId::Baseline1 => "baseline1",
            PolicyId::Baseline2 => "baseline2",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(PolicyId::Proposed),
            "baseline1" => Ok(PolicyId::Baseline1),
            "baseline2" => Ok(PolicyId::Baseline2),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    P,
    Epsilon,
    Beta,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Beta => "beta",
        }
    }

    /// `cfg` with this parameter replaced by `value`.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::P => c.puncture_prob = value,
            SweepParam::Epsilon => c.urllc_outage_budget = value,
            SweepParam::Beta => c.risk_weight = value,
        }
        c
    }

    pub fn value_in(self, cfg: &SystemConfig) -> f64 {
        match self {
            SweepParam::P => cfg.puncture_prob,
            SweepParam::Epsilon => cfg.urllc_outage_budget,
            SweepParam::Beta => cfg.risk_weight,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p" => Ok(SweepParam::P),
            "epsilon" => Ok(SweepParam::Epsilon),
            "beta" => Ok(SweepParam::Beta),
            other => Err(format!("unknown sweep parameter `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("sweep point {param}={value}: {source}")]
    SweepPoint {
        param: SweepParam,
        value: f64,
        #[source]
        source: ConfigError,
    },
    #[error("num_slots must be at least 1")]
    NoSlots,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub value: f64,
    pub cum_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub policy: PolicyId,
    pub seed: u64,
    pub slots: usize,
    pub puncture_prob: f64,
    pub urllc_outage_budget: f64,
    pub risk_weight: f64,
    /// Fraction of (user, slot) pairs with realized rate ≥ target_rate.
    pub embb_reliability: f64,
    pub urllc_outage_rate: f64,
    pub mean_sum_rate: f64,
    /// Slots whose placement could not meet the Markov bound (ω forced to 1).
    pub infeasible_slots: usize,
    pub sum_rate_ecdf: Vec<EcdfPoint>,
    pub per_user_mean_rate: Vec<f64>,
    pub per_user_mean_theta: Vec<f64>,
    pub per_user_mean_unpunctured_rate: Vec<f64>,
    /// VaR and both tail CVaRs of the realized slot sum rate at `cvar_level`.
    pub sum_rate_tails: TailSummary,
}

impl RunMetrics {
    /// Smallest slot sum rate whose ECDF value reaches `q`.
    pub fn sum_rate_quantile(&self, q: f64) -> f64 {
        self.sum_rate_ecdf
            .iter()
            .find(|p| p.cum_prob >= q - 1e-12)
            .or(self.sum_rate_ecdf.last())
            .map_or(f64::NAN, |p| p.value)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics are always serializable")
    }

    /// `value,cum_prob`
    pub fn write_ecdf_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "cum_prob"])?;
        for p in &self.sum_rate_ecdf {
            w.write_record([p.value.to_string(), p.cum_prob.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `user,mean_unpunctured_rate,mean_rate,mean_theta`
    pub fn write_per_user_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "mean_unpunctured_rate", "mean_rate", "mean_theta"])?;
        for u in 0..self.per_user_mean_rate.len() {
            w.write_record([
                u.to_string(),
                self.per_user_mean_unpunctured_rate[u].to_string(),
                self.per_user_mean_rate[u].to_string(),
                self.per_user_mean_theta[u].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Channel and load for slot `slot` of a run.
pub fn slot_draw(
    cfg: &SystemConfig,
    profile: &SnrProfile,
    seed: u64,
    slot: u64,
) -> (ChannelRealization, crate::model::UrllcLoad) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot);
    let chan = profile.draw_channel(cfg, &mut rng);
    let load = sample_urllc_load(cfg, &mut rng);
    (chan, load)
}

pub fn snr_profile(cfg: &SystemConfig, seed: u64) -> SnrProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROFILE_STREAM);
    SnrProfile::sample(cfg, &mut rng)
}

/// Proportional-fair binary schedule with no puncturing.
pub fn pf_schedule(cfg: &SystemConfig, chan: &ChannelRealization) -> SchedulingMatrix {
    let frac = solve_fractional(cfg, chan, &PunctureWeights::zeros(cfg.num_embb_users));
    round_to_binary(&frac.matrix, cfg)
}

/// A policy's decision for one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotDecision {
    pub schedule: SchedulingMatrix,
    pub weights: PunctureWeights,
    pub infeasible: bool,
    pub trace: Option<AlternationTrace>,
}

pub fn decide(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    policy: PolicyId,
    opts: &AlternationOptions,
) -> SlotDecision {
    let baseline = |solve: fn(
        &SystemConfig,
        &ChannelRealization,
        &SchedulingMatrix,
    ) -> Result<PlacementSolution, PlacementError>| {
        let schedule = pf_schedule(cfg, chan);
        let (weights, infeasible) = match solve(cfg, chan, &schedule) {
            Ok(sol) => (sol.weights, false),
            Err(_) => (PunctureWeights::from_weights(vec![1.0; cfg.num_embb_users]), true),
        };
        SlotDecision {
            schedule,
            weights,
            infeasible,
            trace: None,
        }
    };
    match policy {
        PolicyId::Proposed => {
            let r = alternating::run_with(cfg, chan, opts);
            SlotDecision {
                schedule: r.schedule,
                weights: r.weights,
                infeasible: r.infeasible,
                trace: Some(r.trace),
            }
        }
        PolicyId::Baseline1 => baseline(solve_baseline1),
        PolicyId::Baseline2 => baseline(solve_baseline2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub outcome: SlotOutcome,
    pub unpunctured_rate: Vec<f64>,
    pub infeasible: bool,
}

pub fn simulate_slot(
    cfg: &SystemConfig,
    profile: &SnrProfile,
    policy: PolicyId,
    seed: u64,
    slot: u64,
    opts: &AlternationOptions,
) -> Result<(SlotRecord, SlotDecision), SimError> {
    let (chan, load) = slot_draw(cfg, profile, seed, slot);
    let decision = decide(cfg, &chan, policy, opts);
    let outcome = evaluate_slot(cfg, &chan, &decision.schedule, &decision.weights, &load)?;
    let unpunctured_rate = embb_rate(
        cfg,
        &chan,
        &decision.schedule,
        &PunctureWeights::zeros(cfg.num_embb_users),
        0.0,
    )?;
    Ok((
        SlotRecord {
            outcome,
            unpunctured_rate,
            infeasible: decision.infeasible,
        },
        decision,
    ))
}

pub fn run_simulation(
    cfg: &SystemConfig,
    policy: PolicyId,
    num_slots: usize,
    seed: u64,
) -> Result<RunMetrics, SimError> {
    run_simulation_with(cfg, policy, num_slots, seed, &AlternationOptions::default())
}

pub fn run_simulation_with(
    cfg: &SystemConfig,
    policy: PolicyId,
    num_slots: usize,
    seed: u64,
    opts: &AlternationOptions,
) -> Result<RunMetrics, SimError> {
    let records = run_slots(cfg, policy, num_slots, seed, opts)?;
    Ok(aggregate(cfg, policy, seed, &records))
}

/// Per-slot records in slot order.
pub fn run_slots(
    cfg: &SystemConfig,
    policy: PolicyId,
    num_slots: usize,
    seed: u64,
    opts: &AlternationOptions,
) -> Result<Vec<SlotRecord>, SimError> {
    cfg.validate()?;
    if num_slots == 0 {
        return Err(SimError::NoSlots);
    }
    let profile = snr_profile(cfg, seed);
    (0..num_slots as u64)
        .into_par_iter()
        .map(|s| simulate_slot(cfg, &profile, policy, seed, s, opts).map(|(r, _)| r))
        .collect()
}

/// Ordered reduction of slot records into run metrics.
pub fn aggregate(cfg: &SystemConfig, policy: PolicyId, seed: u64, records: &[SlotRecord]) -> RunMetrics {
    let n = records.len();
    let u = cfg.num_embb_users;
    let mut reliable = 0usize;
    let mut outages = 0usize;
    let mut infeasible_slots = 0usize;
    let mut rate = vec![0.0; u];
    let mut theta = vec![0.0; u];
    let mut unpunctured = vec![0.0; u];
    let mut sums = Vec::with_capacity(n);
    for r in records {
        let o = &r.outcome;
        reliable += o.embb_rate_per_user.iter().filter(|&&x| x >= cfg.target_rate).count();
        outages += usize::from(o.outage);
        infeasible_slots += usize::from(r.infeasible);
        for i in 0..u {
            rate[i] += o.embb_rate_per_user[i];
            theta[i] += o.punctured_bw[i];
            unpunctured[i] += r.unpunctured_rate[i];
        }
        sums.push(o.embb_sum_rate);
    }
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x / n as f64).collect::<Vec<_>>();
    let mean_sum_rate = sums.iter().sum::<f64>() / n as f64;
    let dist = EmpiricalDistribution::new(sums).expect("at least one finite slot");
    RunMetrics {
        policy,
        seed,
        slots: n,
        puncture_prob: cfg.puncture_prob,
        urllc_outage_budget: cfg.urllc_outage_budget,
        risk_weight: cfg.risk_weight,
        embb_reliability: reliable as f64 / (n * u) as f64,
        urllc_outage_rate: outages as f64 / n as f64,
        mean_sum_rate,
        infeasible_slots,
        sum_rate_ecdf: ecdf(dist.samples()),
        per_user_mean_rate: scale(rate),
        per_user_mean_theta: scale(theta),
        per_user_mean_unpunctured_rate: scale(unpunctured),
        sum_rate_tails: TailSummary::of(&dist, cfg.cvar_level).expect("cvar_level validated"),
    }
}

/// Right-continuous step ECDF over the sorted unique values.
pub fn ecdf(sorted: &[f64]) -> Vec<EcdfPoint> {
    let n = sorted.len() as f64;
    let mut out: Vec<EcdfPoint> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let cum_prob = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.value == v => last.cum_prob = cum_prob,
            _ => out.push(EcdfPoint { value: v, cum_prob }),
        }
    }
    out
}

/// One run per value of `param`, all on the same seed.
pub fn sweep(
    cfg: &SystemConfig,
    policy: PolicyId,
    param: SweepParam,
    values: &[f64],
    num_slots: usize,
    seed: u64,
    opts: &AlternationOptions,
) -> Result<Vec<RunMetrics>, SimError> {
    let points: Vec<SystemConfig> = values
        .iter()
        .map(|&v| {
            let c = param.apply(cfg, v);
            c.validate().map(|_| c).map_err(|source| SimError::SweepPoint {
                param,
                value: v,
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    points
        .iter()
        .map(|c| run_simulation_with(c, policy, num_slots, seed, opts))
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_steps() {
        let e = ecdf(&[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(
            e,
            vec![
                EcdfPoint {
                    value: 1.0,
                    cum_prob: 0.25
                },
                EcdfPoint {
                    value: 2.0,
                    cum_prob: 0.75
                },
                EcdfPoint {
                    value: 5.0,
                    cum_prob: 1.0
                },
            ]
        );
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 4]), 0.0);
    }

    #[test]
    fn no_traffic_no_outage() {
        let cfg = SystemConfig {
            puncture_prob: 0.0,
            ..SystemConfig::default()
        };
        for policy in PolicyId::ALL {
            let m = run_simulation(&cfg, policy, 30, 5).unwrap();
            assert_eq!(m.urllc_outage_rate, 0.0);
            assert_eq!(m.per_user_mean_rate, m.per_user_mean_unpunctured_rate);
        }
    }

    #[test]
    fn single_slot_ecdf() {
        let m = run_simulation(&SystemConfig::default(), PolicyId::Proposed, 1, 3).unwrap();
        assert_eq!(m.sum_rate_ecdf.len(), 1);
        assert_eq!(m.sum_rate_ecdf[0].cum_prob, 1.0);
        assert!((m.sum_rate_ecdf[0].value - m.mean_sum_rate).abs() < 1e-6);
    }

    #[test]
    fn zero_slots_rejected() {
        assert!(matches!(
            run_simulation(&SystemConfig::default(), PolicyId::Baseline1, 0, 1),
            Err(SimError::NoSlots)
        ));
    }

    #[test]
    fn invalid_sweep_point_is_named() {
        let err = sweep(
            &SystemConfig::default(),
            PolicyId::Proposed,
            SweepParam::Epsilon,
            &[0.1, 0.0],
            2,
            1,
            &AlternationOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::SweepPoint { value, .. } if value == 0.0));
    }

    #[test]
    fn sweep_single_point_matches_run() {
        let cfg = SystemConfig::default();
        let s = sweep(
            &cfg,
            PolicyId::Proposed,
            SweepParam::P,
            &[0.0],
            20,
            9,
            &AlternationOptions::default(),
        )
        .unwrap();
        let p0 = SweepParam::P.apply(&cfg, 0.0);
        assert_eq!(s[0], run_simulation(&p0, PolicyId::Proposed, 20, 9).unwrap());
    }

    #[test]
    fn policies_share_draws() {
        let cfg = SystemConfig::default();
        let profile = snr_profile(&cfg, 4);
        let a = slot_draw(&cfg, &profile, 4, 17);
        let cfg2 = SweepParam::P.apply(&cfg, 0.9);
        let b = slot_draw(&cfg2, &profile, 4, 17);
        assert_eq!(a.0, b.0);
        // coupled arrivals: every arrival at p = 0.5 is also one at p = 0.9
        for (x, y) in a.1.per_minislot.iter().zip(&b.1.per_minislot) {
            assert!(x <= y);
        }
    }
}
