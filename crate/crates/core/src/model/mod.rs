//! System model: configuration, channels, the URLLC arrival process and the
//! per-slot rate equations for punctured eMBB and URLLC traffic.

mod config;

pub use config::{ConfigError, SystemConfig, Violation, SLOT_SECONDS};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("URLLC load {load} exceeds l_max {l_max}; clamp before evaluating rates")]
    LoadAboveCapacity { load: f64, l_max: f64 },
}

/// Per-slot channel power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub embb_gain: Vec<f64>,
    pub urllc_gain: Vec<f64>,
}

impl ChannelRealization {
    /// Gains that realize the given linear SNRs exactly (g = snr·N0/P).
    pub fn from_snr(cfg: &SystemConfig, embb_snr: &[f64], urllc_snr: &[f64]) -> Self {
        Self {
            embb_gain: embb_snr
                .iter()
                .zip(&cfg.embb_tx_power)
                .map(|(s, p)| s * cfg.noise_power / p)
                .collect(),
            urllc_gain: urllc_snr
                .iter()
                .zip(&cfg.urllc_tx_power)
                .map(|(s, p)| s * cfg.noise_power / p)
                .collect(),
        }
    }

    /// log2(1 + P_u g_u / N0) for every eMBB user.
    pub fn embb_spectral_efficiency(&self, cfg: &SystemConfig) -> Vec<f64> {
        self.embb_gain
            .iter()
            .zip(&cfg.embb_tx_power)
            .map(|(g, p)| (1.0 + p * g / cfg.noise_power).log2())
            .collect()
    }

    /// (1/C) Σ_c log2(1 + P_c g_c / N0): bits/s delivered to URLLC per punctured Hz.
    pub fn urllc_spectral_efficiency(&self, cfg: &SystemConfig) -> f64 {
        let c = self.urllc_gain.len().max(1) as f64;
        self.urllc_gain
            .iter()
            .zip(&cfg.urllc_tx_power)
            .map(|(g, p)| (1.0 + p * g / cfg.noise_power).log2())
            .sum::<f64>()
            / c
    }
}

/// Large-scale mean SNRs (linear) per user, fixed for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrProfile {
    pub embb_mean_snr: Vec<f64>,
    pub urllc_mean_snr: Vec<f64>,
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SnrProfile {
    /// Mean SNRs drawn uniformly in dB over the configured ranges.
    pub fn sample<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let mut draw = |range: [f64; 2], n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| db_to_linear(range[0] + (range[1] - range[0]) * rng.random::<f64>()))
                .collect()
        };
        let embb_mean_snr = draw(cfg.embb_snr_db, cfg.num_embb_users);
        let urllc_mean_snr = draw(cfg.urllc_snr_db, cfg.num_urllc_users);
        Self {
            embb_mean_snr,
            urllc_mean_snr,
        }
    }

    /// Every user at the same mean SNR.
    pub fn uniform(cfg: &SystemConfig, embb_snr_db: f64, urllc_snr_db: f64) -> Self {
        Self {
            embb_mean_snr: vec![db_to_linear(embb_snr_db); cfg.num_embb_users],
            urllc_mean_snr: vec![db_to_linear(urllc_snr_db); cfg.num_urllc_users],
        }
    }

    /// Rayleigh block fading: instantaneous SNR = mean · Exp(1).
    pub fn draw_channel<R: Rng + ?Sized>(&self, cfg: &SystemConfig, rng: &mut R) -> ChannelRealization {
        let mut fade = |mean: &[f64]| -> Vec<f64> {
            mean.iter()
                .map(|m| {
                    let e: f64 = Exp1.sample(rng);
                    m * e
                })
                .collect()
        };
        let embb = fade(&self.embb_mean_snr);
        let urllc = fade(&self.urllc_mean_snr);
        ChannelRealization::from_snr(cfg, &embb, &urllc)
    }
}

/// URLLC arrivals in one slot, in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrllcLoad {
    pub per_minislot: Vec<f64>,
    /// min(Σ_m L_m, l_max).
    pub total: f64,
}

impl UrllcLoad {
    pub fn from_minislots(per_minislot: Vec<f64>, l_max: f64) -> Self {
        let total = per_minislot.iter().sum::<f64>().min(l_max);
        Self { per_minislot, total }
    }
}

/// One Bernoulli(p) arrival per minislot, each carrying `demand_quantum` bits.
///
/// Draws exactly one uniform per minislot, so two configs differing only in `p`
/// see coupled arrivals under the same stream.
pub fn sample_urllc_load<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> UrllcLoad {
    let per_minislot = (0..cfg.num_minislots)
        .map(|_| {
            if rng.random::<f64>() < cfg.puncture_prob {
                cfg.demand_quantum
            } else {
                0.0
            }
        })
        .collect();
    UrllcLoad::from_minislots(per_minislot, cfg.l_max)
}

/// B×U assignment of RBs to eMBB users, row-major by RB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingMatrix {
    num_rbs: usize,
    num_users: usize,
    entries: Vec<f64>,
}

impl SchedulingMatrix {
    pub fn zeros(num_rbs: usize, num_users: usize) -> Self {
        Self {
            num_rbs,
            num_users,
            entries: vec![0.0; num_rbs * num_users],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let num_rbs = rows.len();
        let num_users = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == num_users), "ragged matrix");
        Self {
            num_rbs,
            num_users,
            entries: rows.concat(),
        }
    }

    pub fn num_rbs(&self) -> usize {
        self.num_rbs
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn get(&self, rb: usize, user: usize) -> f64 {
        self.entries[rb * self.num_users + user]
    }

    pub fn set(&mut self, rb: usize, user: usize, value: f64) {
        self.entries[rb * self.num_users + user] = value;
    }

    pub fn row(&self, rb: usize) -> &[f64] {
        &self.entries[rb * self.num_users..(rb + 1) * self.num_users]
    }

    pub fn row_mut(&mut self, rb: usize) -> &mut [f64] {
        &mut self.entries[rb * self.num_users..(rb + 1) * self.num_users]
    }

    /// Σ_u I_{b,u} for RB `rb`.
    pub fn rb_load(&self, rb: usize) -> f64 {
        self.row(rb).iter().sum()
    }

    /// φ_u = Σ_b f_b I_{b,u}.
    pub fn bandwidth(&self, rb_bandwidth: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; self.num_users];
        for (b, f) in rb_bandwidth.iter().enumerate().take(self.num_rbs) {
            for (p, i) in phi.iter_mut().zip(self.row(b)) {
                *p += f * i;
            }
        }
        phi
    }

    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Box bounds and per-RB cap hold within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.entries.iter().all(|&x| (-tol..=1.0 + tol).contains(&x))
            && (0..self.num_rbs).all(|b| self.rb_load(b) <= 1.0 + tol)
    }
}

/// Puncturing weights ω ∈ [0,1]^U with the CVaR auxiliaries (γ, z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureWeights {
    pub weights: Vec<f64>,
    /// γ, bits/s.
    pub var_level: f64,
    /// z ≥ 0, bits/s.
    pub excess: f64,
}

impl PunctureWeights {
    pub fn zeros(num_users: usize) -> Self {
        Self::from_weights(vec![0.0; num_users])
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self {
            weights,
            var_level: 0.0,
            excess: 0.0,
        }
    }
}

/// Realized per-slot quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub realized_load: f64,
    pub embb_rate_per_user: Vec<f64>,
    pub embb_sum_rate: f64,
    pub urllc_rate: f64,
    pub punctured_bw: Vec<f64>,
    pub outage: bool,
}

fn check_load(cfg: &SystemConfig, load: f64) -> Result<(), ModelError> {
    if load > cfg.l_max * (1.0 + 1e-12) {
        Err(ModelError::LoadAboveCapacity { load, l_max: cfg.l_max })
    } else {
        Ok(())
    }
}

/// eMBB rates R_u = φ_u (1 − ω_u L/L_max) log2(1 + P_u g_u / N0).
pub fn embb_rate(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
    load: f64,
) -> Result<Vec<f64>, ModelError> {
    check_load(cfg, load)?;
    Ok(rates_at_load(cfg, chan, sched, omega, load))
}

fn rates_at_load(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
    load: f64,
) -> Vec<f64> {
    let phi = sched.bandwidth(&cfg.rb_bandwidth);
    let frac = load / cfg.l_max;
    phi.iter()
        .zip(&omega.weights)
        .zip(chan.embb_spectral_efficiency(cfg))
        .map(|((p, w), se)| p * (1.0 - w * frac) * se)
        .collect()
}

/// E[R_u]: the rate equation at L = E[L] = M·p·quantum (it is affine in L).
pub fn expected_embb_rate(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
) -> Vec<f64> {
    rates_at_load(cfg, chan, sched, omega, cfg.expected_load())
}

/// θ_u = φ_u ω_u L/L_max, Hz.
pub fn punctured_bandwidth(phi: &[f64], omega: &[f64], load: f64, l_max: f64) -> Vec<f64> {
    let frac = load / l_max;
    phi.iter().zip(omega).map(|(p, w)| p * w * frac).collect()
}

/// R_urllc = Σ_c Σ_u (θ_u/C) log2(1 + P_c g_c / N0), bits/s.
pub fn urllc_rate(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
    load: f64,
) -> f64 {
    let phi = sched.bandwidth(&cfg.rb_bandwidth);
    let theta: f64 = punctured_bandwidth(&phi, &omega.weights, load, cfg.l_max).iter().sum();
    theta * chan.urllc_spectral_efficiency(cfg)
}

/// E[R_urllc], using E[θ_u] = φ_u ω_u E[L]/L_max.
pub fn expected_urllc_rate(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
) -> f64 {
    urllc_rate(cfg, chan, sched, omega, cfg.expected_load())
}

/// URLLC outage for one slot: traffic arrived and the delivered bits over the
/// slot do not exceed it. A slot with no arrivals is never an outage.
pub fn outage_indicator(urllc_rate: f64, load_bits: f64) -> bool {
    load_bits > 0.0 && urllc_rate * SLOT_SECONDS <= load_bits
}

/// Realized rates and outage for one slot under a fixed schedule and placement.
pub fn evaluate_slot(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sched: &SchedulingMatrix,
    omega: &PunctureWeights,
    load: &UrllcLoad,
) -> Result<SlotOutcome, ModelError> {
    let l = load.total;
    let rates = embb_rate(cfg, chan, sched, omega, l)?;
    let phi = sched.bandwidth(&cfg.rb_bandwidth);
    let punctured_bw = punctured_bandwidth(&phi, &omega.weights, l, cfg.l_max);
    let r_urllc = punctured_bw.iter().sum::<f64>() * chan.urllc_spectral_efficiency(cfg);
    Ok(SlotOutcome {
        realized_load: l,
        embb_sum_rate: rates.iter().sum(),
        embb_rate_per_user: rates,
        urllc_rate: r_urllc,
        punctured_bw,
        outage: outage_indicator(r_urllc, l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_user_cfg() -> SystemConfig {
        SystemConfig {
            num_embb_users: 1,
            num_rbs: 1,
            num_urllc_users: 1,
            rb_bandwidth: vec![1e6],
            embb_tx_power: vec![1.0],
            urllc_tx_power: vec![1.0],
            noise_power: 1.0,
            ..SystemConfig::default()
        }
    }

    fn full(u: usize) -> SchedulingMatrix {
        SchedulingMatrix::from_rows(&[vec![1.0; u]])
    }

    #[test]
    fn load_zero_probability() {
        let cfg = SystemConfig {
            puncture_prob: 0.0,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = sample_urllc_load(&cfg, &mut rng);
        assert!(l.per_minislot.iter().all(|&x| x == 0.0));
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn load_certain_arrivals() {
        let cfg = SystemConfig {
            puncture_prob: 1.0,
            demand_quantum: 1.0,
            num_minislots: 7,
            l_max: 10.0,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_urllc_load(&cfg, &mut rng).total, 7.0);
    }

    #[test]
    fn load_is_clamped_to_capacity() {
        let l = UrllcLoad::from_minislots(vec![3.0, 3.0, 3.0], 5.0);
        assert_eq!(l.total, 5.0);
    }

    #[test]
    fn unpunctured_rate() {
        let cfg = one_user_cfg();
        let chan = ChannelRealization::from_snr(&cfg, &[3.0], &[3.0]);
        let r = embb_rate(&cfg, &chan, &full(1), &PunctureWeights::zeros(1), cfg.l_max).unwrap();
        assert!((r[0] - 2e6).abs() < 1e-6);
    }

    #[test]
    fn fully_punctured_rate() {
        let cfg = one_user_cfg();
        let chan = ChannelRealization::from_snr(&cfg, &[3.0], &[3.0]);
        let w = PunctureWeights::from_weights(vec![1.0]);
        let r = embb_rate(&cfg, &chan, &full(1), &w, cfg.l_max).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn rejects_load_above_capacity() {
        let cfg = one_user_cfg();
        let chan = ChannelRealization::from_snr(&cfg, &[3.0], &[3.0]);
        let err = embb_rate(&cfg, &chan, &full(1), &PunctureWeights::zeros(1), cfg.l_max * 2.0);
        assert!(matches!(err, Err(ModelError::LoadAboveCapacity { .. })));
    }

    #[test]
    fn expected_rate_without_arrivals_is_unpunctured() {
        let cfg = SystemConfig {
            puncture_prob: 0.0,
            ..one_user_cfg()
        };
        let chan = ChannelRealization::from_snr(&cfg, &[3.0], &[3.0]);
        let w = PunctureWeights::from_weights(vec![0.7]);
        let r = expected_embb_rate(&cfg, &chan, &full(1), &w);
        assert!((r[0] - 2e6).abs() < 1e-6);
    }

    #[test]
    fn expected_rate_zero_when_full_load_expected() {
        let cfg = SystemConfig {
            puncture_prob: 1.0,
            ..one_user_cfg()
        };
        assert_eq!(cfg.expected_load(), cfg.l_max);
        let chan = ChannelRealization::from_snr(&cfg, &[3.0], &[3.0]);
        let w = PunctureWeights::from_weights(vec![1.0]);
        assert_eq!(expected_embb_rate(&cfg, &chan, &full(1), &w)[0], 0.0);
    }

    #[test]
    fn urllc_rate_zero_without_puncturing() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chan = SnrProfile::sample(&cfg, &mut rng).draw_channel(&cfg, &mut rng);
        let sched = SchedulingMatrix::from_rows(&vec![vec![0.1; 10]; 50]);
        let r = urllc_rate(&cfg, &chan, &sched, &PunctureWeights::zeros(10), cfg.l_max);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn urllc_rate_single_user() {
        let cfg = one_user_cfg();
        let chan = ChannelRealization::from_snr(&cfg, &[1.0], &[3.0]);
        let w = PunctureWeights::from_weights(vec![0.25]);
        let load = cfg.l_max / 2.0;
        let theta = 1e6 * 0.25 * 0.5;
        let r = urllc_rate(&cfg, &chan, &full(1), &w, load);
        assert!((r - theta * 2.0).abs() < 1e-6);
    }

    #[test]
    fn outage_cases() {
        assert!(outage_indicator(0.0, 100.0));
        assert!(!outage_indicator(1e6, 0.0));
        assert!(!outage_indicator(0.0, 0.0));
        assert!(outage_indicator(1e5, 100.0));
        assert!(!outage_indicator(2e5, 100.0));
    }

    #[test]
    fn evaluate_slot_consistency() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chan = SnrProfile::sample(&cfg, &mut rng).draw_channel(&cfg, &mut rng);
        let sched = SchedulingMatrix::from_rows(&vec![vec![0.1; 10]; 50]);
        let w = PunctureWeights::from_weights((0..10).map(|u| u as f64 / 10.0).collect());
        let load = UrllcLoad::from_minislots(vec![cfg.demand_quantum; 3], cfg.l_max);
        let out = evaluate_slot(&cfg, &chan, &sched, &w, &load).unwrap();
        let sum: f64 = out.embb_rate_per_user.iter().sum();
        assert!((sum - out.embb_sum_rate).abs() <= 1e-9 * sum);
        let phi = sched.bandwidth(&cfg.rb_bandwidth);
        for (t, p) in out.punctured_bw.iter().zip(&phi) {
            assert!(*t >= 0.0 && t <= p);
        }
    }
}
