use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration of one eMBB slot in seconds. URLLC demand is counted in bits per slot.
pub const SLOT_SECONDS: f64 = 1e-3;

/// Static system parameters for one cell.
///
/// Rates are in bits/s, bandwidths in Hz, powers in W. URLLC load is in bits per
/// slot: every arrival in a minislot carries `demand_quantum` bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_embb_users: usize,
    pub num_rbs: usize,
    pub num_minislots: usize,
    pub num_urllc_users: usize,
    /// Hz per RB, length `num_rbs`.
    pub rb_bandwidth: Vec<f64>,
    /// Maximum servable URLLC load per slot, bits.
    pub l_max: f64,
    pub embb_tx_power: Vec<f64>,
    pub urllc_tx_power: Vec<f64>,
    pub noise_power: f64,
    /// Probability of a URLLC arrival in a minislot.
    pub puncture_prob: f64,
    pub cvar_level: f64,
    pub risk_weight: f64,
    pub urllc_outage_budget: f64,
    /// Per-user rate threshold for the eMBB reliability metric, bits/s.
    pub target_rate: f64,
    /// Bits carried by one URLLC arrival.
    pub demand_quantum: f64,
    /// Range (dB) of per-user mean eMBB SNR, drawn once per run.
    pub embb_snr_db: [f64; 2],
    /// Range (dB) of per-user mean URLLC SNR, drawn once per run.
    pub urllc_snr_db: [f64; 2],
}

/// A single failed bound check on a named config field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Default for SystemConfig {
    fn default() -> Self {
        let num_embb_users = 10;
        let num_rbs = 50;
        let num_minislots = 7;
        let num_urllc_users = 4;
        let demand_quantum = 160.0;
        Self {
            num_embb_users,
            num_rbs,
            num_minislots,
            num_urllc_users,
            rb_bandwidth: vec![360e3; num_rbs],
            l_max: num_minislots as f64 * demand_quantum,
            embb_tx_power: vec![1.0; num_embb_users],
            urllc_tx_power: vec![1.0; num_urllc_users],
            noise_power: 1e-13,
            puncture_prob: 0.5,
            cvar_level: 0.9,
            risk_weight: 1.0,
            urllc_outage_budget: 0.1,
            target_rate: 2e6,
            demand_quantum,
            embb_snr_db: [3.0, 30.0],
            urllc_snr_db: [3.0, 30.0],
        }
    }
}

impl SystemConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SystemConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Every bound violation, in field order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: &str| {
            if !ok {
                out.push(Violation {
                    field,
                    message: message.to_string(),
                });
            }
        };
        let positive = |x: f64| x.is_finite() && x > 0.0;

        check(self.num_embb_users >= 1, "num_embb_users", "must be at least 1");
        check(self.num_rbs >= 1, "num_rbs", "must be at least 1");
        check(self.num_minislots >= 1, "num_minislots", "must be at least 1");
        check(self.num_urllc_users >= 1, "num_urllc_users", "must be at least 1");
        check(
            self.rb_bandwidth.len() == self.num_rbs,
            "rb_bandwidth",
            "length must equal num_rbs",
        );
        check(
            self.rb_bandwidth.iter().all(|&f| positive(f)),
            "rb_bandwidth",
            "every entry must be finite and > 0",
        );
        check(positive(self.l_max), "l_max", "must be finite and > 0");
        check(
            self.embb_tx_power.len() == self.num_embb_users,
            "embb_tx_power",
            "length must equal num_embb_users",
        );
        check(
            self.embb_tx_power.iter().all(|&p| positive(p)),
            "embb_tx_power",
            "every entry must be finite and > 0",
        );
        check(
            self.urllc_tx_power.len() == self.num_urllc_users,
            "urllc_tx_power",
            "length must equal num_urllc_users",
        );
        check(
            self.urllc_tx_power.iter().all(|&p| positive(p)),
            "urllc_tx_power",
            "every entry must be finite and > 0",
        );
        check(positive(self.noise_power), "noise_power", "must be finite and > 0");
        check(
            (0.0..=1.0).contains(&self.puncture_prob),
            "puncture_prob",
            "must lie in [0, 1]",
        );
        check(
            self.cvar_level > 0.0 && self.cvar_level < 1.0,
            "cvar_level",
            "must lie in (0, 1)",
        );
        check(
            (0.0..=1.0).contains(&self.risk_weight),
            "risk_weight",
            "must lie in [0, 1]",
        );
        check(
            self.urllc_outage_budget > 0.0 && self.urllc_outage_budget < 1.0,
            "urllc_outage_budget",
            "must lie in (0, 1)",
        );
        check(
            self.target_rate.is_finite() && self.target_rate >= 0.0,
            "target_rate",
            "must be finite and >= 0",
        );
        check(
            positive(self.demand_quantum),
            "demand_quantum",
            "must be finite and > 0",
        );
        check(
            positive(self.l_max) && self.expected_load() <= self.l_max * (1.0 + 1e-12),
            "l_max",
            "must be at least the expected load num_minislots * puncture_prob * demand_quantum",
        );
        for (field, r) in [("embb_snr_db", self.embb_snr_db), ("urllc_snr_db", self.urllc_snr_db)] {
            check(
                r[0].is_finite() && r[1].is_finite() && r[0] <= r[1],
                field,
                "must be a finite [low, high] range with low <= high",
            );
        }
        out
    }

    /// E[L] = M·p·quantum, bits per slot.
    pub fn expected_load(&self) -> f64 {
        self.num_minislots as f64 * self.puncture_prob * self.demand_quantum
    }

    /// Puncture fraction per unit weight at the expected load, E[L]/L_max.
    pub fn expected_load_fraction(&self) -> f64 {
        self.expected_load() / self.l_max
    }

    /// Right-hand side of the Markov-relaxed reliability constraint, E[L]/ε, bits per slot.
    pub fn required_urllc_bits(&self) -> f64 {
        self.expected_load() / self.urllc_outage_budget
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.rb_bandwidth.iter().sum()
    }

    pub fn max_rb_bandwidth(&self) -> f64 {
        self.rb_bandwidth.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        assert!(SystemConfig::default().violations().is_empty());
    }

    #[test]
    fn json_round_trip_keeps_field_names() {
        let cfg = SystemConfig::default();
        let text = cfg.to_json_pretty();
        for key in [
            "num_embb_users",
            "num_rbs",
            "num_minislots",
            "num_urllc_users",
            "rb_bandwidth",
            "l_max",
            "embb_tx_power",
            "urllc_tx_power",
            "noise_power",
            "puncture_prob",
            "cvar_level",
            "risk_weight",
            "urllc_outage_budget",
            "target_rate",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
        }
        assert_eq!(SystemConfig::from_json_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::to_value(SystemConfig::default()).unwrap();
        v["bogus"] = serde_json::json!(1);
        let err = SystemConfig::from_json_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn zero_epsilon_names_field() {
        let cfg = SystemConfig {
            urllc_outage_budget: 0.0,
            ..SystemConfig::default()
        };
        let v = cfg.violations();
        assert!(v.iter().any(|x| x.field == "urllc_outage_budget"));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let mut cfg = SystemConfig::default();
        cfg.rb_bandwidth.pop();
        cfg.embb_tx_power.push(1.0);
        let fields: Vec<_> = cfg.violations().into_iter().map(|v| v.field).collect();
        assert!(fields.contains(&"rb_bandwidth"));
        assert!(fields.contains(&"embb_tx_power"));
    }
}
