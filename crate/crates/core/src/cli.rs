//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or config validation failure, 2 I/O failure.
//! Every error line on stderr starts with `error: <kind>:`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::alternating::{AlternationOptions, Rounding};
use crate::model::{ChannelRealization, SnrProfile, SystemConfig};
use crate::simulator::{self, PolicyId, RunMetrics, SimError, SweepParam};
use crate::urllc_placement::PlacementProblem;

pub const SEED_ENV: &str = "URLLC_SLICE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "urllc-slice",
    version,
    about = "Risk-sensitive eMBB/URLLC puncturing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation or a parameter sweep.
    Run(RunArgs),
    /// Check a config without simulating.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// proposed | baseline1 | baseline2 | all
    #[arg(long, default_value = "proposed")]
    policy: String,
    #[arg(long, default_value_t = 1000)]
    slots: usize,
    /// Defaults to $URLLC_SLICE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// p | epsilon | beta
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long)]
    values: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write the alternation trace of slot 0 for proposed runs.
    #[arg(long)]
    trace: bool,
    /// Alternate on the fractional schedule and round once at the end.
    #[arg(long)]
    post_round: bool,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn line(&self) -> String {
        match self {
            CliError::Usage(m) => format!("error: usage: {m}"),
            CliError::Config(m) => format!("error: config: {m}"),
            CliError::Io(m) => format!("error: io: {m}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c.to_string()),
            SimError::SweepPoint { .. } => CliError::Config(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Parse `args` (including the program name) and execute.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                    let _ = writeln!(stderr, "error: usage: {first}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, stdout),
        Command::Validate(a) => cmd_validate(&a, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig, CliError> {
    match path {
        Some(p) => SystemConfig::load(p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(SystemConfig::default()),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn parse_policies(s: &str) -> Result<Vec<PolicyId>, CliError> {
    if s == "all" {
        Ok(PolicyId::ALL.to_vec())
    } else {
        s.parse::<PolicyId>().map(|p| vec![p]).map_err(CliError::Usage)
    }
}

fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad sweep value `{v}`")))
        })
        .collect::<Result<_, _>>()?;
    if vals.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    Ok(vals)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(buf)
}

fn summary_line(m: &RunMetrics) -> String {
    format!(
        "policy={} p={} epsilon={} beta={} reliability={:.4} outage_rate={:.4} mean_sum_rate={:.1} infeasible_slots={}",
        m.policy,
        m.puncture_prob,
        m.urllc_outage_budget,
        m.risk_weight,
        m.embb_reliability,
        m.urllc_outage_rate,
        m.mean_sum_rate,
        m.infeasible_slots
    )
}

/// Files for one run; `tag` distinguishes sweep points.
fn write_run(out: &Path, m: &RunMetrics, tag: &str) -> Result<(), CliError> {
    write_file(
        &out.join(format!("metrics_{}{tag}.json", m.policy)),
        m.to_json_pretty().as_bytes(),
    )?;
    write_file(
        &out.join(format!("ecdf_{}{tag}.csv", m.policy)),
        &csv_bytes(|b| m.write_ecdf_csv(b))?,
    )?;
    write_file(
        &out.join(format!("per_user_{}{tag}.csv", m.policy)),
        &csv_bytes(|b| m.write_per_user_csv(b))?,
    )
}

fn write_trace(
    out: &Path,
    cfg: &SystemConfig,
    seed: u64,
    opts: &AlternationOptions,
    tag: &str,
) -> Result<(), CliError> {
    let profile = simulator::snr_profile(cfg, seed);
    let (rec, decision) = simulator::simulate_slot(cfg, &profile, PolicyId::Proposed, seed, 0, opts)?;
    let body = serde_json::json!({
        "slot": 0,
        "trace": decision.trace,
        "weights": decision.weights,
        "infeasible": rec.infeasible,
    });
    let text = serde_json::to_string_pretty(&body).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join(format!("trace_proposed{tag}.json")), text.as_bytes())
}

const SUMMARY_HEADER: [&str; 9] = [
    "policy",
    "p",
    "epsilon",
    "beta",
    "reliability",
    "outage_rate",
    "mean_sum_rate",
    "infeasible_slots",
    "slots",
];

fn summary_record(m: &RunMetrics) -> [String; 9] {
    [
        m.policy.to_string(),
        m.puncture_prob.to_string(),
        m.urllc_outage_budget.to_string(),
        m.risk_weight.to_string(),
        m.embb_reliability.to_string(),
        m.urllc_outage_rate.to_string(),
        m.mean_sum_rate.to_string(),
        m.infeasible_slots.to_string(),
        m.slots.to_string(),
    ]
}

fn summary_csv(rows: &[RunMetrics], extra: Option<SweepParam>) -> Result<Vec<u8>, CliError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header: Vec<&str> = SUMMARY_HEADER.to_vec();
        if extra.is_some() {
            header.insert(1, "param");
            header.insert(2, "value");
        }
        w.write_record(&header)?;
        for m in rows {
            let mut rec: Vec<String> = summary_record(m).to_vec();
            if let Some(p) = extra {
                let cfg_value = match p {
                    SweepParam::P => m.puncture_prob,
                    SweepParam::Epsilon => m.urllc_outage_budget,
                    SweepParam::Beta => m.risk_weight,
                };
                rec.insert(1, p.to_string());
                rec.insert(2, cfg_value.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn per_user_comparison_csv(rows: &[RunMetrics]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["policy", "user", "mean_unpunctured_rate", "mean_rate", "mean_theta"])?;
        for m in rows {
            for u in 0..m.per_user_mean_rate.len() {
                w.write_record([
                    m.policy.to_string(),
                    u.to_string(),
                    m.per_user_mean_unpunctured_rate[u].to_string(),
                    m.per_user_mean_rate[u].to_string(),
                    m.per_user_mean_theta[u].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_run(a: &RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let policies = parse_policies(&a.policy)?;
    let seed = resolve_seed(a.seed)?;
    if a.slots == 0 {
        return Err(CliError::Usage("--slots must be at least 1".into()));
    }
    let sweep = match (&a.sweep, &a.values) {
        (Some(p), Some(v)) => Some((p.parse::<SweepParam>().map_err(CliError::Usage)?, parse_values(v)?)),
        (Some(_), None) => return Err(CliError::Usage("--sweep requires --values".into())),
        (None, Some(_)) => return Err(CliError::Usage("--values requires --sweep".into())),
        (None, None) => None,
    };
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let opts = AlternationOptions {
        rounding: if a.post_round {
            Rounding::PostHoc
        } else {
            Rounding::PerIteration
        },
        ..AlternationOptions::default()
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;

    {
        match &sweep {
            None => {
                let mut rows = Vec::new();
                for &policy in &policies {
                    let m = pool.install(|| simulator::run_simulation_with(&cfg, policy, a.slots, seed, &opts))?;
                    writeln!(stdout, "{}", summary_line(&m)).map_err(|e| CliError::Io(e.to_string()))?;
                    write_run(&a.out, &m, "")?;
                    if a.trace && policy == PolicyId::Proposed {
                        write_trace(&a.out, &cfg, seed, &opts, "")?;
                    }
                    rows.push(m);
                }
                if policies.len() > 1 {
                    write_file(&a.out.join("comparison.csv"), &summary_csv(&rows, None)?)?;
                    write_file(&a.out.join("per_user_comparison.csv"), &per_user_comparison_csv(&rows)?)?;
                }
            }
            Some((param, values)) => {
                let mut all = Vec::new();
                for &policy in &policies {
                    let rows = pool.install(|| simulator::sweep(&cfg, policy, *param, values, a.slots, seed, &opts))?;
                    for (m, v) in rows.iter().zip(values) {
                        writeln!(stdout, "{}", summary_line(m)).map_err(|e| CliError::Io(e.to_string()))?;
                        let tag = format!("_{param}={v}");
                        write_run(&a.out, m, &tag)?;
                        if a.trace && policy == PolicyId::Proposed {
                            write_trace(&a.out, &param.apply(&cfg, *v), seed, &opts, &tag)?;
                        }
                    }
                    write_file(
                        &a.out.join(format!("sweep_{param}_{policy}.csv")),
                        &summary_csv(&rows, Some(*param))?,
                    )?;
                    all.extend(rows);
                }
                if policies.len() > 1 {
                    write_file(
                        &a.out.join(format!("comparison_{param}.csv")),
                        &summary_csv(&all, Some(*param))?,
                    )?;
                }
            }
        }
    }
    Ok(0)
}

/// E[R_urllc] at full puncturing vs. the Markov requirement, with every user at the
/// median of its configured SNR range and the bandwidth split equally.
fn infeasible_at_expectation(cfg: &SystemConfig) -> Option<(f64, f64)> {
    let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
    let profile = SnrProfile::uniform(cfg, mid(cfg.embb_snr_db), mid(cfg.urllc_snr_db));
    let chan = ChannelRealization::from_snr(cfg, &profile.embb_mean_snr, &profile.urllc_mean_snr);
    let sched = simulator::pf_schedule(cfg, &chan);
    let p = PlacementProblem::new(cfg, &chan, &sched);
    let full = vec![1.0; cfg.num_embb_users];
    let achievable = p.expected_urllc_rate(&full);
    (cfg.expected_load() > 0.0 && achievable < p.required_urllc_rate).then_some((achievable, p.required_urllc_rate))
}

fn cmd_validate(a: &ValidateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let cfg: SystemConfig = match &a.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))?
        }
        None => SystemConfig::default(),
    };
    let violations = cfg.violations();
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    for v in &violations {
        writeln!(stderr, "violation: {v}").map_err(io)?;
    }
    if !violations.is_empty() {
        return Err(CliError::Config(format!("{} violation(s)", violations.len())));
    }
    if let Some((achievable, required)) = infeasible_at_expectation(&cfg) {
        writeln!(
            stderr,
            "warning: infeasible-at-expectation: E[R_urllc] at full puncturing {achievable:.1} bit/s < required {required:.1} bit/s"
        )
        .map_err(io)?;
    }
    writeln!(stdout, "ok").map_err(io)?;
    Ok(0)
}
