//! Simulation driver: configuration, workloads, attack injection, the
//! tick loop, statistics and reports.

pub mod attack;
pub mod config;
pub mod engine;
pub mod presets;
pub mod replay;
pub mod report;
pub mod stats;
pub mod workload;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sni::ThreatClass;

pub use attack::AttackSpec;
pub use config::{ConfigError, SimConfig, ValidatedConfig};
pub use engine::{run, HaltCause, RunOutput, Simulation};
pub use report::{CompareReport, SimReport, SCHEMA_VERSION};

/// Validate and run one configuration.
pub fn simulate(cfg: &SimConfig) -> Result<(SimReport, RunOutput), ConfigError> {
    let validated = cfg.validate()?;
    let out = run(validated);
    Ok((SimReport::from_run(cfg, &out), out))
}

/// The two halves of a paired comparison: SNIs disabled, then enabled.
pub fn paired_configs(cfg: &SimConfig) -> Result<(SimConfig, SimConfig), ConfigError> {
    if !cfg.attacks.is_empty() {
        return Err(ConfigError::Invalid(
            "compare runs legitimate traffic only; remove the attacks".into(),
        ));
    }
    let mut off = cfg.clone();
    off.network.sni_enabled = false;
    let mut on = cfg.clone();
    on.network.sni_enabled = true;
    off.validate()?;
    on.validate()?;
    Ok((off, on))
}

/// Run `cfg` with SNIs off and on, in parallel threads, and compare.
pub fn compare(cfg: &SimConfig) -> Result<(CompareReport, SimReport, SimReport), ConfigError> {
    let (off, on) = paired_configs(cfg)?;
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(|| simulate(&off));
        let b = simulate(&on);
        (h.join().expect("simulation thread"), b)
    });
    let (a, b) = (a?.0, b?.0);
    let cmp = CompareReport::new(&a, &b).map_err(ConfigError::Invalid)?;
    Ok((cmp, a, b))
}

/// One row of the attack suite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub injected: ThreatClass,
    pub detected: Option<ThreatClass>,
    pub halt: HaltCause,
    pub halt_cycle: u64,
    pub malicious_link_flits: u64,
    pub malicious_delivered: u64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.detected == Some(self.injected)
            && self.malicious_link_flits == 0
            && self.malicious_delivered == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub name: String,
    pub rows: Vec<SuiteRow>,
    /// Injected class -> detected class (or "none") -> count.
    pub matrix: BTreeMap<String, BTreeMap<String, u64>>,
}

impl SuiteReport {
    pub fn diagonal(&self) -> bool {
        self.rows.iter().all(SuiteRow::passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:<16}", "injected \\ got");
        let cols: Vec<String> = ThreatClass::ALL
            .iter()
            .map(|t| t.to_string())
            .chain(std::iter::once("none".to_string()))
            .collect();
        for c in &cols {
            s.push_str(&format!(" {c:>15}"));
        }
        s.push_str(&format!(" {:>12}\n", "link flits"));
        for r in &self.rows {
            s.push_str(&format!("{:<16}", r.injected.to_string()));
            let got = r.detected.map_or("none".to_string(), |t| t.to_string());
            for c in &cols {
                s.push_str(&format!(" {:>15}", u8::from(*c == got)));
            }
            s.push_str(&format!(" {:>12}\n", r.malicious_link_flits));
        }
        let ok = self.rows.iter().filter(|r| r.passed()).count();
        s.push_str(&format!("{ok}/{} threat classes detected\n", self.rows.len()));
        s
    }
}

/// Inject every template against `base` in turn, with flit tracing on.
pub fn attack_suite(base: &SimConfig, core: u8, trigger_cycle: u64) -> Result<SuiteReport, ConfigError> {
    let mut rows = Vec::new();
    for spec in attack::suite(core, trigger_cycle) {
        let mut cfg = base.clone();
        cfg.network.sni_enabled = true;
        cfg.network.probe_filtering = true;
        cfg.network.trace = true;
        cfg.run.packet_records = false;
        cfg.attacks = vec![spec.clone()];
        let (report, out) = simulate(&cfg)?;
        let detected = match &out.halt {
            HaltCause::SecurityHalt { threat } => *threat,
            _ => None,
        };
        rows.push(SuiteRow {
            injected: spec.threat,
            detected,
            halt: out.halt.clone(),
            halt_cycle: out.cycles,
            malicious_link_flits: report.malicious_link_flits.unwrap_or(0),
            malicious_delivered: out.malicious_delivered,
        });
    }
    let mut matrix: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for r in &rows {
        let got = r.detected.map_or("none".to_string(), |t| t.to_string());
        *matrix
            .entry(r.injected.to_string())
            .or_default()
            .entry(got)
            .or_default() += 1;
    }
    Ok(SuiteReport {
        schema_version: SCHEMA_VERSION,
        name: base.name.clone(),
        rows,
        matrix,
    })
}
