//! Run reports: the machine-readable JSON document, a summary table and CSV series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coherence::{DirectoryStats, ProtocolStats};
use crate::noc::fabric::{FlitLedger, PacketRecord};
use crate::sni::{SniKind, ViolationRecord};

use super::config::SimConfig;
use super::engine::{HaltCause, ObserverStats, RunOutput};
use super::stats::{collect_latency, sign, Aggregates, Deltas, LatencySample};

pub const SCHEMA_VERSION: u32 = 1;

/// Histogram of cycles added by each interface kind, keyed by delay.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SniDelays {
    pub sni1: BTreeMap<u64, u64>,
    pub sni2: BTreeMap<u64, u64>,
}

impl SniDelays {
    pub fn from_records(records: &[PacketRecord]) -> Self {
        let mut d = SniDelays::default();
        for r in records {
            let Some(stamp) = r.sni else { continue };
            let Some(delay) = stamp.added_delay() else { continue };
            let h = match stamp.kind {
                SniKind::Sni1 => &mut d.sni1,
                SniKind::Sni2 => &mut d.sni2,
            };
            *h.entry(delay).or_default() += 1;
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub config: SimConfig,
    pub halt: HaltCause,
    pub exit_code: i32,
    pub cycles: u64,
    pub operations: u64,
    pub loads_checked: u64,
    pub aggregates: Aggregates,
    pub violations: Vec<ViolationRecord>,
    pub ledger: FlitLedger,
    pub ledger_balanced: bool,
    pub protocol: ProtocolStats,
    pub directories: Vec<DirectoryStats>,
    pub sni_delays: SniDelays,
    pub observer: Option<ObserverStats>,
    pub malicious_delivered: u64,
    /// Malicious flits seen on router-to-router links; present when tracing.
    pub malicious_link_flits: Option<u64>,
    pub apu_table_bits: usize,
    pub apu_total_bits: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub packets: Vec<LatencySample>,
}

impl SimReport {
    pub fn from_run(config: &SimConfig, out: &RunOutput) -> Self {
        let records = out.fabric.packets();
        let (samples, aggregates) = collect_latency(records);
        let ledger = out.fabric.ledger();
        let malicious_link_flits = config.network.trace.then(|| {
            out.fabric
                .trace()
                .iter()
                .filter(|t| t.is_internal_link() && records[t.packet.0 as usize].malicious)
                .count() as u64
        });
        SimReport {
            schema_version: SCHEMA_VERSION,
            name: config.name.clone(),
            seed: config.seed,
            config: config.clone(),
            exit_code: out.halt.exit_code(),
            halt: out.halt.clone(),
            cycles: out.cycles,
            operations: out.operations,
            loads_checked: out.loads_checked,
            aggregates,
            violations: out.violations.clone(),
            ledger,
            ledger_balanced: ledger.balances(),
            protocol: out.protocol.stats,
            directories: out.protocol.directories.iter().map(|d| d.stats).collect(),
            sni_delays: SniDelays::from_records(records),
            observer: out.observer,
            malicious_delivered: out.malicious_delivered,
            malicious_link_flits,
            apu_table_bits: out.fabric.apu().table(0).serialized_bits(),
            apu_total_bits: out.fabric.apu().total_bits(),
            packets: if config.run.packet_records { samples } else { Vec::new() },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let mut s = String::new();
        let name = if self.name.is_empty() { "run" } else { &self.name };
        let _ = writeln!(s, "{name} (seed {}): {}", self.seed, self.halt.label());
        let _ = writeln!(s, "  cycles               {:>12}", self.cycles);
        let _ = writeln!(s, "  operations           {:>12}", self.operations);
        let _ = writeln!(s, "  interposer packets   {:>12}", a.packets);
        let _ = writeln!(s, "  mean queuing         {:>12.3} cycles", a.mean_queuing);
        let _ = writeln!(s, "  mean in-network      {:>12.3} cycles", a.mean_in_network);
        let _ = writeln!(s, "  mean total           {:>12.3} cycles", a.mean_total);
        let _ = writeln!(s, "  mean hops            {:>12.3}", a.mean_hops);
        let _ = writeln!(s, "  flit ledger          {:>12}", if self.ledger_balanced { "balanced" } else { "UNBALANCED" });
        for v in &self.violations {
            let threat = v.threat.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(s, "  violation            cycle {} {} {}: {}", v.cycle, v.sni, threat, v.detail);
        }
        if let Some(o) = &self.observer {
            let _ = writeln!(
                s,
                "  observer chiplet {}   probes addressed {}, delivered {}, NACKed {}",
                o.chiplet, o.probes_addressed, o.probes_delivered, o.nacks_delivered
            );
        }
        s
    }

    /// Per-packet latency series, ticks.
    pub fn packets_csv(&self) -> String {
        let mut s = String::from("packet,queuing,in_network,total,hops\n");
        for p in &self.packets {
            let _ = writeln!(s, "{},{},{},{},{}", p.packet, p.queuing, p.in_network, p.total, p.hops);
        }
        s
    }
}

/// A paired SNI-off / SNI-on comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub off: Aggregates,
    pub on: Aggregates,
    pub deltas: Deltas,
    /// Signs of the queuing, in-network and total deltas.
    pub signs: String,
    pub off_halt: HaltCause,
    pub on_halt: HaltCause,
}

impl CompareReport {
    pub fn new(off: &SimReport, on: &SimReport) -> Result<Self, String> {
        if off.schema_version != on.schema_version {
            return Err(format!(
                "cannot compare reports with schema versions {} and {}",
                off.schema_version, on.schema_version
            ));
        }
        if off.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                off.schema_version
            ));
        }
        let deltas = Deltas::between(&off.aggregates, &on.aggregates);
        Ok(CompareReport {
            schema_version: SCHEMA_VERSION,
            name: on.name.clone(),
            seed: on.seed,
            off: off.aggregates.clone(),
            on: on.aggregates.clone(),
            signs: [deltas.queuing_pct, deltas.in_network_pct, deltas.total_pct]
                .into_iter()
                .map(sign)
                .collect(),
            deltas,
            off_halt: off.halt.clone(),
            on_halt: on.halt.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.2}%"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>10}", "metric", "SNI off", "SNI on", "change");
        for (label, off, on, d) in [
            ("queuing", self.off.mean_queuing, self.on.mean_queuing, self.deltas.queuing_pct),
            ("in-network", self.off.mean_in_network, self.on.mean_in_network, self.deltas.in_network_pct),
            ("total", self.off.mean_total, self.on.mean_total, self.deltas.total_pct),
            ("hops", self.off.mean_hops, self.on.mean_hops, self.deltas.hops_pct),
        ] {
            let _ = writeln!(s, "{label:<12} {off:>12.3} {on:>12.3} {:>10}", pct(d));
        }
        let _ = writeln!(s, "signs (queuing, in-network, total): {}", self.signs);
        s
    }

    pub fn csv_row_header() -> &'static str {
        "name,seed,queuing_off,queuing_on,queuing_pct,in_network_off,in_network_on,in_network_pct,total_off,total_on,total_pct,hops_off,hops_on\n"
    }

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        format!(
            "{},{},{:.4},{:.4},{},{:.4},{:.4},{},{:.4},{:.4},{},{:.4},{:.4}\n",
            self.name,
            self.seed,
            self.off.mean_queuing,
            self.on.mean_queuing,
            f(self.deltas.queuing_pct),
            self.off.mean_in_network,
            self.on.mean_in_network,
            f(self.deltas.in_network_pct),
            self.off.mean_total,
            self.on.mean_total,
            f(self.deltas.total_pct),
            self.off.mean_hops,
            self.on.mean_hops
        )
    }
}
