//! Synthetic memory workloads and trace replay.
//!
//! Each core draws from its own ChaCha8 stream keyed by `(seed, core)`, so a
//! core's operation sequence does not depend on how other cores are timed.
//! Addresses stay inside regions the core's chiplet may use; stores only go
//! to read-write regions. A chiplet with no access anywhere stays idle.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apu::{ApuTable, Permission, RegionId};
use crate::codec::NodeId;
use crate::coherence::MemOp;
use crate::noc::topology::{SystemMap, LINE_BYTES, MEMORY_CONTROLLERS};

use super::config::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    #[serde(alias = "uniform-random")]
    Uniform,
    /// Most accesses go to lines homed at one memory controller.
    Hotspot,
    /// One producer per chiplet stores to a shared pool that every other core loads.
    #[serde(alias = "producer-consumer")]
    Sharing,
    #[serde(alias = "trace-replay")]
    Trace,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Uniform => "uniform",
            WorkloadKind::Hotspot => "hotspot",
            WorkloadKind::Sharing => "sharing",
            WorkloadKind::Trace => "trace",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "uniform" | "uniform-random" => Some(WorkloadKind::Uniform),
            "hotspot" => Some(WorkloadKind::Hotspot),
            "sharing" | "producer-consumer" => Some(WorkloadKind::Sharing),
            "trace" | "trace-replay" => Some(WorkloadKind::Trace),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub ops_per_core: u64,
    pub read_fraction: f64,
    /// Distinct lines touched in each usable region, counted from the region base.
    pub lines_per_region: u64,
    /// Chiplet ticks a core waits between finishing one operation and issuing the next.
    pub think_ticks: u64,
    pub hotspot_mc: usize,
    pub hotspot_fraction: f64,
    /// Fraction of operations that go to the shared pool.
    pub sharing_fraction: f64,
    /// Lines in the shared pool, taken from regions every active chiplet can read.
    pub shared_lines: u64,
    pub trace: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Uniform,
            ops_per_core: 200,
            read_fraction: 0.7,
            lines_per_region: 8,
            think_ticks: 400,
            hotspot_mc: 0,
            hotspot_fraction: 0.8,
            sharing_fraction: 0.5,
            shared_lines: 16,
            trace: None,
        }
    }
}

/// One trace record: `cycle core R|W address`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOp {
    /// Earliest interposer cycle at which the core may issue it.
    pub cycle: u64,
    pub core: u8,
    pub write: bool,
    pub address: u64,
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => s.replace('_', "").parse().ok(),
    }
}

/// Parse trace text. Blank lines and `#` comments are ignored.
pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>, ConfigError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| ConfigError::Invalid(format!("trace line {}: {what}: {raw:?}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("expected `cycle core R|W address`"));
        }
        let cycle = parse_u64(fields[0]).ok_or_else(|| bad("bad cycle"))?;
        let core = parse_u64(fields[1])
            .filter(|c| *c < 64)
            .ok_or_else(|| bad("bad core"))? as u8;
        let write = match fields[2] {
            "R" | "r" => false,
            "W" | "w" => true,
            _ => return Err(bad("operation must be R or W")),
        };
        let address = parse_u64(fields[3]).ok_or_else(|| bad("bad address"))?;
        ops.push(TraceOp {
            cycle,
            core,
            write,
            address,
        });
    }
    Ok(ops)
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    ops.iter()
        .map(|o| {
            format!(
                "{} {} {} {:#x}\n",
                o.cycle,
                o.core,
                if o.write { 'W' } else { 'R' },
                o.address
            )
        })
        .collect()
}

fn readable_regions(table: &ApuTable, chiplet: usize) -> Vec<usize> {
    regions_with(table, chiplet, Permission::ReadOnly)
}

fn writable_regions(table: &ApuTable, chiplet: usize) -> Vec<usize> {
    regions_with(table, chiplet, Permission::ReadWrite)
}

fn regions_with(table: &ApuTable, chiplet: usize, at_least: Permission) -> Vec<usize> {
    table
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.permission_of(chiplet).is_ok_and(|p| p >= at_least))
        .map(|(r, _)| r)
        .collect()
}

impl WorkloadSpec {
    /// Check the spec against the system and permissions; returns parsed trace records.
    pub fn validate(&self, system: &SystemMap, table: &ApuTable) -> Result<Vec<TraceOp>, ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, f) in [
            ("read_fraction", self.read_fraction),
            ("hotspot_fraction", self.hotspot_fraction),
            ("sharing_fraction", self.sharing_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("workload.{name} = {f} is outside 0..=1"));
            }
        }
        let region_lines = table.geometry().region_bytes() / LINE_BYTES;
        if self.lines_per_region == 0 || self.lines_per_region > region_lines {
            return bad(format!(
                "workload.lines_per_region must be in 1..={region_lines}"
            ));
        }
        if self.hotspot_mc >= MEMORY_CONTROLLERS {
            return bad(format!("workload.hotspot_mc must be below {MEMORY_CONTROLLERS}"));
        }
        if self.kind == WorkloadKind::Hotspot && self.lines_per_region < MEMORY_CONTROLLERS as u64 {
            return bad(format!(
                "hotspot workloads need lines_per_region >= {MEMORY_CONTROLLERS} to reach every controller"
            ));
        }
        if self.kind == WorkloadKind::Sharing && self.shared_lines == 0 {
            return bad("sharing workloads need shared_lines > 0".into());
        }
        match (&self.trace, self.kind) {
            (None, WorkloadKind::Trace) => bad("trace workloads need workload.trace".into()),
            (Some(_), k) if k != WorkloadKind::Trace => {
                bad("workload.trace is only used with kind = \"trace\"".into())
            }
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                let ops = parse_trace(&text)?;
                for op in &ops {
                    let Some(chiplet) = system.chiplet_of(NodeId(op.core)) else {
                        return bad(format!("trace names core {}, which does not exist", op.core));
                    };
                    let p = table.permission(op.address, chiplet)?;
                    let ok = if op.write { p.can_write() } else { p.can_read() };
                    if !ok {
                        return bad(format!(
                            "trace record `{} {} {} {:#x}` touches a region chiplet {chiplet} may not {}",
                            op.cycle,
                            op.core,
                            if op.write { 'W' } else { 'R' },
                            op.address,
                            if op.write { "write" } else { "read" }
                        ));
                    }
                }
                Ok(ops)
            }
            (None, _) => Ok(Vec::new()),
        }
    }
}

/// What a core should do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Next {
    Op(MemOp),
    /// Nothing yet; ask again at a later tick.
    Wait,
    Done,
}

#[derive(Clone, Debug)]
struct CoreStream {
    rng: ChaCha8Rng,
    remaining: u64,
    stores: u64,
    readable: Vec<usize>,
    writable: Vec<usize>,
    producer: bool,
    trace: VecDeque<TraceOp>,
}

/// Per-core operation source for one run.
#[derive(Clone, Debug)]
pub struct WorkloadGen {
    spec: WorkloadSpec,
    cores: Vec<CoreStream>,
    shared: Vec<u64>,
    region_bytes: u64,
    region_base: Vec<u64>,
}

impl WorkloadGen {
    pub fn new(spec: &WorkloadSpec, system: SystemMap, table: &ApuTable, seed: u64, trace: &[TraceOp]) -> Self {
        let geometry = table.geometry();
        let region_base = (0..geometry.regions).map(|r| geometry.region_base(RegionId(r))).collect();
        let active: Vec<usize> = (0..system.chiplets)
            .filter(|&c| !readable_regions(table, c).is_empty())
            .collect();
        let shared_regions: Vec<usize> = (0..geometry.regions)
            .filter(|&r| {
                let e = table.entries()[r];
                active.len() > 1
                    && active
                        .iter()
                        .all(|&c| e.permission_of(c).is_ok_and(|p| p.can_read()))
            })
            .collect();
        let mut shared = Vec::new();
        'fill: for &r in &shared_regions {
            for l in 0..spec.lines_per_region {
                if shared.len() as u64 >= spec.shared_lines {
                    break 'fill;
                }
                shared.push(geometry.region_base(RegionId(r)) + l * LINE_BYTES);
            }
        }
        let cores = (0..system.cores())
            .map(|i| {
                let core = NodeId(i as u8);
                let chiplet = system.chiplet_of(core).expect("core index in range");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                let readable = readable_regions(table, chiplet);
                CoreStream {
                    rng,
                    remaining: if readable.is_empty() { 0 } else { spec.ops_per_core },
                    stores: 0,
                    writable: writable_regions(table, chiplet),
                    readable,
                    producer: core == system.first_core(chiplet),
                    trace: trace.iter().filter(|t| t.core == i as u8).copied().collect(),
                }
            })
            .collect();
        WorkloadGen {
            spec: spec.clone(),
            cores,
            shared,
            region_bytes: geometry.region_bytes(),
            region_base,
        }
    }

    /// Operations left to generate, over all cores.
    pub fn remaining(&self) -> u64 {
        self.cores
            .iter()
            .map(|c| {
                if self.spec.kind == WorkloadKind::Trace {
                    c.trace.len() as u64
                } else {
                    c.remaining
                }
            })
            .sum()
    }

    /// Cores with something to do at all.
    pub fn active_cores(&self) -> usize {
        self.cores
            .iter()
            .filter(|c| c.remaining > 0 || !c.trace.is_empty())
            .count()
    }

    /// The shared pool used by sharing workloads.
    pub fn shared_lines(&self) -> &[u64] {
        &self.shared
    }

    fn store_value(core: usize, seq: u64) -> u64 {
        ((core as u64 + 1) << 48) | seq
    }

    /// Next operation for an idle `core` at interposer `cycle`.
    pub fn next(&mut self, core: usize, cycle: u64) -> Next {
        let kind = self.spec.kind;
        let s = &mut self.cores[core];
        if kind == WorkloadKind::Trace {
            return match s.trace.front() {
                None => Next::Done,
                Some(t) if t.cycle > cycle => Next::Wait,
                Some(_) => {
                    let t = s.trace.pop_front().expect("front exists");
                    s.stores += 1;
                    Next::Op(if t.write {
                        MemOp::write(t.address, Self::store_value(core, s.stores))
                    } else {
                        MemOp::read(t.address)
                    })
                }
            };
        }
        if s.remaining == 0 {
            return Next::Done;
        }
        s.remaining -= 1;
        let spec = &self.spec;
        let word = s.rng.gen_range(0..(LINE_BYTES / 8)) * 8;
        let mut write = !s.writable.is_empty() && !s.rng.gen_bool(spec.read_fraction);

        let line_addr = if kind == WorkloadKind::Sharing
            && !self.shared.is_empty()
            && s.rng.gen_bool(spec.sharing_fraction)
        {
            let a = self.shared[s.rng.gen_range(0..self.shared.len())];
            let region = (a / self.region_bytes) as usize;
            write = s.producer && s.writable.contains(&region);
            a
        } else {
            let pool = if write { &s.writable } else { &s.readable };
            let region = pool[s.rng.gen_range(0..pool.len())];
            let line = if kind == WorkloadKind::Hotspot && s.rng.gen_bool(spec.hotspot_fraction) {
                let per_mc = spec.lines_per_region / MEMORY_CONTROLLERS as u64;
                let k = s.rng.gen_range(0..per_mc);
                k * MEMORY_CONTROLLERS as u64 + spec.hotspot_mc as u64
            } else {
                s.rng.gen_range(0..spec.lines_per_region)
            };
            self.region_base[region] + line * LINE_BYTES
        };
        let address = line_addr + word;
        Next::Op(if write {
            s.stores += 1;
            MemOp::write(address, Self::store_value(core, s.stores))
        } else {
            MemOp::read(address)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apu::RegionGeometry;
    use proptest::prelude::*;

    fn desk() -> (SystemMap, ApuTable) {
        let system = SystemMap::new(2, 2).unwrap();
        let g = RegionGeometry::new(8, 1 << 32).unwrap();
        (system, ApuTable::partitioned(g, 2))
    }

    fn drain(gen: &mut WorkloadGen, core: usize) -> Vec<MemOp> {
        let mut v = Vec::new();
        while let Next::Op(op) = gen.next(core, u64::MAX) {
            v.push(op);
        }
        v
    }

    #[test]
    fn trace_roundtrip_and_comments() {
        let text = "# header\n0 1 R 0x40\n\n5 0 W 128  # store\n";
        let ops = parse_trace(text).unwrap();
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[1], TraceOp { cycle: 5, core: 0, write: true, address: 128 });
        assert_eq!(parse_trace(&format_trace(&ops)).unwrap(), ops);
        assert!(parse_trace("1 2 X 0").is_err());
    }

    #[test]
    fn trace_ops_wait_for_their_cycle() {
        let (system, table) = desk();
        let spec = WorkloadSpec { kind: WorkloadKind::Trace, ..Default::default() };
        let trace = [TraceOp { cycle: 10, core: 0, write: false, address: 0x40 }];
        let mut g = WorkloadGen::new(&spec, system, &table, 1, &trace);
        assert_eq!(g.next(0, 9), Next::Wait);
        assert_eq!(g.next(0, 10), Next::Op(MemOp::read(0x40)));
        assert_eq!(g.next(0, 11), Next::Done);
    }

    #[test]
    fn cores_without_access_idle() {
        let system = SystemMap::new(2, 2).unwrap();
        let g = RegionGeometry::new(8, 1 << 32).unwrap();
        let mut table = ApuTable::permissive(g);
        for r in 0..8 {
            table.set(RegionId(r), 1, Permission::NoAccess).unwrap();
        }
        let mut gen = WorkloadGen::new(&WorkloadSpec::default(), system, &table, 3, &[]);
        assert_eq!(gen.next(2, 0), Next::Done);
        assert_eq!(gen.active_cores(), 2);
    }

    #[test]
    fn hotspot_concentrates_on_one_controller() {
        let (system, table) = desk();
        let spec = WorkloadSpec {
            kind: WorkloadKind::Hotspot,
            hotspot_mc: 2,
            hotspot_fraction: 1.0,
            ops_per_core: 500,
            ..Default::default()
        };
        let mut gen = WorkloadGen::new(&spec, system, &table, 9, &[]);
        for op in drain(&mut gen, 0) {
            assert_eq!(system.home_of(op.address), NodeId::mc(2));
        }
    }

    #[test]
    fn sharing_pool_is_readable_by_all_active_chiplets() {
        let (system, table) = desk();
        let spec = WorkloadSpec { kind: WorkloadKind::Sharing, ..Default::default() };
        let gen = WorkloadGen::new(&spec, system, &table, 0, &[]);
        assert_eq!(gen.shared_lines().len(), 8);
        for &a in gen.shared_lines() {
            for c in 0..2 {
                assert!(table.permission(a, c).unwrap().can_write());
            }
        }
    }

    proptest! {
        #[test]
        fn generated_addresses_respect_permissions(
            seed in any::<u64>(),
            kind in prop::sample::select(vec![WorkloadKind::Uniform, WorkloadKind::Hotspot, WorkloadKind::Sharing]),
            read_fraction in 0.0f64..=1.0,
        ) {
            let (system, table) = desk();
            let spec = WorkloadSpec { kind, read_fraction, ops_per_core: 64, ..Default::default() };
            let mut gen = WorkloadGen::new(&spec, system, &table, seed, &[]);
            for core in 0..system.cores() {
                let chiplet = system.chiplet_of(NodeId(core as u8)).unwrap();
                let ops = drain(&mut gen, core);
                prop_assert_eq!(ops.len(), 64);
                for op in ops {
                    let p = table.permission(op.address, chiplet).unwrap();
                    let allowed = if op.is_write() { p.can_write() } else { p.can_read() };
                    prop_assert!(allowed);
                    let offset = op.address % table.geometry().region_bytes();
                    prop_assert!(offset < spec.lines_per_region * LINE_BYTES);
                }
            }
        }

        #[test]
        fn streams_are_per_core_and_reproducible(seed in any::<u64>()) {
            let (system, table) = desk();
            let spec = WorkloadSpec::default();
            let mut a = WorkloadGen::new(&spec, system, &table, seed, &[]);
            let mut b = WorkloadGen::new(&spec, system, &table, seed, &[]);
            let a1 = drain(&mut a, 1);
            drain(&mut b, 0);
            prop_assert_eq!(a1, drain(&mut b, 1));
        }
    }
}
