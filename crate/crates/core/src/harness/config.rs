//! Run configuration: TOML schema, defaults and the single validator shared
//! by `run` and `validate-config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apu::{ApuError, ApuTable, Permission, PermissionUpdate, RegionGeometry, RegionId};
use crate::codec::LinkWidth;
use crate::coherence::{CacheGeometry, CoherenceConfig, DirectoryConfig};
use crate::noc::fabric::FabricConfig;
use crate::noc::router::VC_MENU;
use crate::noc::topology::{SystemMap, TopologyError};
use crate::sni::ThreatClass;

use super::attack::AttackSpec;
use super::workload::{TraceOp, WorkloadKind, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("link_width = {0} is not supported (legal: 64 or 128)")]
    LinkWidth(u32),
    #[error("vc_per_vnet = {0} is not supported (legal: 4, 6, 8 or 10)")]
    VcPerVnet(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Permissions(#[from] ApuError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub chiplets: usize,
    pub cores_per_chiplet: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            chiplets: 8,
            cores_per_chiplet: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub link_width: u32,
    pub vc_per_vnet: usize,
    pub sni_enabled: bool,
    /// SNI-2 rewrites probes for chiplets without access into NACKs.
    pub probe_filtering: bool,
    pub check_directory_traffic: bool,
    pub sni1_latency: u64,
    pub sni2_latency: u64,
    pub ingress_capacity: usize,
    pub uplink_capacity: usize,
    /// Record every flit movement on the interposer.
    pub trace: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            link_width: 64,
            vc_per_vnet: 4,
            sni_enabled: true,
            probe_filtering: true,
            check_directory_traffic: true,
            sni1_latency: 2,
            sni2_latency: 3,
            ingress_capacity: 16,
            uplink_capacity: 8,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermissionPreset {
    /// Every chiplet read-write everywhere.
    Permissive,
    /// The example map: private regions plus one region shared by chiplets 0 and 1.
    Fig6,
    /// Private regions per chiplet plus a shared upper eighth.
    Partitioned,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledUpdate {
    /// Interposer cycle at which every replica changes together.
    pub cycle: u64,
    pub region: usize,
    pub chiplet: usize,
    pub permission: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PermissionSection {
    pub preset: Option<PermissionPreset>,
    /// A permission map file; relative paths resolve against the config file.
    pub map: Option<PathBuf>,
    pub regions: usize,
    /// Chiplet stripped of all access (the snooping observer).
    pub observer: Option<usize>,
    pub updates: Vec<ScheduledUpdate>,
}

impl Default for PermissionSection {
    fn default() -> Self {
        PermissionSection {
            preset: Some(PermissionPreset::Permissive),
            map: None,
            regions: RegionGeometry::BASELINE.regions,
            observer: None,
            updates: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoherenceSection {
    pub cache_sets: usize,
    pub cache_ways: usize,
    pub directory_entries: usize,
    pub directory_queue: usize,
    pub dram_latency: u64,
    pub nack_backoff: u64,
}

impl Default for CoherenceSection {
    fn default() -> Self {
        let c = CoherenceConfig::default();
        CoherenceSection {
            cache_sets: c.cache.sets,
            cache_ways: c.cache.ways,
            directory_entries: c.directory.capacity,
            directory_queue: c.directory.queue_capacity,
            dram_latency: c.directory.dram_latency,
            nack_backoff: c.nack_backoff,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Interposer cycles before the run is abandoned.
    pub max_cycles: u64,
    /// Interposer cycles without progress that count as a deadlock.
    pub watchdog_cycles: u64,
    pub check_swmr: bool,
    pub check_oracle: bool,
    /// Keep per-packet latency records in the report.
    pub packet_records: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            max_cycles: 2_000_000,
            watchdog_cycles: 50_000,
            check_swmr: true,
            check_oracle: true,
            packet_records: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct SimConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub permissions: PermissionSection,
    #[serde(default)]
    pub coherence: CoherenceSection,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub run: RunSection,
}


/// Everything a run needs, resolved and checked.
#[derive(Clone, Debug)]
pub struct ValidatedConfig {
    pub config: SimConfig,
    pub system: SystemMap,
    pub fabric: FabricConfig,
    pub coherence: CoherenceConfig,
    pub table: ApuTable,
    pub updates: Vec<(u64, PermissionUpdate)>,
    pub trace_ops: Vec<TraceOp>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(map) = &cfg.permissions.map {
            if map.is_relative() {
                cfg.permissions.map = Some(base.join(map));
            }
        }
        if let Some(trace) = &cfg.workload.trace {
            if trace.is_relative() {
                cfg.workload.trace = Some(base.join(trace));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<ValidatedConfig, ConfigError> {
        let system = SystemMap::new(self.system.chiplets, self.system.cores_per_chiplet)?;
        let n = &self.network;
        let width = LinkWidth::from_bits(n.link_width).ok_or(ConfigError::LinkWidth(n.link_width))?;
        if !VC_MENU.contains(&n.vc_per_vnet) {
            return Err(ConfigError::VcPerVnet(n.vc_per_vnet));
        }
        if n.sni1_latency < 2 || n.sni2_latency < 2 {
            return Err(invalid("SNI latency cannot be below the two check stages"));
        }
        if n.ingress_capacity == 0 || n.uplink_capacity == 0 {
            return Err(invalid("ingress and uplink capacities must be positive"));
        }
        let fabric = FabricConfig {
            system,
            width,
            vc_per_vnet: n.vc_per_vnet,
            sni_enabled: n.sni_enabled,
            probe_filtering: n.probe_filtering,
            check_directory_traffic: n.check_directory_traffic,
            sni1_latency: n.sni1_latency,
            sni2_latency: n.sni2_latency,
            ingress_capacity: n.ingress_capacity,
            uplink_capacity: n.uplink_capacity,
            trace: n.trace,
        };

        let c = &self.coherence;
        if c.cache_sets == 0 || c.cache_ways == 0 {
            return Err(invalid("cache_sets and cache_ways must be positive"));
        }
        if c.directory_entries == 0 {
            return Err(invalid("directory_entries must be positive"));
        }
        let coherence = CoherenceConfig {
            cache: CacheGeometry {
                sets: c.cache_sets,
                ways: c.cache_ways,
            },
            directory: DirectoryConfig {
                capacity: c.directory_entries,
                queue_capacity: c.directory_queue,
                dram_latency: c.dram_latency,
            },
            nack_backoff: c.nack_backoff.max(1),
        };

        let table = self.permission_table(&system)?;
        let mut updates = Vec::new();
        let probe = table.clone();
        for u in &self.permissions.updates {
            let permission: Permission = u.permission.parse()?;
            if u.chiplet >= system.chiplets {
                return Err(invalid(format!("update names chiplet {}, which does not exist", u.chiplet)));
            }
            probe.privileged_update(RegionId(u.region), u.chiplet, permission)?;
            updates.push((
                u.cycle,
                PermissionUpdate {
                    region: u.region,
                    chiplet: u.chiplet,
                    permission,
                },
            ));
        }
        updates.sort_by_key(|(c, _)| *c);

        if self.run.max_cycles == 0 || self.run.watchdog_cycles == 0 {
            return Err(invalid("max_cycles and watchdog_cycles must be positive"));
        }

        let trace_ops = self.workload.validate(&system, &table)?;
        if !self.attacks.is_empty() && !n.sni_enabled {
            return Err(invalid(
                "attack scenarios need the SNIs enabled; with them off nothing would stop the packet",
            ));
        }
        for a in &self.attacks {
            a.validate(&system, &table)?;
            if a.threat == ThreatClass::PassiveReading && !n.probe_filtering {
                return Err(invalid(
                    "the passive-reading template needs probe_filtering so that unanswerable probe answers are checked",
                ));
            }
        }
        if self.workload.kind == WorkloadKind::Trace && trace_ops.is_empty() {
            return Err(invalid("trace replay needs at least one record"));
        }

        Ok(ValidatedConfig {
            config: self.clone(),
            system,
            fabric,
            coherence,
            table,
            updates,
            trace_ops,
        })
    }

    fn permission_table(&self, system: &SystemMap) -> Result<ApuTable, ConfigError> {
        let p = &self.permissions;
        let mut table = match (&p.map, p.preset) {
            (Some(_), Some(preset)) if preset != PermissionPreset::Permissive => {
                return Err(invalid("set either permissions.map or permissions.preset, not both"));
            }
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                ApuTable::from_map_str(&text)?
            }
            (None, preset) => {
                let geometry = RegionGeometry::new(p.regions, RegionGeometry::BASELINE.memory_bytes)?;
                match preset.unwrap_or(PermissionPreset::Permissive) {
                    PermissionPreset::Permissive => ApuTable::permissive(geometry),
                    PermissionPreset::Partitioned => ApuTable::partitioned(geometry, system.chiplets),
                    PermissionPreset::Fig6 => {
                        if p.regions != RegionGeometry::BASELINE.regions {
                            return Err(invalid("the fig6 map is defined over 64 regions"));
                        }
                        ApuTable::fig6()
                    }
                }
            }
        };
        if let Some(o) = p.observer {
            if o >= system.chiplets {
                return Err(invalid(format!("observer chiplet {o} does not exist")));
            }
            for r in 0..table.geometry().regions {
                table.set(RegionId(r), o, Permission::NoAccess)?;
            }
        }
        Ok(table)
    }
}
