//! Address Protection Unit: per-region, per-chiplet access permissions.
//!
//! Physical memory is split into equal power-of-two regions. Each table
//! entry holds a 2-bit permission for each of up to eight chiplets, so an
//! entry is 16 bits and the 64-region baseline table is 1024 bits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_CHIPLETS: usize = 8;
pub const ENTRY_BITS: usize = 2 * MAX_CHIPLETS;
pub const BASELINE_REGIONS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApuError {
    #[error("permission encoding {0:#04b} is unused")]
    InvalidEncoding(u8),
    #[error("unknown permission `{0}` (expected --, RO or RW)")]
    UnknownPermission(String),
    #[error("chiplet {0} is out of range (0..{MAX_CHIPLETS})")]
    ChipletOutOfRange(usize),
    #[error("region {region} is out of range (0..{regions})")]
    RegionOutOfRange { region: usize, regions: usize },
    #[error("address {0:#x} lies outside physical memory")]
    AddressOutOfRange(u64),
    #[error("entry `{0}` must list exactly {MAX_CHIPLETS} comma-separated cells")]
    BadEntry(String),
    #[error("invalid region geometry: {0}")]
    Geometry(String),
    #[error("serialized table has {actual} bits, expected {expected}")]
    SerializedLength { actual: usize, expected: usize },
    #[error("permission map: {0}")]
    MapFile(String),
}

/// Chiplet access level. Ordered `NoAccess < ReadOnly < ReadWrite`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[derive(Default)]
pub enum Permission {
    #[default]
    NoAccess,
    ReadOnly,
    ReadWrite,
}

impl Permission {
    pub fn code(self) -> u8 {
        match self {
            Permission::NoAccess => 0b00,
            Permission::ReadOnly => 0b01,
            Permission::ReadWrite => 0b11,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ApuError> {
        match code {
            0b00 => Ok(Permission::NoAccess),
            0b01 => Ok(Permission::ReadOnly),
            0b11 => Ok(Permission::ReadWrite),
            other => Err(ApuError::InvalidEncoding(other)),
        }
    }

    pub fn can_read(self) -> bool {
        self >= Permission::ReadOnly
    }

    pub fn can_write(self) -> bool {
        self == Permission::ReadWrite
    }

    pub fn label(self) -> &'static str {
        match self {
            Permission::NoAccess => "--",
            Permission::ReadOnly => "RO",
            Permission::ReadWrite => "RW",
        }
    }
}

impl FromStr for Permission {
    type Err = ApuError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "--" | "NA" | "00" => Ok(Permission::NoAccess),
            "RO" | "01" => Ok(Permission::ReadOnly),
            "RW" | "11" => Ok(Permission::ReadWrite),
            "10" => Err(ApuError::InvalidEncoding(0b10)),
            other => Err(ApuError::UnknownPermission(other.to_string())),
        }
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId(pub usize);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One table row: a permission per chiplet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApuEntry {
    perms: [Permission; MAX_CHIPLETS],
}


impl ApuEntry {
    pub fn new(perms: [Permission; MAX_CHIPLETS]) -> Self {
        ApuEntry { perms }
    }

    pub fn uniform(p: Permission) -> Self {
        ApuEntry {
            perms: [p; MAX_CHIPLETS],
        }
    }

    /// Chiplet `i` occupies bits `2i..2i+2`.
    pub fn to_bits(&self) -> u16 {
        self.perms
            .iter()
            .enumerate()
            .fold(0u16, |acc, (i, p)| acc | (p.code() as u16) << (2 * i))
    }

    pub fn from_bits(bits: u16) -> Result<Self, ApuError> {
        let mut perms = [Permission::NoAccess; MAX_CHIPLETS];
        for (i, p) in perms.iter_mut().enumerate() {
            *p = Permission::from_code(((bits >> (2 * i)) & 0b11) as u8)?;
        }
        Ok(ApuEntry { perms })
    }

    pub fn permission_of(&self, chiplet: usize) -> Result<Permission, ApuError> {
        self.perms
            .get(chiplet)
            .copied()
            .ok_or(ApuError::ChipletOutOfRange(chiplet))
    }

    pub fn with(mut self, chiplet: usize, p: Permission) -> Result<Self, ApuError> {
        *self
            .perms
            .get_mut(chiplet)
            .ok_or(ApuError::ChipletOutOfRange(chiplet))? = p;
        Ok(self)
    }

    pub fn cells(&self) -> &[Permission; MAX_CHIPLETS] {
        &self.perms
    }
}

impl FromStr for ApuEntry {
    type Err = ApuError;

    /// Parses `"RW,RW,--,--,--,--,--,--"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cells: Vec<&str> = s.split(',').collect();
        if cells.len() != MAX_CHIPLETS {
            return Err(ApuError::BadEntry(s.to_string()));
        }
        let mut perms = [Permission::NoAccess; MAX_CHIPLETS];
        for (p, cell) in perms.iter_mut().zip(cells) {
            *p = cell.parse()?;
        }
        Ok(ApuEntry { perms })
    }
}

impl fmt::Display for ApuEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<&str> = self.perms.iter().map(|p| p.label()).collect();
        f.write_str(&cells.join(","))
    }
}

/// How physical addresses map onto regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGeometry {
    pub regions: usize,
    pub memory_bytes: u64,
}

impl RegionGeometry {
    /// 4 GiB in 64 regions of 64 MiB.
    pub const BASELINE: RegionGeometry = RegionGeometry {
        regions: BASELINE_REGIONS,
        memory_bytes: 1 << 32,
    };

    pub fn new(regions: usize, memory_bytes: u64) -> Result<Self, ApuError> {
        let g = RegionGeometry {
            regions,
            memory_bytes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ApuError> {
        if self.regions == 0 || !self.regions.is_power_of_two() {
            return Err(ApuError::Geometry(format!(
                "region count {} is not a power of two",
                self.regions
            )));
        }
        if !self.memory_bytes.is_power_of_two() || self.memory_bytes < self.regions as u64 * 64 {
            return Err(ApuError::Geometry(format!(
                "memory size {} is not a power of two of at least one line per region",
                self.memory_bytes
            )));
        }
        Ok(())
    }

    pub fn region_bytes(&self) -> u64 {
        self.memory_bytes / self.regions as u64
    }

    pub fn region_shift(&self) -> u32 {
        self.region_bytes().trailing_zeros()
    }

    pub fn region_of(&self, address: u64) -> Result<RegionId, ApuError> {
        if address >= self.memory_bytes {
            return Err(ApuError::AddressOutOfRange(address));
        }
        Ok(RegionId((address >> self.region_shift()) as usize))
    }

    pub fn region_base(&self, region: RegionId) -> u64 {
        (region.0 as u64) << self.region_shift()
    }
}

/// Packed table contents: entry `r` occupies bits `16r..16r+16`, little-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedTable {
    pub bits: usize,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApuTable {
    geometry: RegionGeometry,
    entries: Vec<ApuEntry>,
}

impl ApuTable {
    pub fn new(geometry: RegionGeometry) -> Self {
        Self::filled(geometry, ApuEntry::default())
    }

    pub fn filled(geometry: RegionGeometry, entry: ApuEntry) -> Self {
        ApuTable {
            geometry,
            entries: vec![entry; geometry.regions],
        }
    }

    pub fn geometry(&self) -> RegionGeometry {
        self.geometry
    }

    pub fn entries(&self) -> &[ApuEntry] {
        &self.entries
    }

    pub fn entry(&self, region: RegionId) -> Result<ApuEntry, ApuError> {
        self.entries
            .get(region.0)
            .copied()
            .ok_or(ApuError::RegionOutOfRange {
                region: region.0,
                regions: self.entries.len(),
            })
    }

    /// Index the table with the upper address bits.
    pub fn lookup(&self, address: u64) -> Result<(RegionId, ApuEntry), ApuError> {
        let region = self.geometry.region_of(address)?;
        Ok((region, self.entries[region.0]))
    }

    pub fn permission(&self, address: u64, chiplet: usize) -> Result<Permission, ApuError> {
        self.lookup(address)?.1.permission_of(chiplet)
    }

    pub fn set(&mut self, region: RegionId, chiplet: usize, p: Permission) -> Result<(), ApuError> {
        let regions = self.entries.len();
        let entry = self
            .entries
            .get_mut(region.0)
            .ok_or(ApuError::RegionOutOfRange {
                region: region.0,
                regions,
            })?;
        *entry = entry.with(chiplet, p)?;
        Ok(())
    }

    pub fn set_entry(&mut self, region: RegionId, entry: ApuEntry) -> Result<(), ApuError> {
        let regions = self.entries.len();
        *self
            .entries
            .get_mut(region.0)
            .ok_or(ApuError::RegionOutOfRange {
                region: region.0,
                regions,
            })? = entry;
        Ok(())
    }

    /// Copy-on-write single-cell update.
    pub fn privileged_update(
        &self,
        region: RegionId,
        chiplet: usize,
        p: Permission,
    ) -> Result<ApuTable, ApuError> {
        let mut next = self.clone();
        next.set(region, chiplet, p)?;
        Ok(next)
    }

    pub fn serialized_bits(&self) -> usize {
        self.entries.len() * ENTRY_BITS
    }

    pub fn serialize(&self) -> SerializedTable {
        let bytes = self
            .entries
            .iter()
            .flat_map(|e| e.to_bits().to_le_bytes())
            .collect();
        SerializedTable {
            bits: self.serialized_bits(),
            bytes,
        }
    }

    pub fn deserialize(
        geometry: RegionGeometry,
        serialized: &SerializedTable,
    ) -> Result<ApuTable, ApuError> {
        let expected = geometry.regions * ENTRY_BITS;
        if serialized.bits != expected || serialized.bytes.len() * 8 != expected {
            return Err(ApuError::SerializedLength {
                actual: serialized.bits,
                expected,
            });
        }
        let entries = serialized
            .bytes
            .chunks_exact(2)
            .map(|b| ApuEntry::from_bits(u16::from_le_bytes([b[0], b[1]])))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ApuTable { geometry, entries })
    }

    /// The example map of the APU figure: region `c` private (RW) to chiplet
    /// `c` for the first eight regions, region 8 read-write shared by chiplets
    /// 0 and 1, everything else inaccessible.
    pub fn fig6() -> ApuTable {
        let mut t = ApuTable::new(RegionGeometry::BASELINE);
        for c in 0..MAX_CHIPLETS {
            t.set(RegionId(c), c, Permission::ReadWrite).unwrap();
        }
        t.set(RegionId(8), 0, Permission::ReadWrite).unwrap();
        t.set(RegionId(8), 1, Permission::ReadWrite).unwrap();
        t
    }

    pub fn permissive(geometry: RegionGeometry) -> ApuTable {
        ApuTable::filled(geometry, ApuEntry::uniform(Permission::ReadWrite))
    }

    /// Regions in the upper eighth are shared read-write by every chiplet;
    /// the rest are private to chiplet `region % chiplets`.
    pub fn partitioned(geometry: RegionGeometry, chiplets: usize) -> ApuTable {
        let mut t = ApuTable::new(geometry);
        let shared_from = geometry.regions - (geometry.regions / 8).max(1);
        for r in 0..geometry.regions {
            let entry = if r >= shared_from {
                let mut e = ApuEntry::default();
                for c in 0..chiplets.min(MAX_CHIPLETS) {
                    e = e.with(c, Permission::ReadWrite).unwrap();
                }
                e
            } else {
                ApuEntry::default()
                    .with(r % chiplets.max(1), Permission::ReadWrite)
                    .unwrap()
            };
            t.entries[r] = entry;
        }
        t
    }

    /// Parse a permission map file.
    ///
    /// ```toml
    /// regions = 64
    /// memory_bytes = 4294967296
    /// default = "--,--,--,--,--,--,--,--"
    ///
    /// [region]
    /// 8 = "RW,RW,--,--,--,--,--,--"
    /// "16-23" = "RO,RO,RO,RO,RO,RO,RO,RO"
    /// ```
    pub fn from_map_str(text: &str) -> Result<ApuTable, ApuError> {
        let file: PermissionMapFile =
            toml::from_str(text).map_err(|e| ApuError::MapFile(e.message().to_string()))?;
        file.into_table()
    }

    pub fn to_map_string(&self) -> String {
        let mut out = format!(
            "regions = {}\nmemory_bytes = {}\ndefault = \"{}\"\n\n[region]\n",
            self.geometry.regions,
            self.geometry.memory_bytes,
            ApuEntry::default()
        );
        for (r, e) in self.entries.iter().enumerate() {
            if *e != ApuEntry::default() {
                out.push_str(&format!("{r} = \"{e}\"\n"));
            }
        }
        out
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PermissionMapFile {
    #[serde(default = "default_regions")]
    regions: usize,
    #[serde(default = "default_memory")]
    memory_bytes: u64,
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    region: BTreeMap<String, String>,
}

fn default_regions() -> usize {
    BASELINE_REGIONS
}

fn default_memory() -> u64 {
    RegionGeometry::BASELINE.memory_bytes
}

impl PermissionMapFile {
    fn into_table(self) -> Result<ApuTable, ApuError> {
        let geometry = RegionGeometry::new(self.regions, self.memory_bytes)?;
        let default = match &self.default {
            Some(s) => s.parse()?,
            None => ApuEntry::default(),
        };
        let mut table = ApuTable::filled(geometry, default);
        for (key, value) in &self.region {
            let entry: ApuEntry = value.parse()?;
            let (lo, hi) = parse_region_key(key)?;
            for r in lo..=hi {
                table.set_entry(RegionId(r), entry)?;
            }
        }
        Ok(table)
    }
}

fn parse_region_key(key: &str) -> Result<(usize, usize), ApuError> {
    let bad = || ApuError::MapFile(format!("bad region key `{key}`"));
    match key.split_once('-') {
        Some((a, b)) => {
            let lo = a.trim().parse().map_err(|_| bad())?;
            let hi = b.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            Ok((lo, hi))
        }
        None => {
            let r = key.trim().parse().map_err(|_| bad())?;
            Ok((r, r))
        }
    }
}

/// A permission change issued through the privileged (non-NoC) channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionUpdate {
    pub region: usize,
    pub chiplet: usize,
    pub permission: Permission,
}

/// The per-router copies of the APU table. Updates are queued and applied
/// to every replica together at a cycle boundary.
#[derive(Clone, Debug)]
pub struct ApuReplicas {
    tables: Vec<ApuTable>,
    pending: Vec<PermissionUpdate>,
}

impl ApuReplicas {
    pub fn new(table: ApuTable, routers: usize) -> Self {
        ApuReplicas {
            tables: vec![table; routers],
            pending: Vec::new(),
        }
    }

    pub fn table(&self, router_index: usize) -> &ApuTable {
        &self.tables[router_index]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Validates eagerly so a bad update never reaches the boundary.
    pub fn schedule(&mut self, update: PermissionUpdate) -> Result<(), ApuError> {
        self.tables[0].privileged_update(RegionId(update.region), update.chiplet, update.permission)?;
        self.pending.push(update);
        Ok(())
    }

    /// Apply all queued updates to every replica. Returns how many were applied.
    pub fn apply_pending(&mut self) -> usize {
        let updates = std::mem::take(&mut self.pending);
        for u in &updates {
            for t in &mut self.tables {
                t.set(RegionId(u.region), u.chiplet, u.permission)
                    .expect("validated at schedule time");
            }
        }
        updates.len()
    }

    pub fn all_identical(&self) -> bool {
        let first = self.tables[0].serialize();
        self.tables.iter().all(|t| t.serialize() == first)
    }

    pub fn total_bits(&self) -> usize {
        self.tables.iter().map(ApuTable::serialized_bits).sum()
    }
}
