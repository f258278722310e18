//! Private per-core cache array and writeback buffer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::DataBlock;

/// Stable and transient line states.
///
/// `IS`/`IM` wait for a fill; `SM`/`OM` keep their data while upgrading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineState {
    I,
    S,
    E,
    O,
    M,
    IS,
    IM,
    SM,
    OM,
}

impl LineState {
    /// Holds the current value of the line.
    pub fn has_data(self) -> bool {
        matches!(self, LineState::S | LineState::E | LineState::O | LineState::M | LineState::SM | LineState::OM)
    }

    /// Must supply data to a probe.
    pub fn is_owner(self) -> bool {
        matches!(self, LineState::E | LineState::O | LineState::M | LineState::OM)
    }

    pub fn is_dirty(self) -> bool {
        matches!(self, LineState::O | LineState::M | LineState::OM)
    }

    pub fn can_read(self) -> bool {
        matches!(self, LineState::S | LineState::E | LineState::O | LineState::M)
    }

    pub fn can_write(self) -> bool {
        matches!(self, LineState::E | LineState::M)
    }

    pub fn after_probe(self) -> LineState {
        match self {
            LineState::M => LineState::O,
            LineState::E => LineState::S,
            s => s,
        }
    }

    pub fn after_probe_inv(self) -> LineState {
        match self {
            LineState::SM | LineState::OM => LineState::IM,
            LineState::IS | LineState::IM => self,
            _ => LineState::I,
        }
    }
}

/// A line evicted while still owned, waiting for the directory's answer to its PUT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WbState {
    MI,
    OI,
    EI,
    /// Ownership was taken by a probe; the pending writeback carries nothing.
    II,
}

impl WbState {
    pub fn from_evicted(s: LineState) -> Option<WbState> {
        match s {
            LineState::M => Some(WbState::MI),
            LineState::O => Some(WbState::OI),
            LineState::E => Some(WbState::EI),
            _ => None,
        }
    }

    pub fn is_owner(self) -> bool {
        self != WbState::II
    }

    pub fn is_dirty(self) -> bool {
        matches!(self, WbState::MI | WbState::OI)
    }

    pub fn after_probe(self) -> WbState {
        match self {
            WbState::MI => WbState::OI,
            WbState::EI => WbState::II,
            s => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheLine {
    pub line: u64,
    pub state: LineState,
    pub data: DataBlock,
    last_use: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub sets: usize,
    pub ways: usize,
}

impl CacheGeometry {
    pub fn lines(&self) -> usize {
        self.sets * self.ways
    }
}

#[derive(Clone, Debug)]
pub struct Cache {
    geometry: CacheGeometry,
    sets: Vec<Vec<CacheLine>>,
    clock: u64,
    pub writebacks: BTreeMap<u64, (WbState, DataBlock)>,
}

impl Cache {
    pub fn new(geometry: CacheGeometry) -> Self {
        assert!(geometry.sets > 0 && geometry.ways > 0, "empty cache geometry");
        Cache {
            geometry,
            sets: vec![Vec::with_capacity(geometry.ways); geometry.sets],
            clock: 0,
            writebacks: BTreeMap::new(),
        }
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.geometry.sets as u64) as usize
    }

    pub fn get(&self, line: u64) -> Option<&CacheLine> {
        self.sets[self.set_of(line)].iter().find(|l| l.line == line)
    }

    pub fn get_mut(&mut self, line: u64) -> Option<&mut CacheLine> {
        let s = self.set_of(line);
        self.sets[s].iter_mut().find(|l| l.line == line)
    }

    pub fn state(&self, line: u64) -> LineState {
        self.get(line).map_or(LineState::I, |l| l.state)
    }

    pub fn touch(&mut self, line: u64) {
        self.clock += 1;
        let now = self.clock;
        if let Some(l) = self.get_mut(line) {
            l.last_use = now;
        }
    }

    /// Install `line` in `state`, returning the LRU victim if the set was full.
    pub fn allocate(&mut self, line: u64, state: LineState, data: DataBlock) -> Option<CacheLine> {
        self.clock += 1;
        let now = self.clock;
        let ways = self.geometry.ways;
        let s = self.set_of(line);
        let set = &mut self.sets[s];
        set.retain(|l| l.state != LineState::I);
        debug_assert!(set.iter().all(|l| l.line != line), "line already present");
        let victim = if set.len() >= ways {
            let (i, _) = set
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.last_use)
                .expect("full set");
            Some(set.swap_remove(i))
        } else {
            None
        };
        set.push(CacheLine {
            line,
            state,
            data,
            last_use: now,
        });
        victim
    }

    pub fn lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.sets.iter().flatten().filter(|l| l.state != LineState::I)
    }
}
