//! Sequential reference memory and the replay check.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Write(u64),
}

/// A word-sized load or store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemOp {
    pub kind: OpKind,
    pub address: u64,
}

impl MemOp {
    pub fn read(address: u64) -> Self {
        MemOp {
            kind: OpKind::Read,
            address: address & !7,
        }
    }

    pub fn write(address: u64, value: u64) -> Self {
        MemOp {
            kind: OpKind::Write(value),
            address: address & !7,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self.kind, OpKind::Write(_))
    }
}

/// An operation at the moment it took effect in its core's cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    /// Position in the global perform order.
    pub seq: u64,
    pub core: NodeId,
    pub op: MemOp,
    /// Value loaded, or value stored.
    pub value: u64,
    pub issued_tick: u64,
    pub performed_tick: u64,
    pub hit: bool,
}

impl Completion {
    pub fn to_trace_line(&self) -> String {
        let (kind, v) = match self.op.kind {
            OpKind::Read => ("load", self.value),
            OpKind::Write(v) => ("store", v),
        };
        format!(
            "{} {} core={} {} addr={:#x} value={:#x}",
            self.seq, self.performed_tick, self.core, kind, self.op.address, v
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub tick: u64,
    pub core: NodeId,
    pub address: u64,
    pub expected: u64,
    pub observed: u64,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tick {}: core {} loaded {:#x} from {:#x}, expected {:#x}",
            self.tick, self.core, self.observed, self.address, self.expected
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct MemoryOracle {
    words: HashMap<u64, u64>,
    pub applied: u64,
}

impl MemoryOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, address: u64) -> u64 {
        self.words.get(&(address & !7)).copied().unwrap_or(0)
    }

    /// Apply one completion, checking loads.
    pub fn apply(&mut self, c: &Completion) -> Result<(), Divergence> {
        self.applied += 1;
        match c.op.kind {
            OpKind::Write(v) => {
                self.words.insert(c.op.address, v);
                Ok(())
            }
            OpKind::Read => {
                let expected = self.value(c.op.address);
                if expected == c.value {
                    Ok(())
                } else {
                    Err(Divergence {
                        tick: c.performed_tick,
                        core: c.core,
                        address: c.op.address,
                        expected,
                        observed: c.value,
                    })
                }
            }
        }
    }

    pub fn written(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.words.iter().map(|(&a, &v)| (a, v))
    }
}

/// Replay completions in global perform order; the first bad load fails.
pub fn oracle_check(completions: &[Completion]) -> Result<MemoryOracle, Divergence> {
    let mut ordered: Vec<&Completion> = completions.iter().collect();
    ordered.sort_by_key(|c| c.seq);
    let mut oracle = MemoryOracle::new();
    for c in ordered {
        oracle.apply(c)?;
    }
    Ok(oracle)
}
