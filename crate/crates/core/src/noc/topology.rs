//! Physical layout: a 3-column by 4-row interposer mesh whose west and east
//! columns host the chiplet interface routers and whose middle column hosts
//! the memory-controller routers.
//!
//! Router ids follow the system figure: 0..64 are core routers inside the
//! chiplets, 64..72 the chiplet hubs, 72..84 the interposer mesh
//! (`72 + row * 3 + column`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::NodeId;

pub const MESH_COLUMNS: usize = 3;
pub const MESH_ROWS: usize = 4;
pub const MESH_ROUTERS: usize = MESH_COLUMNS * MESH_ROWS;
pub const FIRST_HUB_ROUTER: u8 = 64;
pub const FIRST_MESH_ROUTER: u8 = 72;
pub const MAX_CHIPLETS: usize = 8;
pub const MAX_CORES_PER_CHIPLET: usize = 8;
pub const MEMORY_CONTROLLERS: usize = 4;
pub const LINE_BYTES: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("router {0} is not an interposer mesh router")]
    UnknownRouter(u8),
    #[error("node {0} is not attached to this system")]
    UnknownNode(NodeId),
    #[error("{chiplets} chiplet(s) x {cores} core(s) is not a supported system (1..=8 each)")]
    Shape { chiplets: usize, cores: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouterId(pub u8);

impl RouterId {
    pub fn mesh_index(self) -> Result<usize, TopologyError> {
        let i = self.0.wrapping_sub(FIRST_MESH_ROUTER) as usize;
        if self.0 >= FIRST_MESH_ROUTER && i < MESH_ROUTERS {
            Ok(i)
        } else {
            Err(TopologyError::UnknownRouter(self.0))
        }
    }

    pub fn from_index(i: usize) -> Self {
        RouterId(FIRST_MESH_ROUTER + i as u8)
    }

    pub fn coord(self) -> Result<Coord, TopologyError> {
        let i = self.mesh_index()?;
        Ok(Coord {
            x: i % MESH_COLUMNS,
            y: i / MESH_COLUMNS,
        })
    }

    pub fn at(c: Coord) -> Self {
        RouterId::from_index(c.y * MESH_COLUMNS + c.x)
    }
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Router port. `North` is increasing row index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    Local,
    North,
    East,
    South,
    West,
}

impl Port {
    pub const ALL: [Port; 5] = [Port::Local, Port::North, Port::East, Port::South, Port::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Port {
        match self {
            Port::Local => Port::Local,
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
        }
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Port::Local => "local",
            Port::North => "north",
            Port::East => "east",
            Port::South => "south",
            Port::West => "west",
        };
        f.write_str(s)
    }
}

/// Deterministic dimension-order (X then Y) next hop.
pub fn route(current: RouterId, dest: RouterId) -> Result<Port, TopologyError> {
    let here = current.coord()?;
    let there = dest.coord()?;
    Ok(if there.x > here.x {
        Port::East
    } else if there.x < here.x {
        Port::West
    } else if there.y > here.y {
        Port::North
    } else if there.y < here.y {
        Port::South
    } else {
        Port::Local
    })
}

/// Neighbour reached through `port`, if the mesh has one.
pub fn neighbour(router: RouterId, port: Port) -> Option<RouterId> {
    let c = router.coord().ok()?;
    let next = match port {
        Port::Local => return None,
        Port::East if c.x + 1 < MESH_COLUMNS => Coord { x: c.x + 1, ..c },
        Port::West if c.x > 0 => Coord { x: c.x - 1, ..c },
        Port::North if c.y + 1 < MESH_ROWS => Coord { y: c.y + 1, ..c },
        Port::South if c.y > 0 => Coord { y: c.y - 1, ..c },
        _ => return None,
    };
    Some(RouterId::at(next))
}

/// What hangs off a mesh router's local port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attachment {
    Chiplet(usize),
    MemoryController(usize),
    None,
}

/// System shape plus the fixed node/router numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemMap {
    pub chiplets: usize,
    pub cores_per_chiplet: usize,
}

impl SystemMap {
    pub const BASELINE: SystemMap = SystemMap {
        chiplets: 8,
        cores_per_chiplet: 8,
    };

    pub fn new(chiplets: usize, cores_per_chiplet: usize) -> Result<Self, TopologyError> {
        if !(1..=MAX_CHIPLETS).contains(&chiplets)
            || !(1..=MAX_CORES_PER_CHIPLET).contains(&cores_per_chiplet)
        {
            return Err(TopologyError::Shape {
                chiplets,
                cores: cores_per_chiplet,
            });
        }
        Ok(SystemMap {
            chiplets,
            cores_per_chiplet,
        })
    }

    pub fn cores(&self) -> usize {
        self.chiplets * self.cores_per_chiplet
    }

    pub fn is_core(&self, node: NodeId) -> bool {
        (node.0 as usize) < self.cores()
    }

    pub fn chiplet_of(&self, node: NodeId) -> Option<usize> {
        self.is_core(node)
            .then(|| node.0 as usize / self.cores_per_chiplet)
    }

    pub fn cores_of(&self, chiplet: usize) -> std::ops::RangeInclusive<u8> {
        let first = (chiplet * self.cores_per_chiplet) as u8;
        first..=first + self.cores_per_chiplet as u8 - 1
    }

    pub fn first_core(&self, chiplet: usize) -> NodeId {
        NodeId((chiplet * self.cores_per_chiplet) as u8)
    }

    /// Home directory: cache-line interleaving on address bits 7:6.
    pub fn home_of(&self, address: u64) -> NodeId {
        NodeId::mc(((address >> 6) & 0b11) as u8)
    }

    pub fn chiplet_router(&self, chiplet: usize) -> RouterId {
        if chiplet < MESH_ROWS {
            RouterId::at(Coord { x: 0, y: chiplet })
        } else {
            RouterId::at(Coord {
                x: MESH_COLUMNS - 1,
                y: chiplet - MESH_ROWS,
            })
        }
    }

    pub fn mc_router(&self, mc: usize) -> RouterId {
        RouterId::at(Coord { x: 1, y: mc })
    }

    pub fn hub_router(&self, chiplet: usize) -> RouterId {
        RouterId(FIRST_HUB_ROUTER + chiplet as u8)
    }

    pub fn attachment(&self, router: RouterId) -> Attachment {
        let Ok(c) = router.coord() else {
            return Attachment::None;
        };
        match c.x {
            1 => Attachment::MemoryController(c.y),
            0 if c.y < self.chiplets => Attachment::Chiplet(c.y),
            x if x == MESH_COLUMNS - 1 && c.y + MESH_ROWS < self.chiplets => {
                Attachment::Chiplet(c.y + MESH_ROWS)
            }
            _ => Attachment::None,
        }
    }

    /// Mesh router a message for `node` is ejected at.
    pub fn router_of(&self, node: NodeId) -> Result<RouterId, TopologyError> {
        if let Some(c) = self.chiplet_of(node) {
            Ok(self.chiplet_router(c))
        } else if let Some(m) = node.mc_index() {
            Ok(self.mc_router(m as usize))
        } else {
            Err(TopologyError::UnknownNode(node))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: usize, y: usize) -> RouterId {
        RouterId::at(Coord { x, y })
    }

    #[test]
    fn xy_examples() {
        assert_eq!(route(r(0, 0), r(2, 0)), Ok(Port::East));
        assert_eq!(route(r(0, 0), r(0, 2)), Ok(Port::North));
        assert_eq!(route(r(1, 1), r(1, 1)), Ok(Port::Local));
        assert_eq!(route(RouterId(12), r(0, 0)), Err(TopologyError::UnknownRouter(12)));
    }

    #[test]
    fn baseline_numbering() {
        let m = SystemMap::BASELINE;
        assert_eq!(m.chiplet_router(0), RouterId(72));
        assert_eq!(m.attachment(RouterId(72)), Attachment::Chiplet(0));
        let mut chiplets = 0;
        let mut mcs = 0;
        for i in 0..MESH_ROUTERS {
            match m.attachment(RouterId::from_index(i)) {
                Attachment::Chiplet(c) => {
                    assert_eq!(m.chiplet_router(c), RouterId::from_index(i));
                    chiplets += 1;
                }
                Attachment::MemoryController(k) => {
                    assert_eq!(m.mc_router(k), RouterId::from_index(i));
                    mcs += 1;
                }
                Attachment::None => {}
            }
        }
        assert_eq!((chiplets, mcs), (8, 4));
        assert_eq!(m.cores_of(0), 0..=7);
        assert_eq!(m.chiplet_of(NodeId(12)), Some(1));
        assert_eq!(m.chiplet_of(NodeId(64)), None);
        assert_eq!(m.home_of(0xc0), NodeId::mc(3));
    }

    #[test]
    fn desk_scale_leaves_routers_unattached() {
        let m = SystemMap::new(2, 2).unwrap();
        assert_eq!(m.chiplet_of(NodeId(3)), Some(1));
        assert_eq!(m.chiplet_of(NodeId(4)), None);
        assert_eq!(m.attachment(m.chiplet_router(1)), Attachment::Chiplet(1));
        assert_eq!(m.attachment(RouterId::at(Coord { x: 2, y: 0 })), Attachment::None);
        assert!(SystemMap::new(9, 1).is_err());
    }
}
